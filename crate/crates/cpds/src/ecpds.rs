//! Saturation for extended CPDS.
//!
//! An extended rule `(q, a, L, q')` applies a whole word of generating rules
//! in one step. Saturation handles it through transition automata: their
//! states are long-form transitions and `t1 -r-> t2` holds when `t1` is
//! derived from `t2` by rule `r`. For every long-form `t'` of the automaton
//! headed by `q'`, every `t` headed by `q` reading `a` with a run `t -w-> t'`
//! for some `w ∈ L` is added. Transition automata are never materialised:
//! each [`LanguageHandle`] answers the batch query "all admissible `t` for
//! this `t'`" directly.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::hostack::Symbol;
use crate::model::{Control, Ecpds, Rule};
use crate::saturate::{
    auxsat_generating, optimizable, SaturationError, SaturationOptions, SaturationStats, Saturator,
};
use crate::stackauto::{LongForm, PAutomaton};

/// Errors raised by extended saturation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EcpdsError {
    #[error("language query failed: {0}")]
    LanguageQuery(String),
    #[error("invalid language: {0}")]
    InvalidLanguage(String),
    #[error(transparent)]
    Saturation(#[from] SaturationError),
}

/// A batch query against a transition automaton `T(A, t, t')` with `t'`
/// fixed: which long-forms `t` headed by `src` and reading `letter` admit a
/// run labelled by a word of the language?
pub struct HeadQuery<'a> {
    pub automaton: &'a PAutomaton,
    pub src: Control,
    pub letter: Symbol,
    pub target: &'a LongForm,
}

/// A language of generating-rule words used by an extended rule.
pub trait LanguageHandle: Send + Sync {
    fn name(&self) -> &str;

    /// All `t` with `L ∩ L(T(A, t, t')) ≠ ∅` for the query's `t'`.
    fn admissible_heads(&self, query: &HeadQuery<'_>) -> Result<Vec<LongForm>, EcpdsError>;

    /// The words of the language, when it is finite and explicit.
    fn words(&self) -> Option<&[Vec<Rule>]> {
        None
    }
}

/// A finite language given by its words. The empty word is not allowed.
#[derive(Clone, Debug)]
pub struct FiniteLanguage {
    name: String,
    words: Vec<Vec<Rule>>,
}

impl FiniteLanguage {
    pub fn new(
        name: impl Into<String>,
        words: Vec<Vec<Rule>>,
    ) -> Result<FiniteLanguage, EcpdsError> {
        let name = name.into();
        for w in &words {
            if w.is_empty() {
                return Err(EcpdsError::InvalidLanguage(format!(
                    "{name} contains the empty word"
                )));
            }
            if w.iter().any(Rule::is_consuming) {
                return Err(EcpdsError::InvalidLanguage(format!(
                    "{name} contains a consuming rule"
                )));
            }
        }
        Ok(FiniteLanguage { name, words })
    }
}

impl LanguageHandle for FiniteLanguage {
    fn name(&self) -> &str {
        &self.name
    }

    fn admissible_heads(&self, q: &HeadQuery<'_>) -> Result<Vec<LongForm>, EcpdsError> {
        let mut out = BTreeSet::new();
        for w in &self.words {
            let first = &w[0];
            if first.src != q.src || first.letter != q.letter {
                continue;
            }
            let mut cur = vec![q.target.clone()];
            for r in w.iter().rev() {
                let mut next = BTreeSet::new();
                for t in &cur {
                    next.extend(auxsat_generating(r, t, q.automaton));
                }
                cur = next.into_iter().collect();
                if cur.is_empty() {
                    break;
                }
            }
            out.extend(cur);
        }
        Ok(out.into_iter().collect())
    }

    fn words(&self) -> Option<&[Vec<Rule>]> {
        Some(&self.words)
    }
}

/// Edges `t1 -r-> t2` of the transition automaton entering `t2`, over the
/// given universe of generating rules.
pub fn ta_edges_into(t2: &LongForm, a: &PAutomaton, universe: &[Rule]) -> Vec<(Rule, LongForm)> {
    let mut out = Vec::new();
    for r in universe {
        if r.is_consuming() {
            continue;
        }
        for t1 in auxsat_generating(r, t2, a) {
            out.push((*r, t1));
        }
    }
    out
}

/// Options for extended saturation derived from the rules and any finite
/// languages; the optimized mode is used only when every word is explicit.
fn options_for(sys: &Ecpds, a0: &PAutomaton) -> SaturationOptions {
    let mut all = sys.rules.clone();
    let mut explicit = true;
    for e in &sys.extended {
        match e.lang.words() {
            Some(ws) => ws.iter().for_each(|w| all.extend_from_slice(w)),
            None => explicit = false,
        }
    }
    SaturationOptions {
        optimized: Some(explicit && optimizable(&all, a0)),
        ..Default::default()
    }
}

/// `pre*` of `L(a0)` under an extended system.
pub fn prestar_extended(sys: &Ecpds, a0: &PAutomaton) -> Result<PAutomaton, EcpdsError> {
    prestar_extended_with(sys, a0, None).map(|(a, _)| a)
}

/// Extended saturation with explicit options.
pub fn prestar_extended_with(
    sys: &Ecpds,
    a0: &PAutomaton,
    opts: Option<SaturationOptions>,
) -> Result<(PAutomaton, SaturationStats), EcpdsError> {
    let opts = opts.unwrap_or_else(|| options_for(sys, a0));
    let mut sat = Saturator::new(&sys.rules, a0, opts)?;
    loop {
        sat.run()?;
        let mut derived = Vec::new();
        for e in &sys.extended {
            let a = sat.automaton();
            for t2 in a.aut.long_forms(a.control_state(e.dst)) {
                let q = HeadQuery {
                    automaton: a,
                    src: e.src,
                    letter: e.letter,
                    target: &t2,
                };
                derived.extend(e.lang.admissible_heads(&q)?);
            }
        }
        let mut added = false;
        for t in &derived {
            added |= sat.add(t)?;
        }
        if !added {
            break;
        }
    }
    let (a, stats) = sat.finish();
    a.aut
        .check_invariants()
        .map_err(SaturationError::Invariant)?;
    Ok((a, stats))
}
