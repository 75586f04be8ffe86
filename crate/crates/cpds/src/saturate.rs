//! Backward saturation computing `pre*` of a regular set of configurations
//! for a single-stack CPDS.
//!
//! Starting from a P-automaton `A_0`, long-form transitions derived by the
//! auxiliary saturation functions are added until a fixpoint is reached.
//! Consuming rules (`pop_k`, `collapse_k`) add transitions depending only on
//! the automaton; generating rules add transitions derived from an existing
//! long-form transition `t` whose head is the state of the rule's target
//! control.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::hostack::{StackOp, Symbol};
use crate::model::{Control, Rule};
use crate::stackauto::{LongForm, PAutomaton, StackAutomaton, StateId, StateSet};

/// Errors raised by saturation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SaturationError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("saturation exceeded its cap: {0}")]
    CapExceeded(String),
    #[error("optimized mode produced a transition with more than one order-n target")]
    OptimizedViolation,
    #[error("automaton invariant violated: {0}")]
    Invariant(String),
}

/// Order in which derived transitions are processed.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Strategy {
    /// FIFO worklist of new long-form transitions with full re-scans until
    /// nothing changes.
    #[default]
    Worklist,
    /// Jacobi iteration: every round applies all rules to a snapshot.
    Naive,
}

/// Saturation settings.
#[derive(Clone, Copy, Debug)]
pub struct SaturationOptions {
    pub strategy: Strategy,
    /// `None` selects the optimized mode when [`optimizable`] holds.
    pub optimized: Option<bool>,
    pub max_transitions: usize,
}

impl Default for SaturationOptions {
    fn default() -> Self {
        SaturationOptions {
            strategy: Strategy::Worklist,
            optimized: None,
            max_transitions: 2_000_000,
        }
    }
}

/// Counters reported by a saturation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct SaturationStats {
    pub rounds: usize,
    pub processed: usize,
    pub transitions_added: usize,
    pub optimized: bool,
}

/// True when every order-n transition of `a0` has at most one target and
/// no rule is an order-n push of order at least 2. Under these conditions
/// every derived transition keeps at most one order-n target.
pub fn optimizable(rules: &[Rule], a0: &PAutomaton) -> bool {
    let n = a0.order();
    let aut = &a0.aut;
    let small = aut.states_of_order(n).all(|q| {
        if n == 1 {
            aut.lo(q).iter().all(|t| t.targets.len() <= 1)
        } else {
            aut.hi(q).iter().all(|(_, s)| s.len() <= 1)
        }
    });
    small
        && !rules
            .iter()
            .any(|r| matches!(r.op, StackOp::Push(_, k) if k == n && n >= 2))
}

/// Ceiling on the number of states reachable by saturation: order-n states
/// are fixed, and order-(k-1) labels are bounded by one per pair of an
/// order-k state and a set of order-k states.
pub fn state_ceiling(a0: &PAutomaton) -> u64 {
    let n = a0.order();
    let mut per_order: Vec<u64> = (1..=n)
        .map(|k| a0.aut.states_of_order(k).count() as u64)
        .collect();
    for k in (2..=n as usize).rev() {
        let c = per_order[k - 1];
        let pow = if c >= 63 { u64::MAX } else { 1u64 << c };
        per_order[k - 2] = per_order[k - 2].saturating_add(c.saturating_mul(pow));
    }
    per_order.iter().fold(0u64, |a, b| a.saturating_add(*b))
}

/// Transitions added for a consuming rule.
pub fn auxsat_consuming(r: &Rule, a: &PAutomaton) -> Vec<LongForm> {
    let n = a.order();
    let head = a.control_state(r.src);
    let dst = a.control_state(r.dst);
    let mut out = Vec::new();
    match r.op {
        StackOp::Pop(k) => {
            for p in a.aut.prefixes(dst, k) {
                let mut targets = p.targets;
                targets[k as usize - 1] = StateSet::singleton(p.end);
                out.push(LongForm {
                    head,
                    letter: r.letter,
                    branch: StateSet::empty(),
                    targets,
                });
            }
        }
        StackOp::Collapse(k) if k == n => out.push(LongForm {
            head,
            letter: r.letter,
            branch: StateSet::singleton(dst),
            targets: vec![StateSet::empty(); n as usize],
        }),
        StackOp::Collapse(k) => {
            for p in a.aut.prefixes(dst, k) {
                out.push(LongForm {
                    head,
                    letter: r.letter,
                    branch: StateSet::singleton(p.end),
                    targets: p.targets,
                });
            }
        }
        _ => {}
    }
    out
}

/// Transitions added for a consuming rule of order `k < n` by the
/// `k`-prefix of the single long-form `t` (whose head is the rule's target
/// state).
fn auxsat_consuming_from(r: &Rule, t: &LongForm, a: &PAutomaton) -> Option<LongForm> {
    let n = a.order();
    let (k, is_pop) = match r.op {
        StackOp::Pop(k) if k < n => (k, true),
        StackOp::Collapse(k) if k < n => (k, false),
        _ => return None,
    };
    let mut q = t.head;
    let mut targets = vec![StateSet::empty(); n as usize];
    for j in (k + 1..=n).rev() {
        q = a.aut.label(q, t.target(j))?;
        targets[j as usize - 1] = t.target(j).clone();
    }
    let head = a.control_state(r.src);
    Some(if is_pop {
        targets[k as usize - 1] = StateSet::singleton(q);
        LongForm {
            head,
            letter: r.letter,
            branch: StateSet::empty(),
            targets,
        }
    } else {
        LongForm {
            head,
            letter: r.letter,
            branch: StateSet::singleton(q),
            targets,
        }
    })
}

/// The letter a long-form must read to trigger a generating rule.
pub fn trigger_letter(r: &Rule) -> Symbol {
    match r.op {
        StackOp::Rew(b) | StackOp::Push(b, _) => b,
        _ => r.letter,
    }
}

/// Transitions added for a generating rule and a long-form `t` headed by
/// the rule's target control.
pub fn auxsat_generating(r: &Rule, t: &LongForm, a: &PAutomaton) -> Vec<LongForm> {
    if t.head != a.control_state(r.dst) {
        return Vec::new();
    }
    derive_generating(r, t, &a.aut, a.control_state(r.src))
}

/// The generating-rule calculus on long-forms of any stack automaton: the
/// long-forms derived from `t` by `r`, with `head` as their head. The head
/// of `t` is not inspected.
pub fn derive_generating(
    r: &Rule,
    t: &LongForm,
    aut: &StackAutomaton,
    head: StateId,
) -> Vec<LongForm> {
    if t.letter != trigger_letter(r) {
        return Vec::new();
    }
    let n = aut.order();
    let mut out = Vec::new();
    match r.op {
        StackOp::Noop | StackOp::Rew(_) => out.push(LongForm {
            head,
            letter: r.letter,
            branch: t.branch.clone(),
            targets: t.targets.clone(),
        }),
        StackOp::Copy(k) => {
            for (br, tg) in aut.set_long_forms(t.target(k), k, r.letter) {
                let branch = t.branch.union(&br);
                if !branch.is_empty() && aut.set_order(&branch).is_none() {
                    continue;
                }
                let mut targets = t.targets.clone();
                for j in 1..k {
                    targets[j as usize - 1] = targets[j as usize - 1].union(&tg[j as usize - 1]);
                }
                targets[k as usize - 1] = tg[k as usize - 1].clone();
                out.push(LongForm {
                    head,
                    letter: r.letter,
                    branch,
                    targets,
                });
            }
        }
        StackOp::Push(_, k) => {
            if k == 1 {
                if !t.branch.is_empty() {
                    return out;
                }
            } else if !t.branch.is_empty() && aut.set_order(&t.branch) != Some(k) {
                return out;
            }
            for (br, tg) in aut.set_long_forms(t.target(1), 1, r.letter) {
                let mut targets = t.targets.clone();
                targets[0] = tg[0].clone();
                if k >= 2 {
                    targets[k as usize - 1] = targets[k as usize - 1].union(&t.branch);
                }
                out.push(LongForm {
                    head,
                    letter: r.letter,
                    branch: br,
                    targets,
                });
            }
        }
        StackOp::Pop(_) | StackOp::Collapse(_) => {}
    }
    debug_assert!(out.iter().all(|x| x.targets.len() == n as usize));
    out
}

/// One Jacobi step: `A` plus every transition derived from `A`.
pub fn satstep(rules: &[Rule], a: &PAutomaton) -> (PAutomaton, usize) {
    let derived = derive_all(rules, a);
    let mut next = a.clone();
    let mut added = 0;
    for t in &derived {
        if next.aut.add_long_form(t).1 {
            added += 1;
        }
    }
    (next, added)
}

fn derive_all(rules: &[Rule], a: &PAutomaton) -> Vec<LongForm> {
    let mut out = Vec::new();
    let mut lf_cache: HashMap<Control, Vec<LongForm>> = HashMap::new();
    for r in rules {
        if r.is_consuming() {
            out.extend(auxsat_consuming(r, a));
        } else {
            let lfs = lf_cache
                .entry(r.dst)
                .or_insert_with(|| a.aut.long_forms(a.control_state(r.dst)));
            for t in lfs.iter() {
                out.extend(auxsat_generating(r, t, a));
            }
        }
    }
    out
}

/// Incremental saturation engine. Extended saturation drives it by adding
/// transitions between calls to [`Saturator::run`].
pub struct Saturator {
    rules: Vec<Rule>,
    by_dst: HashMap<Control, Vec<usize>>,
    a: PAutomaton,
    opts: SaturationOptions,
    optimized: bool,
    queue: VecDeque<LongForm>,
    stats: SaturationStats,
    ceiling: u64,
}

impl Saturator {
    pub fn new(
        rules: &[Rule],
        a0: &PAutomaton,
        opts: SaturationOptions,
    ) -> Result<Saturator, SaturationError> {
        a0.check_precondition()
            .map_err(SaturationError::Precondition)?;
        a0.aut
            .check_invariants()
            .map_err(SaturationError::Invariant)?;
        let nc = a0.num_controls() as u32;
        let n = a0.order();
        for r in rules {
            if r.src.0 >= nc || r.dst.0 >= nc || r.op.check_order(n).is_err() {
                return Err(SaturationError::Precondition(
                    "rule does not match the automaton".into(),
                ));
            }
        }
        let auto_opt = optimizable(rules, a0);
        let optimized = match opts.optimized {
            None => auto_opt,
            Some(true) if !auto_opt => {
                return Err(SaturationError::Precondition(
                    "optimized mode requested for a system outside its scope".into(),
                ))
            }
            Some(b) => b,
        };
        let mut by_dst: HashMap<Control, Vec<usize>> = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            by_dst.entry(r.dst).or_default().push(i);
        }
        Ok(Saturator {
            rules: rules.to_vec(),
            by_dst,
            a: a0.clone(),
            opts,
            optimized,
            queue: VecDeque::new(),
            stats: SaturationStats {
                optimized,
                ..Default::default()
            },
            ceiling: state_ceiling(a0),
        })
    }

    pub fn automaton(&self) -> &PAutomaton {
        &self.a
    }

    pub fn stats(&self) -> SaturationStats {
        self.stats
    }

    pub fn finish(self) -> (PAutomaton, SaturationStats) {
        (self.a, self.stats)
    }

    /// Adds a long-form transition; new long-forms through it headed by
    /// control states are queued.
    pub fn add(&mut self, t: &LongForm) -> Result<bool, SaturationError> {
        let n = self.a.order();
        if self.optimized && t.target(n).len() > 1 {
            return Err(SaturationError::OptimizedViolation);
        }
        if self.a.aut.has_long_form(t) {
            return Ok(false);
        }
        let (q1, new) = self.a.aut.add_long_form(t);
        debug_assert!(new);
        self.stats.transitions_added += 1;
        if self.a.aut.num_transitions() > self.opts.max_transitions {
            return Err(SaturationError::CapExceeded(format!(
                "{} transitions",
                self.a.aut.num_transitions()
            )));
        }
        if self.a.aut.num_states() as u64 > self.ceiling {
            return Err(SaturationError::CapExceeded(format!(
                "{} states above the ceiling {}",
                self.a.aut.num_states(),
                self.ceiling
            )));
        }
        if self.opts.strategy == Strategy::Worklist {
            let tr = crate::stackauto::Trans1 {
                letter: t.letter,
                branch: t.branch.clone(),
                targets: t.target(1).clone(),
            };
            for lf in self.a.aut.long_forms_through(q1, &tr) {
                if self.a.control_of(lf.head).is_some() {
                    self.queue.push_back(lf);
                }
            }
        }
        Ok(true)
    }

    /// Saturates to a fixpoint.
    pub fn run(&mut self) -> Result<(), SaturationError> {
        match self.opts.strategy {
            Strategy::Worklist => self.run_worklist(),
            Strategy::Naive => self.run_naive(),
        }
    }

    fn run_naive(&mut self) -> Result<(), SaturationError> {
        loop {
            self.stats.rounds += 1;
            let derived = derive_all(&self.rules, &self.a);
            let mut added = false;
            for t in &derived {
                added |= self.add(t)?;
            }
            if !added {
                return Ok(());
            }
        }
    }

    fn run_worklist(&mut self) -> Result<(), SaturationError> {
        loop {
            self.stats.rounds += 1;
            let mut added = false;
            for t in derive_all(&self.rules, &self.a) {
                added |= self.add(&t)?;
            }
            while let Some(t) = self.queue.pop_front() {
                self.stats.processed += 1;
                let Some(c) = self.a.control_of(t.head) else {
                    continue;
                };
                let idx = self.by_dst.get(&c).cloned().unwrap_or_default();
                for i in idx {
                    let r = self.rules[i];
                    let derived = if r.is_consuming() {
                        auxsat_consuming_from(&r, &t, &self.a).into_iter().collect()
                    } else {
                        auxsat_generating(&r, &t, &self.a)
                    };
                    for d in derived {
                        added |= self.add(&d)?;
                    }
                }
            }
            if !added {
                return Ok(());
            }
        }
    }
}

/// `pre*` of `L(a0)` under `rules`.
pub fn prestar(rules: &[Rule], a0: &PAutomaton) -> Result<PAutomaton, SaturationError> {
    prestar_with(rules, a0, SaturationOptions::default()).map(|(a, _)| a)
}

/// `pre*` with explicit options, also returning statistics.
pub fn prestar_with(
    rules: &[Rule],
    a0: &PAutomaton,
    opts: SaturationOptions,
) -> Result<(PAutomaton, SaturationStats), SaturationError> {
    let mut s = Saturator::new(rules, a0, opts)?;
    s.run()?;
    let (a, stats) = s.finish();
    a.aut
        .check_invariants()
        .map_err(SaturationError::Invariant)?;
    Ok((a, stats))
}
