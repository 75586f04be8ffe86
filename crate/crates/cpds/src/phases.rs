//! Phase-bounded multi-stack CPDS.
//!
//! A phase is a segment of a run in which only one stack is consumed from;
//! the other stacks may still grow. The analysis runs backwards over the
//! phases, starting from the set of configurations with the target control
//! and arbitrary stacks. One backward phase with consuming stack `s` turns a
//! tuple `(q', A_1, ..., A_m)` into the tuples of its phase predecessors: a
//! single-stack product ([`PbCpds`]) models stack `s` and tracks the other
//! stacks through long-forms of their automata, and `pre*` of that product
//! yields the new automaton for stack `s` together with the initial
//! long-forms `t_j` of the other stacks. Stack `j` then gets `A_j` extended
//! by a fresh root whose only transition is `t_j`.

use std::collections::HashSet;

use thiserror::Error;

use crate::hostack::Stack;
use crate::model::{Configuration, Control, Mcpds, Mode, Rule};
use crate::ordered::{
    build_left, build_product, OrderedError, Product, HEADLESS, MAX_PRODUCT_CONTROLS,
};
use crate::regconf::{ConfigTuple, RegularConfigSet, StackLang};
use crate::saturate::{prestar, SaturationError};
use crate::stackauto::{LongForm, PAutomaton, StackAutomaton};

/// Largest number of tuples kept per phase.
pub const MAX_TUPLES: usize = 100_000;

/// Errors raised by the phase-bounded analysis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Product(#[from] OrderedError),
    #[error(transparent)]
    Saturation(#[from] SaturationError),
    #[error("more than {0} tuples in one phase")]
    CapExceeded(usize),
}

/// The product for one backward phase: stack `s` of the system with the
/// transition automata of the other stacks in the control. The last control
/// is the exit control, entered by `noop` from every exit pair.
#[derive(Clone, Debug)]
pub struct PbCpds {
    pub stack: usize,
    pub product: Product,
    pub sys: Mcpds,
    pub exit: Control,
}

fn headless(t: &LongForm) -> LongForm {
    LongForm {
        head: HEADLESS,
        ..t.clone()
    }
}

/// Builds the product for consuming stack `s` against the tuple `tau`,
/// whose control is the control at the end of the phase.
pub fn build_pbcpds(sys: &Mcpds, s: usize, tau: &ConfigTuple) -> Result<PbCpds, PhaseError> {
    let m = sys.num_stacks();
    let tracked: Vec<usize> = (0..m).filter(|j| *j != s).collect();
    let left = build_left(sys, vec![s], tracked.clone());
    let mut exits: Vec<Vec<LongForm>> = vec![Vec::new()];
    for &j in &tracked {
        let l = &tau.stacks[j];
        let lfs: Vec<LongForm> = l.aut.long_forms(l.init).iter().map(headless).collect();
        exits = exits
            .into_iter()
            .flat_map(|v| {
                lfs.iter().map(move |t| {
                    let mut v = v.clone();
                    v.push(t.clone());
                    v
                })
            })
            .collect();
    }
    let exits: Vec<(Control, Vec<LongForm>)> =
        exits.into_iter().map(|b| (tau.control, b)).collect();
    let auts: Vec<&StackAutomaton> = tracked
        .iter()
        .map(|&j| tau.stacks[j].aut.as_ref())
        .collect();
    let product = build_product(sys, &left, &auts, exits, MAX_PRODUCT_CONTROLS)?;
    let mut psys = product.sys.clone();
    let exit = psys.add_control("exit#");
    for e in 0..product.exits {
        for a in sys.alphabet.symbols() {
            psys.stacks[0].push(Rule::new(
                Control(e as u32),
                a,
                crate::hostack::StackOp::Noop,
                exit,
            ));
        }
    }
    psys.mode = Mode::Single;
    Ok(PbCpds {
        stack: s,
        product,
        sys: psys,
        exit,
    })
}

/// The tuples of configurations that reach `tau` within one phase whose
/// consuming stack is `s`.
pub fn phase_step(
    sys: &Mcpds,
    s: usize,
    tau: &ConfigTuple,
) -> Result<Vec<ConfigTuple>, PhaseError> {
    let n = sys.order;
    let pb = build_pbcpds(sys, s, tau)?;
    if pb.product.exits == 0 {
        return Ok(Vec::new());
    }
    let mut target = PAutomaton::new(n, sys.alphabet.len(), pb.sys.num_controls());
    let ls = &tau.stacks[s];
    let off = target.aut.embed(&ls.aut);
    let init = crate::stackauto::StateId(ls.init.0 + off);
    target
        .aut
        .copy_transitions(init, target.control_state(pb.exit));
    let res = prestar(&pb.sys.stacks[0], &target)?;
    let nonempty = res.aut.nonempty_states();
    let mut out = Vec::new();
    let tracked: Vec<usize> = (0..sys.num_stacks()).filter(|j| *j != s).collect();
    for (pi, (p, bodies)) in pb.product.pairs.iter().enumerate() {
        let st = res.control_state(Control(pi as u32));
        if !nonempty[st.index()] {
            continue;
        }
        let mut stacks: Vec<Option<StackLang>> = vec![None; sys.num_stacks()];
        stacks[s] = Some(StackLang::restricted(&res.aut, st));
        for (slot, &j) in tracked.iter().enumerate() {
            let mut aut = (*tau.stacks[j].aut).clone();
            let root = aut.add_state(n, false);
            aut.add_long_form(&LongForm {
                head: root,
                ..bodies[slot].clone()
            });
            stacks[j] = Some(StackLang::restricted(&aut, root));
        }
        out.push(ConfigTuple {
            control: *p,
            stacks: stacks
                .into_iter()
                .map(|l| l.expect("every stack set"))
                .collect(),
        });
    }
    Ok(out)
}

fn tuple_key(t: &ConfigTuple) -> (Control, Vec<(crate::stackauto::AutomatonDoc, u32)>) {
    (
        t.control,
        t.stacks
            .iter()
            .map(|l| (l.aut.to_doc(), l.init.0))
            .collect(),
    )
}

/// Counters of a phase-bounded analysis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhaseStats {
    /// Number of tuples after each backward phase, last phase first.
    pub tuples: Vec<usize>,
}

/// Runs `z` backward phases from `⟨q_out, *, ..., *⟩`. With `stop`, the
/// iteration ends as soon as the configuration is covered.
fn backward(
    sys: &Mcpds,
    z: u32,
    q_out: Control,
    stop: Option<&Configuration>,
) -> Result<(RegularConfigSet, PhaseStats), PhaseError> {
    let n = sys.order;
    let letters = sys.alphabet.len();
    let m = sys.num_stacks();
    let mut set = RegularConfigSet::empty(n, m, letters);
    set.tuples.push(ConfigTuple {
        control: q_out,
        stacks: vec![StackLang::universal(n, letters); m],
    });
    let mut stats = PhaseStats::default();
    for _ in 0..z {
        if let Some(c) = stop {
            if set.member(c).unwrap_or(false) {
                break;
            }
        }
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for tau in &set.tuples {
            for s in 0..m {
                for t in phase_step(sys, s, tau)? {
                    if seen.insert(tuple_key(&t)) {
                        next.push(t);
                        if next.len() > MAX_TUPLES {
                            return Err(PhaseError::CapExceeded(MAX_TUPLES));
                        }
                    }
                }
            }
        }
        set.tuples = next;
        stats.tuples.push(set.tuples.len());
    }
    Ok((set, stats))
}

/// Is `q_out` reachable from `⟨q_in, ⊥_n, ..., ⊥_n⟩` within `z` phases?
pub fn phase_reachability(
    sys: &Mcpds,
    z: u32,
    q_in: Control,
    q_out: Control,
) -> Result<bool, PhaseError> {
    let start = Configuration {
        control: q_in,
        stacks: vec![Stack::bottom(sys.order); sys.num_stacks()],
    };
    let (set, _) = backward(sys, z, q_out, Some(&start))?;
    Ok(set.member(&start).expect("arity matches"))
}

/// All configurations from which `q_out` is reachable within `z` phases.
pub fn phase_global(sys: &Mcpds, z: u32, q_out: Control) -> Result<RegularConfigSet, PhaseError> {
    phase_global_with_stats(sys, z, q_out).map(|(s, _)| s)
}

pub fn phase_global_with_stats(
    sys: &Mcpds,
    z: u32,
    q_out: Control,
) -> Result<(RegularConfigSet, PhaseStats), PhaseError> {
    let (mut set, stats) = backward(sys, z, q_out, None)?;
    set.prune();
    Ok((set, stats))
}
