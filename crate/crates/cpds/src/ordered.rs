//! Ordered multi-stack CPDS.
//!
//! In an ordered system a consuming operation on stack `i` requires stacks
//! `< i` to be `⊥_n`. Reachability is decided by induction on the number of
//! stacks. The last stack is handled by an extended CPDS ([`RightCpds`]):
//! its plain rules are the rules of the last stack, and every excursion
//! into the lower stacks, which starts with a rule reading `⊥` on a lower
//! stack and ends once the lower stacks are `⊥_n` again, is an extended
//! rule. During an excursion the last stack only sees generating rules. The
//! words of an excursion are produced by a system on the lower stacks
//! ([`LeftCpda`]) and language queries are answered by a product of that
//! system with the transition automaton of the current saturation, solved
//! recursively.
//!
//! Product controls pair a control with long-forms ("bodies") of the tracked
//! stacks. Bodies carry no meaningful head: the head is implied by the
//! control and stored as [`HEADLESS`].

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::hostack::{Stack, StackOp, Symbol};
use crate::model::{with_clearing, Control, Mcpds, Mode, ModelError, Rule};
use crate::regconf::{ConfigTuple, RegularConfigSet, StackLang};
use crate::saturate::{derive_generating, SaturationError, SaturationOptions, Saturator};
use crate::stackauto::{LongForm, Membership, PAutomaton, StackAutomaton, StateId, Target};

/// Placeholder head of product bodies.
pub const HEADLESS: StateId = StateId(u32::MAX);

/// Largest number of product controls built for one query.
pub const MAX_PRODUCT_CONTROLS: usize = 200_000;

/// Errors raised by the ordered algorithms.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderedError {
    #[error(transparent)]
    Saturation(#[from] SaturationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("product exceeded {0} controls")]
    CapExceeded(usize),
    #[error("target automaton has {found} controls, expected {expected}")]
    TargetMismatch { expected: usize, found: usize },
}

/// A rule of the left system. `stack` is a position among the kept stacks.
/// Rules with an output stand for a generating rule of the tracked stack at
/// the given position and act as `noop` on the first kept stack; rules
/// without an output are rules of the kept stacks and leave the tracked
/// stacks unchanged.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LeftRule {
    pub stack: usize,
    pub src: Control,
    pub letter: Symbol,
    pub op: StackOp,
    pub dst: Control,
    pub output: Option<(usize, Rule)>,
}

/// A system on the kept stacks that records the generating rules of the
/// tracked stacks as outputs.
#[derive(Clone, Debug)]
pub struct LeftCpda {
    pub kept: Vec<usize>,
    pub tracked: Vec<usize>,
    pub rules: Vec<LeftRule>,
}

/// The left system on the first `keep` stacks, tracking the others.
pub fn build_leftcpda(sys: &Mcpds, keep: usize) -> LeftCpda {
    assert!(keep >= 1 && keep < sys.num_stacks());
    build_left(sys, (0..keep).collect(), (keep..sys.num_stacks()).collect())
}

/// The left system for arbitrary disjoint sets of kept and tracked stacks.
pub fn build_left(sys: &Mcpds, kept: Vec<usize>, tracked: Vec<usize>) -> LeftCpda {
    assert!(!kept.is_empty());
    let mut rules = Vec::new();
    for (pos, &i) in kept.iter().enumerate() {
        for r in &sys.stacks[i] {
            rules.push(LeftRule {
                stack: pos,
                src: r.src,
                letter: r.letter,
                op: r.op,
                dst: r.dst,
                output: None,
            });
        }
    }
    for (slot, &j) in tracked.iter().enumerate() {
        for r in sys.stacks[j].iter().filter(|r| !r.is_consuming()) {
            for x in sys.alphabet.symbols() {
                rules.push(LeftRule {
                    stack: 0,
                    src: r.src,
                    letter: x,
                    op: StackOp::Noop,
                    dst: r.dst,
                    output: Some((slot, *r)),
                });
            }
        }
    }
    LeftCpda {
        kept,
        tracked,
        rules,
    }
}

/// An extended rule of the right system: from `src` with `letter` on top of
/// the last stack, run an excursion starting with `entry` on `entry_stack`.
/// The target control is chosen by the excursion.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RightExt {
    pub src: Control,
    pub letter: Symbol,
    pub entry: Rule,
    pub entry_stack: usize,
}

/// The extended system on the last stack.
#[derive(Clone, Debug)]
pub struct RightCpds {
    pub plain: Vec<Rule>,
    pub extended: Vec<RightExt>,
}

impl RightCpds {
    /// Distinct excursion entries.
    pub fn entries(&self) -> Vec<(usize, Rule)> {
        let mut v: Vec<(usize, Rule)> = self
            .extended
            .iter()
            .map(|e| (e.entry_stack, e.entry))
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn build_rightcpds(sys: &Mcpds) -> RightCpds {
    let m = sys.num_stacks();
    let mut plain = sys.stacks[m - 1].clone();
    let mut extended = Vec::new();
    for (i, rs) in sys.stacks.iter().enumerate().take(m - 1) {
        for r in rs.iter().filter(|r| r.letter.is_bottom()) {
            match r.op {
                StackOp::Noop => {
                    for x in sys.alphabet.symbols() {
                        plain.push(Rule::new(r.src, x, StackOp::Noop, r.dst));
                    }
                }
                StackOp::Push(..) | StackOp::Copy(_) => {
                    for x in sys.alphabet.symbols() {
                        extended.push(RightExt {
                            src: r.src,
                            letter: x,
                            entry: *r,
                            entry_stack: i,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    RightCpds { plain, extended }
}

fn headless(t: &LongForm) -> LongForm {
    LongForm {
        head: HEADLESS,
        ..t.clone()
    }
}

fn with_head(t: &LongForm, head: StateId) -> LongForm {
    LongForm { head, ..t.clone() }
}

/// Product of a left system with the transition automata of the tracked
/// stacks. Its controls are the pairs reachable backwards from the exits;
/// the first `exits` pairs are the exits.
#[derive(Clone, Debug)]
pub struct Product {
    pub sys: Mcpds,
    pub pairs: Vec<(Control, Vec<LongForm>)>,
    pub exits: usize,
}

/// The stack rule emitted by a left-automaton rule, if any.
type Output = Option<(usize, Rule)>;

pub fn build_product(
    sys: &Mcpds,
    left: &LeftCpda,
    tracked: &[&StackAutomaton],
    exits: Vec<(Control, Vec<LongForm>)>,
    cap: usize,
) -> Result<Product, OrderedError> {
    assert_eq!(tracked.len(), left.tracked.len());
    let mut groups: HashMap<(Control, Output), Vec<usize>> = HashMap::new();
    for (i, r) in left.rules.iter().enumerate() {
        groups.entry((r.dst, r.output)).or_default().push(i);
    }
    let mut by_dst: BTreeMap<Control, Vec<(Output, Vec<usize>)>> = BTreeMap::new();
    let mut keys: Vec<_> = groups.into_iter().collect();
    keys.sort_by_key(|((d, o), v)| (*d, *o, v[0]));
    for ((d, o), v) in keys {
        by_dst.entry(d).or_default().push((o, v));
    }

    let mut index: HashMap<(Control, Vec<LongForm>), usize> = HashMap::new();
    let mut pairs: Vec<(Control, Vec<LongForm>)> = Vec::new();
    for e in exits {
        if !index.contains_key(&e) {
            index.insert(e.clone(), pairs.len());
            pairs.push(e);
        }
    }
    let num_exits = pairs.len();
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let mut queue: VecDeque<usize> = (0..pairs.len()).collect();
    while let Some(pi) = queue.pop_front() {
        let (p2, bodies) = pairs[pi].clone();
        let Some(groups) = by_dst.get(&p2) else {
            continue;
        };
        for (output, rule_ids) in groups {
            let preds: Vec<Vec<LongForm>> = match output {
                None => vec![bodies.clone()],
                Some((slot, r)) => {
                    let slot = *slot;
                    derive_generating(r, &bodies[slot], tracked[slot], HEADLESS)
                        .into_iter()
                        .map(|b| {
                            let mut v = bodies.clone();
                            v[slot] = b;
                            v
                        })
                        .collect()
                }
            };
            for pb in preds {
                for &ri in rule_ids {
                    let key = (left.rules[ri].src, pb.clone());
                    let src = match index.get(&key) {
                        Some(&x) => x,
                        None => {
                            if pairs.len() >= cap {
                                return Err(OrderedError::CapExceeded(cap));
                            }
                            index.insert(key.clone(), pairs.len());
                            pairs.push(key);
                            queue.push_back(pairs.len() - 1);
                            pairs.len() - 1
                        }
                    };
                    edges.push((src, ri, pi));
                }
            }
        }
    }

    let mut stacks: Vec<Vec<Rule>> = vec![Vec::new(); left.kept.len()];
    for (src, ri, dst) in edges {
        let lr = &left.rules[ri];
        stacks[lr.stack].push(Rule::new(
            Control(src as u32),
            lr.letter,
            lr.op,
            Control(dst as u32),
        ));
    }
    for rs in &mut stacks {
        rs.sort();
        rs.dedup();
    }
    let controls = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, _))| format!("{}|{}", sys.control_name(*p), i))
        .collect();
    let mode = if stacks.len() == 1 {
        Mode::Single
    } else {
        Mode::Ordered
    };
    let psys = Mcpds::new(sys.alphabet.clone(), controls, sys.order, stacks, mode)?;
    Ok(Product {
        sys: psys,
        pairs,
        exits: num_exits,
    })
}

/// Configurations `⟨q, ⊥_n, ..., ⊥_n, w⟩` from which an ordered run reaches
/// some `⟨q', ⊥_n, ..., ⊥_n, w'⟩` with `⟨q', w'⟩ ∈ L(target)`, as a
/// P-automaton on the last stack.
pub fn ordered_prestar(sys: &Mcpds, target: &PAutomaton) -> Result<PAutomaton, OrderedError> {
    if target.num_controls() != sys.num_controls() {
        return Err(OrderedError::TargetMismatch {
            expected: sys.num_controls(),
            found: target.num_controls(),
        });
    }
    let m = sys.num_stacks();
    if m == 1 {
        return Ok(crate::saturate::prestar(&sys.stacks[0], target)?);
    }
    let n = sys.order;
    let right = build_rightcpds(sys);
    let entries = right.entries();
    let left = build_leftcpda(sys, m - 1);
    let mut sat = Saturator::new(&right.plain, target, SaturationOptions::default())?;
    loop {
        sat.run()?;
        if entries.is_empty() {
            break;
        }
        let a = sat.automaton();
        let mut exits = Vec::new();
        for q in 0..sys.num_controls() {
            let q = Control(q as u32);
            for t in a.aut.long_forms(a.control_state(q)) {
                exits.push((q, vec![headless(&t)]));
            }
        }
        let prod = build_product(sys, &left, &[&a.aut], exits, MAX_PRODUCT_CONTROLS)?;
        let mut psys = prod.sys.clone();
        let mut starts: Vec<(Control, LongForm)> = Vec::new();
        for (stack, r0) in &entries {
            for (pi, (p, bodies)) in prod.pairs.iter().enumerate() {
                if *p != r0.dst {
                    continue;
                }
                let t = with_head(&bodies[0], a.control_state(r0.src));
                if a.aut.has_long_form(&t) {
                    continue;
                }
                let s = psys.add_control(format!("start#{}", starts.len()));
                psys.stacks[*stack].push(Rule::new(s, Symbol::BOTTOM, r0.op, Control(pi as u32)));
                starts.push((s, t));
            }
        }
        if starts.is_empty() {
            break;
        }
        let mut ptarget = PAutomaton::new(n, sys.alphabet.len(), psys.num_controls());
        for e in 0..prod.exits {
            ptarget.add_target(Control(e as u32), Target::Empty);
        }
        let res = ordered_prestar(&psys, &ptarget)?;
        let accepted = Membership::new(&res.aut).accepting(&Stack::bottom(n));
        let mut added = false;
        for (s, t) in &starts {
            if accepted.binary_search(&res.control_state(*s)).is_ok() {
                added |= sat.add(t)?;
            }
        }
        if !added {
            break;
        }
    }
    Ok(sat.finish().0)
}

/// The target used for reachability: `q_out` with any stack contents,
/// realised by clearing the lower stacks after `q_out`.
fn clearing_target(sys: &Mcpds, q_out: Control) -> (Mcpds, PAutomaton) {
    let (s2, done) = with_clearing(sys, q_out);
    let mut target = PAutomaton::new(sys.order, sys.alphabet.len(), s2.num_controls());
    target.add_target(done, Target::Any);
    (s2, target)
}

/// Is `q_out` reachable from `⟨q_in, ⊥_n, ..., ⊥_n⟩` by an ordered run?
pub fn ordered_reachability(
    sys: &Mcpds,
    q_in: Control,
    q_out: Control,
) -> Result<bool, OrderedError> {
    let (s2, target) = clearing_target(sys, q_out);
    let a = ordered_prestar(&s2, &target)?;
    Ok(a.aut
        .accepts(a.control_state(q_in), &Stack::bottom(sys.order)))
}

/// All configurations from which `q_out` is reachable by an ordered run.
///
/// Level `m` covers configurations whose lower stacks are `⊥_n`. Level
/// `L < m` covers configurations whose first `L - 1` stacks are `⊥_n`: a
/// run from them first empties the first `L` stacks, while the stacks above
/// only see generating rules, tracked by bodies in a product.
pub fn ordered_global(sys: &Mcpds, q_out: Control) -> Result<RegularConfigSet, OrderedError> {
    let n = sys.order;
    let letters = sys.alphabet.len();
    let m = sys.num_stacks();
    let (s2, target) = clearing_target(sys, q_out);
    let top = ordered_prestar(&s2, &target)?;
    let bottom = StackLang::bottom(n, letters);
    let top_aut = Arc::new(top.aut.clone());
    let mut tuples: Vec<ConfigTuple> = Vec::new();
    for q in 0..s2.num_controls() {
        let q = Control(q as u32);
        let mut stacks = vec![bottom.clone(); m - 1];
        stacks.push(StackLang {
            aut: top_aut.clone(),
            init: top.control_state(q),
        });
        let t = ConfigTuple { control: q, stacks };
        if t.witness().is_some() {
            tuples.push(t);
        }
    }
    for keep in (1..m).rev() {
        let left = build_leftcpda(&s2, keep);
        let mut fresh = Vec::new();
        for tau in &tuples {
            let tracked: Vec<&StackAutomaton> =
                tau.stacks[keep..].iter().map(|l| l.aut.as_ref()).collect();
            let mut exits: Vec<Vec<LongForm>> = vec![Vec::new()];
            for l in &tau.stacks[keep..] {
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
            if exits.is_empty() {
                continue;
            }
            let prod = build_product(&s2, &left, &tracked, exits, MAX_PRODUCT_CONTROLS)?;
            let mut ptarget = PAutomaton::new(n, letters, prod.sys.num_controls());
            for e in 0..prod.exits {
                ptarget.add_target(Control(e as u32), Target::Empty);
            }
            let res = ordered_prestar(&prod.sys, &ptarget)?;
            let nonempty = res.aut.nonempty_states();
            for (pi, (p, bodies)) in prod.pairs.iter().enumerate() {
                let st = res.control_state(Control(pi as u32));
                if !nonempty[st.index()] {
                    continue;
                }
                let mut stacks = vec![bottom.clone(); keep - 1];
                stacks.push(StackLang::restricted(&res.aut, st));
                for (l, b) in tau.stacks[keep..].iter().zip(bodies) {
                    let mut aut = (*l.aut).clone();
                    let root = aut.add_state(n, false);
                    aut.add_long_form(&with_head(b, root));
                    stacks.push(StackLang::restricted(&aut, root));
                }
                fresh.push(ConfigTuple {
                    control: *p,
                    stacks,
                });
            }
        }
        tuples.extend(fresh);
    }
    let mut out = RegularConfigSet::empty(n, m, letters);
    for t in tuples {
        if t.control.index() < sys.num_controls() {
            out.push(t).expect("tuples have the system's arity");
        }
    }
    out.prune();
    Ok(out)
}
