//! Bounded explicit-state exploration and random instance generation.
//!
//! The oracle is the ground truth for differential tests. It runs a
//! breadth-first search over configurations using the concrete semantics of
//! [`crate::model`], enforcing the mode restrictions on the fly:
//!
//! * ordered mode filters consuming steps inside [`Stepper`];
//! * phase mode carries the phase index and the stack consumed from in the
//!   current phase;
//! * scope mode carries the current context's stack index and stores round
//!   tags as ages (rounds elapsed since creation). Ages start at 1 for the
//!   initial configuration, new material has age 0 and every new round adds
//!   1, clipped at `ζ + 1`. A consuming step is allowed when the inspected
//!   age is at most `ζ`.
//!
//! A search is closed when it finishes without discarding any successor.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ecpds::FiniteLanguage;
use crate::hostack::{apply_op, Alphabet, Char, Elem, Stack, StackOp, Symbol, Tag};
use crate::model::{
    validate_rule, Configuration, Control, Ecpds, ExtRule, Mcpds, Mode, Rule, Run, RunStep, Stepper,
};
use crate::stackauto::{Membership, PAutomaton};

/// Limits of an exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExploreBounds {
    /// Maximum run length.
    pub max_steps: usize,
    /// Maximum tree size of any stack.
    pub max_size: u64,
    /// Maximum number of visited search states.
    pub max_configs: usize,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        ExploreBounds {
            max_steps: 64,
            max_size: 24,
            max_configs: 200_000,
        }
    }
}

/// Outcome of a bounded reachability query.
#[derive(Clone, Debug)]
pub enum OracleVerdict {
    Reachable(Run),
    UnreachableWithinBounds,
    UnreachableClosed,
}

impl OracleVerdict {
    pub fn is_reachable(&self) -> bool {
        matches!(self, OracleVerdict::Reachable(_))
    }

    /// `Some(true/false)` when the verdict is definitive.
    pub fn definitive(&self) -> Option<bool> {
        match self {
            OracleVerdict::Reachable(_) => Some(true),
            OracleVerdict::UnreachableClosed => Some(false),
            OracleVerdict::UnreachableWithinBounds => None,
        }
    }
}

/// Result of a full exploration.
#[derive(Clone, Debug)]
pub struct Exploration {
    /// Shortest witness per reached control.
    pub reached: HashMap<Control, Run>,
    pub closed: bool,
    pub states: usize,
}

impl Exploration {
    pub fn verdict(&self, q: Control) -> OracleVerdict {
        match self.reached.get(&q) {
            Some(r) => OracleVerdict::Reachable(r.clone()),
            None if self.closed => OracleVerdict::UnreachableClosed,
            None => OracleVerdict::UnreachableWithinBounds,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct SearchState {
    config: Configuration,
    /// Phase index (phase mode) or current context stack (scope mode).
    a: u32,
    /// Stack consumed from in the current phase, plus one; 0 for none.
    b: u32,
}

struct Node {
    state: SearchState,
    parent: Option<(usize, usize, Rule)>,
    depth: usize,
}

fn start_state(sys: &Mcpds, start: &Configuration) -> SearchState {
    let mut config = start.clone();
    if let Mode::Scope(_) = sys.mode {
        config.stacks = config.stacks.iter().map(|s| s.map_tags(&|_| 1)).collect();
    }
    let a = match sys.mode {
        Mode::Phase(_) => 1,
        _ => 0,
    };
    SearchState { config, a, b: 0 }
}

/// Mode-respecting successors of a search state.
fn successors(
    sys: &Mcpds,
    stepper: &Stepper<'_>,
    s: &SearchState,
) -> Vec<(usize, Rule, SearchState)> {
    let mut out = Vec::new();
    match sys.mode {
        Mode::Single | Mode::Ordered => {
            for succ in stepper.successors(&s.config, 0) {
                out.push((
                    succ.stack,
                    succ.rule,
                    SearchState {
                        config: succ.config,
                        a: 0,
                        b: 0,
                    },
                ));
            }
        }
        Mode::Phase(z) => {
            for succ in stepper.successors(&s.config, 0) {
                let (mut a, mut b) = (s.a, s.b);
                if succ.rule.is_consuming() {
                    let j = succ.stack as u32 + 1;
                    if b == 0 {
                        b = j;
                    } else if b != j {
                        a += 1;
                        b = j;
                    }
                }
                if a <= z {
                    out.push((
                        succ.stack,
                        succ.rule,
                        SearchState {
                            config: succ.config,
                            a,
                            b,
                        },
                    ));
                }
            }
        }
        Mode::Scope(zeta) => {
            let clip = zeta + 1;
            for i in 0..sys.num_stacks() {
                let new_round = (i as u32) < s.a;
                let base = if new_round {
                    let mut c = s.config.clone();
                    c.stacks = c
                        .stacks
                        .iter()
                        .map(|w| w.map_tags(&|t: Tag| (t + 1).min(clip)))
                        .collect();
                    c
                } else {
                    s.config.clone()
                };
                let single = Configuration {
                    control: base.control,
                    stacks: base.stacks.clone(),
                };
                for succ in stepper.successors(&single, 0) {
                    if succ.stack != i {
                        continue;
                    }
                    if let Some(age) = succ.consumed_round {
                        if age > zeta {
                            continue;
                        }
                    }
                    out.push((
                        i,
                        succ.rule,
                        SearchState {
                            config: succ.config,
                            a: i as u32,
                            b: 0,
                        },
                    ));
                }
            }
        }
    }
    out
}

/// Breadth-first exploration from `start` until every control is reached
/// or the space is exhausted. With `stop_at`, the search ends as soon as that
/// control is reached.
pub fn explore(
    sys: &Mcpds,
    start: &Configuration,
    bounds: ExploreBounds,
    stop_at: Option<Control>,
) -> Exploration {
    let stepper = Stepper::new(sys);
    let s0 = start_state(sys, start);
    let mut nodes = vec![Node {
        state: s0.clone(),
        parent: None,
        depth: 0,
    }];
    let mut seen: HashMap<SearchState, usize> = HashMap::new();
    seen.insert(s0, 0);
    let mut reached_at: HashMap<Control, usize> = HashMap::new();
    reached_at.insert(start.control, 0);
    let mut queue = VecDeque::from([0usize]);
    let mut closed = true;
    while let Some(i) = queue.pop_front() {
        if stop_at.is_some_and(|q| reached_at.contains_key(&q)) {
            break;
        }
        let depth = nodes[i].depth;
        let succs = successors(sys, &stepper, &nodes[i].state);
        if depth >= bounds.max_steps {
            if !succs.is_empty() {
                closed = false;
            }
            continue;
        }
        for (stack, rule, st) in succs {
            if st.config.stacks.iter().any(|w| w.size() > bounds.max_size) {
                closed = false;
                continue;
            }
            if seen.contains_key(&st) {
                continue;
            }
            if nodes.len() >= bounds.max_configs {
                closed = false;
                continue;
            }
            let j = nodes.len();
            reached_at.entry(st.config.control).or_insert(j);
            seen.insert(st.clone(), j);
            nodes.push(Node {
                state: st,
                parent: Some((i, stack, rule)),
                depth: depth + 1,
            });
            queue.push_back(j);
        }
    }
    if stop_at.is_some_and(|q| reached_at.contains_key(&q)) && !queue.is_empty() {
        closed = false;
    }
    let reached = reached_at
        .into_iter()
        .map(|(q, j)| (q, build_run(&nodes, j, start)))
        .collect();
    Exploration {
        reached,
        closed,
        states: nodes.len(),
    }
}

fn build_run(nodes: &[Node], mut j: usize, start: &Configuration) -> Run {
    let mut steps = Vec::new();
    while let Some((p, stack, rule)) = nodes[j].parent {
        let c = &nodes[j].state.config;
        steps.push(RunStep {
            stack,
            rule,
            config: Configuration {
                control: c.control,
                stacks: c.stacks.iter().map(Stack::erase_tags).collect(),
            },
        });
        j = p;
    }
    steps.reverse();
    Run {
        start: start.clone(),
        steps,
    }
}

/// Bounded control-state reachability from `⟨q_in, ⊥_n, ..., ⊥_n⟩`.
pub fn check(sys: &Mcpds, q_in: Control, q_out: Control, bounds: ExploreBounds) -> OracleVerdict {
    let ex = explore(sys, &sys.initial(q_in), bounds, Some(q_out));
    ex.verdict(q_out)
}

/// Every well-formed order-`n` stack of tree size exactly `size`:
/// order-1 stacks end with a single `⊥`, inner sequences are nonempty and
/// characters other than `⊥` may carry annotations of order `2..=n`, which
/// may be empty.
pub struct StackEnumerator {
    n: u8,
    letters: Vec<Symbol>,
    memo: HashMap<(u8, u64, bool), Vec<Stack>>,
}

impl StackEnumerator {
    pub fn new(n: u8, alphabet: &Alphabet) -> StackEnumerator {
        StackEnumerator {
            n,
            letters: alphabet.letters().collect(),
            memo: HashMap::new(),
        }
    }

    /// Well-formed order-`k` stacks of size `size`.
    pub fn stacks(&mut self, k: u8, size: u64) -> Vec<Stack> {
        self.seqs(k, size, true)
    }

    /// All well-formed order-n stacks of size at most `max`.
    pub fn up_to(&mut self, max: u64) -> Vec<Stack> {
        (1..=max).flat_map(|s| self.stacks(self.n, s)).collect()
    }

    /// Sequences of order `k` with total size `size` (including the empty
    /// node). `nonempty` demands at least one entry.
    fn seqs(&mut self, k: u8, size: u64, nonempty: bool) -> Vec<Stack> {
        if let Some(v) = self.memo.get(&(k, size, nonempty)) {
            return v.clone();
        }
        let mut out = Vec::new();
        if k == 1 {
            // The bottom symbol is the last entry; chars above it.
            if nonempty {
                if size == 2 {
                    out.push(Stack::bottom(1));
                } else if size > 2 {
                    for cs in 1..size - 1 {
                        let tails = self.seqs(1, size - cs, true);
                        if tails.is_empty() {
                            continue;
                        }
                        for c in self.chars(cs) {
                            for t in &tails {
                                out.push(Stack::cons(Elem::Char(c.clone()), t).unwrap());
                            }
                        }
                    }
                }
            } else if size == 1 {
                out.push(Stack::empty(1));
            }
        } else if size == 1 {
            if !nonempty {
                out.push(Stack::empty(k));
            }
        } else {
            for es in 1..size {
                let elems = self.seqs(k - 1, es, true);
                if elems.is_empty() {
                    continue;
                }
                let rest_size = size - es;
                let mut tails = self.seqs(k, rest_size, true);
                if rest_size == 1 {
                    tails.push(Stack::empty(k));
                }
                for e in &elems {
                    for t in &tails {
                        out.push(Stack::cons(Elem::Stack(e.clone(), 0), t).unwrap());
                    }
                }
            }
        }
        self.memo.insert((k, size, nonempty), out.clone());
        out
    }

    /// Non-bottom characters of size `size`.
    fn chars(&mut self, size: u64) -> Vec<Char> {
        let mut out = Vec::new();
        if size == 1 {
            out.extend(self.letters.iter().map(|a| Char::plain(*a)));
            return out;
        }
        for j in 2..=self.n {
            let mut anns = self.seqs(j, size - 1, true);
            if size - 1 == 1 {
                anns.push(Stack::empty(j));
            }
            for u in &anns {
                for a in &self.letters {
                    out.push(Char::annotated(*a, u.clone()));
                }
            }
        }
        out
    }
}

/// Configurations of a single-stack system with a bounded run into `L(a0)`.
#[derive(Clone, Debug)]
pub struct PrestarOracle {
    /// Enumerated configurations (size at most the enumeration bound) with
    /// their verdicts.
    pub verdicts: Vec<(Control, Stack, bool)>,
    /// True when no successor was discarded.
    pub closed: bool,
}

/// Enumerates every configuration with stack size at most `enum_size` and
/// decides, within `bounds`, whether it reaches `L(a0)`.
pub fn prestar_oracle(
    order: u8,
    alphabet: &Alphabet,
    num_controls: usize,
    rules: &[Rule],
    a0: &PAutomaton,
    enum_size: u64,
    bounds: ExploreBounds,
) -> PrestarOracle {
    let mut en = StackEnumerator::new(order, alphabet);
    let stacks = en.up_to(enum_size);
    let starts: Vec<(Control, Stack)> = (0..num_controls as u32)
        .flat_map(|q| stacks.iter().map(move |w| (Control(q), w.clone())))
        .collect();
    let succ = |q: Control, w: &Stack| -> Vec<(Control, Stack)> {
        let Ok(top) = w.top_char() else {
            return Vec::new();
        };
        rules
            .iter()
            .filter(|r| r.src == q && r.letter == top.symbol)
            .filter_map(|r| crate::hostack::apply_op(r.op, w).ok().map(|s| (r.dst, s)))
            .collect()
    };
    backward_closure(starts, &succ, a0, bounds)
}

/// As [`prestar_oracle`] for an extended system, using its concrete step.
pub fn prestar_oracle_extended(
    sys: &Ecpds,
    a0: &PAutomaton,
    enum_size: u64,
    bounds: ExploreBounds,
) -> PrestarOracle {
    let mut en = StackEnumerator::new(sys.order, &sys.alphabet);
    let stacks = en.up_to(enum_size);
    let starts: Vec<(Control, Stack)> = (0..sys.controls.len() as u32)
        .flat_map(|q| stacks.iter().map(move |w| (Control(q), w.clone())))
        .collect();
    let succ = |q: Control, w: &Stack| crate::model::ecpds_step(sys, q, w).unwrap_or_default();
    backward_closure(starts, &succ, a0, bounds)
}

/// Concrete one-step successors of a single-stack configuration.
type Successors<'a> = dyn Fn(Control, &Stack) -> Vec<(Control, Stack)> + 'a;

fn backward_closure(
    starts: Vec<(Control, Stack)>,
    succ: &Successors<'_>,
    a0: &PAutomaton,
    bounds: ExploreBounds,
) -> PrestarOracle {
    let mut index: HashMap<(Control, Stack), usize> = HashMap::new();
    let mut nodes: Vec<(Control, Stack)> = Vec::new();
    let mut depth: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for s in &starts {
        if !index.contains_key(s) {
            index.insert(s.clone(), nodes.len());
            queue.push_back(nodes.len());
            nodes.push(s.clone());
            depth.push(0);
        }
    }
    let mut edges: Vec<Vec<usize>> = Vec::new();
    let mut closed = true;
    while let Some(i) = queue.pop_front() {
        let (q, w) = nodes[i].clone();
        let mut out = Vec::new();
        let succs = succ(q, &w);
        if depth[i] >= bounds.max_steps && !succs.is_empty() {
            closed = false;
        } else {
            for s in succs {
                if s.1.size() > bounds.max_size {
                    closed = false;
                    continue;
                }
                let j = match index.get(&s) {
                    Some(&j) => j,
                    None => {
                        if nodes.len() >= bounds.max_configs {
                            closed = false;
                            continue;
                        }
                        let j = nodes.len();
                        index.insert(s.clone(), j);
                        nodes.push(s);
                        depth.push(depth[i] + 1);
                        queue.push_back(j);
                        j
                    }
                };
                out.push(j);
            }
        }
        if edges.len() <= i {
            edges.resize(i + 1, Vec::new());
        }
        edges[i] = out;
    }
    edges.resize(nodes.len(), Vec::new());
    let mut mem = Membership::new(&a0.aut);
    let mut good: Vec<bool> = nodes
        .iter()
        .map(|(q, w)| mem.accepts(a0.control_state(*q), w))
        .collect();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, es) in edges.iter().enumerate() {
        for &j in es {
            rev[j].push(i);
        }
    }
    let mut stack: Vec<usize> = (0..nodes.len()).filter(|&i| good[i]).collect();
    while let Some(j) = stack.pop() {
        for &i in &rev[j] {
            if !good[i] {
                good[i] = true;
                stack.push(i);
            }
        }
    }
    let verdicts = starts
        .iter()
        .map(|s| (s.0, s.1.clone(), good[index[s]]))
        .collect();
    PrestarOracle { verdicts, closed }
}

/// Shape of randomly generated systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Profile {
    pub order: u8,
    pub controls: usize,
    /// Letters other than `⊥`.
    pub letters: usize,
    pub stacks: usize,
    pub rules_per_stack: usize,
    pub mode: Mode,
    /// Controls form a DAG along generating rules other than `rew` and
    /// `noop`, so pushes are bounded and exploration closes.
    pub closed: bool,
}

impl Profile {
    /// A closed single-stack profile.
    pub fn closed_single(order: u8) -> Profile {
        Profile {
            order,
            controls: 4,
            letters: 2,
            stacks: 1,
            rules_per_stack: 7,
            mode: Mode::Single,
            closed: true,
        }
    }

    /// A closed two-stack profile in the given mode.
    pub fn closed_multi(order: u8, mode: Mode) -> Profile {
        Profile {
            order,
            controls: 4,
            letters: 2,
            stacks: 2,
            rules_per_stack: 5,
            mode,
            closed: true,
        }
    }
}

/// A reproducible random system.
pub fn gen_random_system(seed: u64, profile: Profile) -> Mcpds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = ["a", "b", "c", "d", "e"]
        .iter()
        .take(profile.letters)
        .map(|s| s.to_string())
        .collect();
    let alphabet = Alphabet::new(names).expect("valid letters");
    let controls: Vec<String> = (0..profile.controls).map(|i| format!("q{i}")).collect();
    let n = profile.order;
    let symbols: Vec<Symbol> = alphabet.symbols().collect();
    let letters: Vec<Symbol> = alphabet.letters().collect();
    let mut stacks = Vec::new();
    for _ in 0..profile.stacks {
        let mut rules = Vec::new();
        let mut attempts = 0;
        while rules.len() < profile.rules_per_stack && attempts < 1000 {
            attempts += 1;
            let op = match rng.gen_range(0..6) {
                0 => StackOp::Noop,
                1 => StackOp::Rew(*letters.choose(&mut rng).unwrap()),
                2 => StackOp::Push(*letters.choose(&mut rng).unwrap(), rng.gen_range(1..=n)),
                3 if n >= 2 => StackOp::Copy(rng.gen_range(2..=n)),
                4 => StackOp::Collapse(rng.gen_range(if n >= 2 { 2 } else { 1 }..=n)),
                _ => StackOp::Pop(rng.gen_range(1..=n)),
            };
            let letter = if rng.gen_bool(0.3) {
                Symbol::BOTTOM
            } else {
                *symbols.choose(&mut rng).unwrap()
            };
            let src = Control(rng.gen_range(0..profile.controls as u32));
            let dst = Control(rng.gen_range(0..profile.controls as u32));
            let r = Rule::new(src, letter, op, dst);
            if profile.closed {
                let ok = match op {
                    StackOp::Pop(_) | StackOp::Collapse(_) | StackOp::Rew(_) | StackOp::Noop => {
                        src <= dst
                    }
                    _ => src < dst,
                };
                if !ok {
                    continue;
                }
            }
            if validate_rule(&r, n, alphabet.len(), profile.controls).is_err() || rules.contains(&r)
            {
                continue;
            }
            rules.push(r);
        }
        rules.sort();
        stacks.push(rules);
    }
    Mcpds::new(alphabet, controls, n, stacks, profile.mode).expect("generated rules are valid")
}

/// A reproducible random system built around an executable script: a
/// random run of `profile.controls - 1` steps from `⟨q0, ⊥_n, ..., ⊥_n⟩`
/// moving through fresh controls, followed by `profile.rules_per_stack`
/// random noise rules per stack. Consuming steps are preferred when
/// available, so scripts interleave growth and consumption across stacks.
pub fn gen_scripted_system(seed: u64, profile: Profile) -> Mcpds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = ["a", "b", "c", "d", "e"]
        .iter()
        .take(profile.letters)
        .map(|s| s.to_string())
        .collect();
    let alphabet = Alphabet::new(names).expect("valid letters");
    let controls: Vec<String> = (0..profile.controls).map(|i| format!("q{i}")).collect();
    let n = profile.order;
    let letters: Vec<Symbol> = alphabet.letters().collect();
    let symbols: Vec<Symbol> = alphabet.symbols().collect();
    let mut stacks: Vec<Vec<Rule>> = vec![Vec::new(); profile.stacks];
    let mut config: Vec<Stack> = vec![Stack::bottom(n); profile.stacks];
    for i in 0..profile.controls.saturating_sub(1) {
        let s = rng.gen_range(0..profile.stacks);
        let w = &config[s];
        let top = w.top_char().expect("stacks stay nonempty").clone();
        let mut consuming = Vec::new();
        for k in 1..=n {
            if !(k == 1 && top.symbol.is_bottom()) && apply_op(StackOp::Pop(k), w).is_ok() {
                consuming.push(StackOp::Pop(k));
            }
            if apply_op(StackOp::Collapse(k), w).is_ok() {
                consuming.push(StackOp::Collapse(k));
            }
        }
        let mut generating = vec![StackOp::Noop];
        for &b in &letters {
            if !top.symbol.is_bottom() {
                generating.push(StackOp::Rew(b));
            }
            for k in 1..=n {
                generating.push(StackOp::Push(b, k));
            }
        }
        for k in 2..=n {
            generating.push(StackOp::Copy(k));
        }
        let op = if !consuming.is_empty() && rng.gen_bool(0.5) {
            *consuming.choose(&mut rng).unwrap()
        } else {
            *generating.choose(&mut rng).unwrap()
        };
        let next = apply_op(op, w).expect("chosen operations are defined");
        config[s] = next;
        let r = Rule::new(Control(i as u32), top.symbol, op, Control(i as u32 + 1));
        if !stacks[s].contains(&r) {
            stacks[s].push(r);
        }
    }
    for rules in stacks.iter_mut() {
        let mut added = 0;
        let mut attempts = 0;
        while added < profile.rules_per_stack && attempts < 1000 {
            attempts += 1;
            let op = match rng.gen_range(0..6) {
                0 => StackOp::Noop,
                1 => StackOp::Rew(*letters.choose(&mut rng).unwrap()),
                2 => StackOp::Push(*letters.choose(&mut rng).unwrap(), rng.gen_range(1..=n)),
                3 if n >= 2 => StackOp::Copy(rng.gen_range(2..=n)),
                4 => StackOp::Collapse(rng.gen_range(if n >= 2 { 2 } else { 1 }..=n)),
                _ => StackOp::Pop(rng.gen_range(1..=n)),
            };
            let letter = *symbols.choose(&mut rng).unwrap();
            let src = Control(rng.gen_range(0..profile.controls as u32));
            let dst = Control(rng.gen_range(0..profile.controls as u32));
            let ok = match op {
                StackOp::Pop(_) | StackOp::Collapse(_) | StackOp::Rew(_) | StackOp::Noop => {
                    src <= dst
                }
                _ => src < dst,
            };
            let r = Rule::new(src, letter, op, dst);
            if !ok
                || validate_rule(&r, n, alphabet.len(), profile.controls).is_err()
                || rules.contains(&r)
            {
                continue;
            }
            rules.push(r);
            added += 1;
        }
        rules.sort();
    }
    Mcpds::new(alphabet, controls, n, stacks, profile.mode).expect("generated rules are valid")
}

/// The set of controls reachable within bounds, for quick summaries.
pub fn reachable_controls(ex: &Exploration) -> HashSet<Control> {
    ex.reached.keys().copied().collect()
}

/// Helper: a rule universe of every generating rule over the given controls
/// and letters, used to enumerate transition-automaton edges in tests.
pub fn generating_rules(order: u8, alphabet: &Alphabet, controls: usize) -> Vec<Rule> {
    let mut ops = vec![StackOp::Noop];
    for b in alphabet.letters() {
        ops.push(StackOp::Rew(b));
        for k in 1..=order {
            ops.push(StackOp::Push(b, k));
        }
    }
    for k in 2..=order {
        ops.push(StackOp::Copy(k));
    }
    let mut out = Vec::new();
    for p in 0..controls as u32 {
        for q in 0..controls as u32 {
            for a in alphabet.symbols() {
                for &o in &ops {
                    let r = Rule::new(Control(p), a, o, Control(q));
                    if validate_rule(&r, order, alphabet.len(), controls).is_ok() {
                        out.push(r);
                    }
                }
            }
        }
    }
    out
}

/// A reproducible random extended system. With `word_len == 1` every
/// generating rule of a random closed system becomes an extended rule with
/// the singleton language of itself. With longer words the plain rules are
/// kept and extended rules over finite languages of chained generating
/// rules are added; successive letters of a word follow the top symbol the
/// previous operation leaves when it is known.
pub fn gen_ecpds_system(seed: u64, profile: Profile, word_len: usize) -> Ecpds {
    let base = gen_random_system(seed, profile);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = base.order;
    let rules = base.stacks[0].clone();
    let mut out = Ecpds {
        alphabet: base.alphabet.clone(),
        controls: base.controls.clone(),
        order: n,
        rules: Vec::new(),
        extended: Vec::new(),
    };
    if word_len == 1 {
        for r in rules {
            if r.is_consuming() {
                out.rules.push(r);
            } else {
                let lang = FiniteLanguage::new(format!("L{}", out.extended.len()), vec![vec![r]])
                    .expect("generating rule");
                out.extended.push(ExtRule {
                    src: r.src,
                    letter: r.letter,
                    lang: Arc::new(lang),
                    dst: r.dst,
                });
            }
        }
        return out;
    }
    out.rules = rules;
    let letters: Vec<Symbol> = base.alphabet.letters().collect();
    let symbols: Vec<Symbol> = base.alphabet.symbols().collect();
    let nc = profile.controls as u32;
    let random_op = |rng: &mut ChaCha8Rng| match rng.gen_range(0..4) {
        0 => StackOp::Noop,
        1 => StackOp::Rew(*letters.choose(rng).unwrap()),
        2 if n >= 2 => StackOp::Copy(rng.gen_range(2..=n)),
        _ => StackOp::Push(*letters.choose(rng).unwrap(), rng.gen_range(1..=n)),
    };
    for e in 0..3 {
        let src = Control(rng.gen_range(0..nc.saturating_sub(1).max(1)));
        let letter = *symbols.choose(&mut rng).unwrap();
        let dst = Control(rng.gen_range(src.0 + 1..nc.max(src.0 + 2)).min(nc - 1));
        let mut words = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let mut word = Vec::new();
            let mut q = src;
            let mut a = letter;
            for i in 0..word_len {
                let next = if i + 1 == word_len {
                    dst
                } else {
                    Control(rng.gen_range(q.0..=dst.0))
                };
                let mut op = random_op(&mut rng);
                if matches!(op, StackOp::Rew(_)) && a.is_bottom() {
                    op = StackOp::Noop;
                }
                let r = Rule::new(q, a, op, next);
                if validate_rule(&r, n, base.alphabet.len(), profile.controls).is_err() {
                    break;
                }
                a = match op {
                    StackOp::Push(b, _) | StackOp::Rew(b) => b,
                    _ => a,
                };
                q = next;
                word.push(r);
            }
            if word.len() == word_len {
                words.push(word);
            }
        }
        if words.is_empty() {
            continue;
        }
        let lang = FiniteLanguage::new(format!("W{e}"), words).expect("generating words");
        out.extended.push(ExtRule {
            src,
            letter,
            lang: Arc::new(lang),
            dst,
        });
    }
    out
}
