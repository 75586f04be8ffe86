//! Scope-bounded multi-stack CPDS.
//!
//! A round runs a context on stack 1, then on stack 2, and so on up to
//! stack `m`; contexts may be empty. Under scope bound `ζ`, a character or
//! stack created in round `z'` may only be removed in rounds `z ≤ z' + ζ`;
//! material of the initial configuration counts as created in round 0 and
//! the run starts in round 1.
//!
//! The analysis runs backwards over rounds with layered stack automata. The
//! order-n states are `q_c^ℓ` for each control `c` and layer `ℓ`; a
//! transition from a layer-`ℓ` head reading `x` whose targets lie in layer
//! `ℓ + d` means `x` is removed `d` rounds later. [`shift`] moves every layer
//! up and discards the top layer, [`envmove`] links the end of a context to
//! the start of the same stack's context in the next round, and saturation
//! with the stack's rules adds the current context. Vertices of the
//! reachability graph describe one round; edges join consecutive rounds.
//!
//! Since removal up to `ζ` rounds after creation is allowed, distances
//! `0..=ζ` must be representable, so automata carry `ζ + 1` layers. For the
//! initial configuration, whose material dates from round 0, distances are
//! measured from round 1 and the top layer is cut off before acceptance.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::hostack::{Stack, Symbol};
use crate::model::{Configuration, Control, Mcpds, Rule};
use crate::regconf::{ConfigTuple, RegularConfigSet, StackLang};
use crate::saturate::{SaturationError, SaturationOptions, Saturator};
use crate::stackauto::{Canonical, NameTable, PAutomaton, StackAutomaton, StateId, StateSet};

/// Largest number of vertices explored.
pub const MAX_VERTICES: usize = 200_000;

/// Errors raised by the scope-bounded analysis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error(transparent)]
    Saturation(#[from] SaturationError),
    #[error("more than {0} vertices in the reachability graph")]
    VertexBudgetExceeded(usize),
    #[error("layered automaton has {states} states, above the ceiling {ceiling}")]
    CeilingExceeded { states: usize, ceiling: u64 },
    #[error("layering violated: {0}")]
    Layering(String),
}

/// A stack automaton whose order-n states are `q_c^ℓ`, laid out as
/// `(ℓ - 1) * controls + c`. Lower-order states are labels and inherit the
/// layer of their parent.
#[derive(Clone, Debug)]
pub struct LayeredAutomaton {
    pub aut: StackAutomaton,
    pub controls: usize,
    pub layers: u32,
}

impl LayeredAutomaton {
    /// An automaton with every `q_c^ℓ` and no transitions.
    pub fn new(order: u8, letters: usize, controls: usize, layers: u32) -> LayeredAutomaton {
        let mut aut = StackAutomaton::new(order, letters);
        for _ in 0..controls * layers as usize {
            aut.add_state(order, false);
        }
        LayeredAutomaton {
            aut,
            controls,
            layers,
        }
    }

    pub fn state(&self, c: Control, layer: u32) -> StateId {
        assert!(layer >= 1 && layer <= self.layers);
        StateId(((layer - 1) as usize * self.controls + c.index()) as u32)
    }

    fn is_house(&self, q: StateId) -> bool {
        q.index() < self.controls * self.layers as usize
    }

    /// The layer of a state: its own for `q_c^ℓ`, its parent's for labels.
    pub fn layer(&self, q: StateId) -> Option<u32> {
        if self.is_house(q) {
            return Some((q.index() / self.controls) as u32 + 1);
        }
        let (p, _) = self.aut.parents(q).first()?;
        self.layer(*p)
    }

    /// Accepts every stack from `q_c^1`, with empty target sets.
    pub fn accept_all(&mut self, c: Control) {
        let mut cur = self.state(c, 1);
        for _ in 2..=self.aut.order() {
            cur = self.aut.ensure_hi(cur, StateSet::empty()).0;
        }
        for a in 0..self.aut.letters() as u16 {
            self.aut
                .add_lo(cur, Symbol(a), StateSet::empty(), StateSet::empty());
        }
    }

    /// Removes states not reachable from the `q_c^ℓ`; the layout is kept.
    pub fn prune(&mut self) {
        let roots: Vec<StateId> = (0..self.controls * self.layers as usize)
            .map(|i| StateId(i as u32))
            .collect();
        let keep = self.aut.reachable(&roots);
        self.aut = self.aut.restrict_to(&keep).0;
    }

    /// Checks that labels share their parent's layer and that no transition
    /// leads into a lower layer.
    pub fn check_layering(&self) -> Result<(), String> {
        let layers: Vec<Option<u32>> = self.aut.states().map(|q| self.layer(q)).collect();
        for q in self.aut.states() {
            let Some(lq) = layers[q.index()] else {
                return Err(format!("state {} has no layer", q.0));
            };
            let below = |s: &StateSet| s.iter().any(|x| layers[x.index()].is_none_or(|lx| lx < lq));
            for (l, set) in self.aut.hi(q) {
                if layers[l.index()] != Some(lq) {
                    return Err(format!("label {} of {} changes layer", l.0, q.0));
                }
                if below(set) {
                    return Err(format!("transition from {} leads to a lower layer", q.0));
                }
            }
            for t in self.aut.lo(q) {
                if below(&t.targets) || below(&t.branch) {
                    return Err(format!("transition from {} leads to a lower layer", q.0));
                }
            }
        }
        Ok(())
    }

    /// The automaton without its top layer and every transition touching it.
    pub fn truncate(&self) -> LayeredAutomaton {
        self.remap(|l| (l < self.layers).then_some(l))
    }

    fn remap(&self, f: impl Fn(u32) -> Option<u32>) -> LayeredAutomaton {
        let mut out = LayeredAutomaton::new(
            self.aut.order(),
            self.aut.letters(),
            self.controls,
            self.layers,
        );
        let mut map: Vec<Option<StateId>> = vec![None; self.aut.num_states()];
        for q in self.aut.states() {
            let Some(l) = self.layer(q).and_then(&f) else {
                continue;
            };
            map[q.index()] = Some(if self.is_house(q) {
                out.state(Control((q.index() % self.controls) as u32), l)
            } else {
                out.aut
                    .add_state(self.aut.state_order(q), self.aut.is_final(q))
            });
        }
        let tr = |s: &StateSet| -> Option<StateSet> {
            s.iter()
                .map(|q| map[q.index()])
                .collect::<Option<Vec<_>>>()
                .map(StateSet::from_vec)
        };
        for q in self.aut.states() {
            let Some(nq) = map[q.index()] else { continue };
            for (l, set) in self.aut.hi(q) {
                if let (Some(nl), Some(ns)) = (map[l.index()], tr(set)) {
                    out.aut
                        .add_hi(nq, nl, ns)
                        .expect("labels keep a single parent");
                }
            }
            for t in self.aut.lo(q) {
                if let (Some(nb), Some(nt)) = (tr(&t.branch), tr(&t.targets)) {
                    out.aut.add_lo(nq, t.letter, nb, nt);
                }
            }
        }
        out.prune();
        out
    }

    /// Canonical description under the fixed naming of the `q_c^ℓ`.
    pub fn canonical(&self, table: &mut NameTable) -> Canonical {
        let houses = self.controls * self.layers as usize;
        self.aut
            .canonical(table, &|q| (q.index() < houses).then_some(q.0 as u64))
    }
}

/// Moves every state one layer up; the top layer and all transitions
/// touching it are deleted.
pub fn shift(a: &LayeredAutomaton) -> LayeredAutomaton {
    a.remap(|l| (l < a.layers).then_some(l + 1))
}

/// Gives `q_c^1` the transitions of `q_{c'}^2`, with fresh labels.
pub fn envmove(a: &mut LayeredAutomaton, c: Control, c2: Control) {
    let from = a.state(c2, 2.min(a.layers));
    let to = a.state(c, 1);
    a.aut.copy_transitions(from, to);
}

/// Saturation with the rules of one stack, using the layer-1 states as the
/// control states.
pub fn saturate_layer(
    rules: &[Rule],
    a: &LayeredAutomaton,
) -> Result<LayeredAutomaton, ScopeError> {
    let controls: Vec<StateId> = (0..a.controls)
        .map(|c| a.state(Control(c as u32), 1))
        .collect();
    let p = PAutomaton::from_parts(a.aut.clone(), controls);
    let mut sat = Saturator::new(rules, &p, SaturationOptions::default())?;
    sat.run()?;
    let mut out = LayeredAutomaton {
        aut: sat.finish().0.aut,
        controls: a.controls,
        layers: a.layers,
    };
    out.prune();
    Ok(out)
}

/// One more round in front of `a`: the context of this stack ends in `c`
/// and the next round's context on this stack starts in `c2`.
pub fn predecessor(
    rules: &[Rule],
    a: &LayeredAutomaton,
    c: Control,
    c2: Control,
) -> Result<LayeredAutomaton, ScopeError> {
    let mut s = shift(a);
    envmove(&mut s, c, c2);
    saturate_layer(rules, &s)
}

/// Ceiling on the number of states of a layered automaton with `layers`
/// layers over `controls` controls at order `n`. With the optimized mode
/// every order-n target set has at most one state.
pub fn sbmax(layers: u32, controls: usize, n: u8, optimized: bool) -> u64 {
    let c = layers as u64 * controls as u64;
    let pow2 = |x: u64| if x >= 63 { u64::MAX } else { 1u64 << x };
    let mut total = c;
    let mut prev = c;
    for k in (1..n).rev() {
        let per = if k == n - 1 && optimized {
            c.saturating_add(1)
        } else {
            pow2(prev)
        };
        let count = prev.saturating_mul(per);
        total = total.saturating_add(count);
        prev = count;
    }
    total
}

/// A vertex: controls `q_0..q_m` at the context switches of one round and
/// an automaton id per stack.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Vertex {
    pub controls: Vec<Control>,
    pub automata: Vec<usize>,
}

/// The explored reachability graph.
#[derive(Debug, Default)]
pub struct ReachGraph {
    pub vertices: Vec<Vertex>,
    /// `(earlier, later)` pairs of vertex indices.
    pub edges: Vec<(usize, usize)>,
    pub automata: Vec<LayeredAutomaton>,
    pub initial: usize,
}

struct Explorer<'a> {
    sys: &'a Mcpds,
    layers: u32,
    ceiling: u64,
    table: NameTable,
    interned: HashMap<(usize, Canonical), usize>,
    automata: Vec<LayeredAutomaton>,
    nonempty: Vec<Vec<bool>>,
    preds: HashMap<(usize, usize, Control, Control), usize>,
}

impl<'a> Explorer<'a> {
    fn intern(&mut self, stack: usize, a: LayeredAutomaton) -> Result<usize, ScopeError> {
        a.check_layering().map_err(ScopeError::Layering)?;
        if a.aut.num_states() as u64 > self.ceiling {
            return Err(ScopeError::CeilingExceeded {
                states: a.aut.num_states(),
                ceiling: self.ceiling,
            });
        }
        let key = (stack, a.canonical(&mut self.table));
        if let Some(&id) = self.interned.get(&key) {
            return Ok(id);
        }
        let id = self.automata.len();
        self.nonempty.push(a.aut.nonempty_states());
        self.automata.push(a);
        self.interned.insert(key, id);
        Ok(id)
    }

    fn admissible(&self, id: usize, c: Control) -> bool {
        let a = &self.automata[id];
        self.nonempty[id][a.state(c, 1).index()]
    }

    fn predecessor(
        &mut self,
        stack: usize,
        id: usize,
        c: Control,
        c2: Control,
    ) -> Result<usize, ScopeError> {
        if let Some(&r) = self.preds.get(&(stack, id, c, c2)) {
            return Ok(r);
        }
        let a = predecessor(&self.sys.stacks[stack], &self.automata[id], c, c2)?;
        let r = self.intern(stack, a)?;
        self.preds.insert((stack, id, c, c2), r);
        Ok(r)
    }

    /// All vertices whose automata come from `auto(i, q_i)` and that end in
    /// `last`. `auto` gives the automaton for stack `i` given `q_{i+1}`
    /// (0-based stacks, so the context on stack `i` ends in `q_{i+1}`).
    fn chains(
        &mut self,
        last: Control,
        auto: &mut dyn FnMut(&mut Self, usize, Control) -> Result<usize, ScopeError>,
    ) -> Result<Vec<Vertex>, ScopeError> {
        let m = self.sys.num_stacks();
        let q = self.sys.num_controls();
        let mut partial: Vec<(Vec<Control>, Vec<usize>)> = vec![(vec![last], Vec::new())];
        for i in (0..m).rev() {
            let mut next = Vec::new();
            for (cs, ids) in partial {
                let end = cs[0];
                let id = auto(self, i, end)?;
                for c in 0..q {
                    let c = Control(c as u32);
                    if self.admissible(id, c) {
                        let mut cs2 = vec![c];
                        cs2.extend_from_slice(&cs);
                        let mut ids2 = vec![id];
                        ids2.extend_from_slice(&ids);
                        next.push((cs2, ids2));
                    }
                }
            }
            partial = next;
        }
        Ok(partial
            .into_iter()
            .map(|(controls, automata)| Vertex { controls, automata })
            .collect())
    }
}

/// Predicate selecting a goal vertex.
pub type Goal<'a> = dyn Fn(&ReachGraph, &Vertex) -> bool + 'a;

/// Explores the reachability graph backwards from the initial vertices.
/// With `goal`, exploration stops at the first vertex satisfying it.
pub fn explore_graph(
    sys: &Mcpds,
    zeta: u32,
    q_out: Control,
    goal: Option<&Goal<'_>>,
) -> Result<(ReachGraph, Option<usize>), ScopeError> {
    let layers = zeta + 1;
    let n = sys.order;
    let letters = sys.alphabet.len();
    let optimized = sys
        .stacks
        .iter()
        .flatten()
        .all(|r| !matches!(r.op, crate::hostack::StackOp::Push(_, k) if k >= 2 && k == n));
    let mut ex = Explorer {
        sys,
        layers,
        ceiling: sbmax(layers, sys.num_controls(), n, optimized),
        table: NameTable::default(),
        interned: HashMap::new(),
        automata: Vec::new(),
        nonempty: Vec::new(),
        preds: HashMap::new(),
    };
    let mut init_ids: HashMap<(usize, Control), usize> = HashMap::new();
    let initial = ex.chains(q_out, &mut |ex, i, end| {
        if let Some(&id) = init_ids.get(&(i, end)) {
            return Ok(id);
        }
        let mut a = LayeredAutomaton::new(n, letters, sys.num_controls(), ex.layers);
        a.accept_all(end);
        let a = saturate_layer(&sys.stacks[i], &a)?;
        let id = ex.intern(i, a)?;
        init_ids.insert((i, end), id);
        Ok(id)
    })?;
    let mut graph = ReachGraph {
        initial: initial.len(),
        ..Default::default()
    };
    let mut index: HashMap<Vertex, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for v in initial {
        if !index.contains_key(&v) {
            index.insert(v.clone(), graph.vertices.len());
            queue.push_back(graph.vertices.len());
            graph.vertices.push(v);
        }
    }
    graph.initial = graph.vertices.len();
    let mut found = None;
    while let Some(vi) = queue.pop_front() {
        if let Some(g) = goal {
            graph.automata = ex.automata.clone();
            if g(&graph, &graph.vertices[vi]) {
                found = Some(vi);
                break;
            }
        }
        let later = graph.vertices[vi].clone();
        let preds = ex.chains(later.controls[0], &mut |ex, i, end| {
            ex.predecessor(i, later.automata[i], end, later.controls[i])
        })?;
        for v in preds {
            let id = match index.get(&v) {
                Some(&id) => id,
                None => {
                    if graph.vertices.len() >= MAX_VERTICES {
                        return Err(ScopeError::VertexBudgetExceeded(MAX_VERTICES));
                    }
                    let id = graph.vertices.len();
                    index.insert(v.clone(), id);
                    graph.vertices.push(v);
                    queue.push_back(id);
                    id
                }
            };
            graph.edges.push((id, vi));
        }
    }
    graph.automata = ex.automata;
    Ok((graph, found))
}

/// The tuple of configurations described by a vertex: control `q_0` and,
/// per stack, the truncated automaton from `q_{q_{i-1}}^1`.
pub fn vertex_tuple(graph: &ReachGraph, v: &Vertex) -> ConfigTuple {
    let stacks = v
        .automata
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let t = graph.automata[id].truncate();
            let q = t.state(v.controls[i], 1);
            StackLang::restricted(&t.aut, q)
        })
        .collect();
    ConfigTuple {
        control: v.controls[0],
        stacks,
    }
}

/// Is `q_out` reachable from `⟨q_in, ⊥_n, ..., ⊥_n⟩` under scope bound `ζ`?
pub fn scope_reachability(
    sys: &Mcpds,
    zeta: u32,
    q_in: Control,
    q_out: Control,
) -> Result<bool, ScopeError> {
    let start = Configuration {
        control: q_in,
        stacks: vec![Stack::bottom(sys.order); sys.num_stacks()],
    };
    let goal =
        |g: &ReachGraph, v: &Vertex| v.controls[0] == q_in && vertex_tuple(g, v).accepts(&start);
    let (_, found) = explore_graph(sys, zeta, q_out, Some(&goal))?;
    Ok(found.is_some())
}

/// All configurations from which `q_out` is reachable under scope bound `ζ`.
pub fn scope_global(
    sys: &Mcpds,
    zeta: u32,
    q_out: Control,
) -> Result<RegularConfigSet, ScopeError> {
    let (graph, _) = explore_graph(sys, zeta, q_out, None)?;
    Ok(graph_set(sys, &graph))
}

/// The union of the tuples of every vertex of an explored graph.
pub fn graph_set(sys: &Mcpds, graph: &ReachGraph) -> RegularConfigSet {
    let mut out = RegularConfigSet::empty(sys.order, sys.num_stacks(), sys.alphabet.len());
    for v in &graph.vertices {
        out.push(vertex_tuple(graph, v))
            .expect("tuples have the system's arity");
    }
    out.prune();
    out
}
