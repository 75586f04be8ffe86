//! Order-n alternating stack automata.
//!
//! States are partitioned by order. An order-k state (k ≥ 2) has
//! transitions `q -q'-> Q` where the label `q'` is an order-(k-1) state
//! reading the top order-(k-1) stack and every state of `Q` reads the rest.
//! Order-1 transitions `q -a,B-> Q` read a character `a` whose annotation is
//! accepted from every state of the branch set `B`. An empty branch set
//! places no constraint on the annotation.
//!
//! For every `(q, Q)` at most one label exists; the automaton enforces this
//! by construction. A transition bundle from an order-n state down to order 1
//! is a [`LongForm`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::hostack::{Alphabet, Char, Elem, Stack, Symbol};
use crate::model::Control;

/// A state of a stack automaton.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A sorted, duplicate-free set of states.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct StateSet(Arc<[StateId]>);

impl StateSet {
    pub fn empty() -> StateSet {
        StateSet::default()
    }

    pub fn singleton(q: StateId) -> StateSet {
        StateSet(Arc::from(vec![q]))
    }

    pub fn from_vec(mut v: Vec<StateId>) -> StateSet {
        v.sort_unstable();
        v.dedup();
        StateSet(Arc::from(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[StateId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = StateId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, q: StateId) -> bool {
        self.0.binary_search(&q).is_ok()
    }

    pub fn union(&self, other: &StateSet) -> StateSet {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        StateSet::from_vec(self.iter().chain(other.iter()).collect())
    }

    pub fn is_subset_of_sorted(&self, sorted: &[StateId]) -> bool {
        self.iter().all(|q| sorted.binary_search(&q).is_ok())
    }

    pub fn map(&self, f: impl Fn(StateId) -> StateId) -> StateSet {
        StateSet::from_vec(self.iter().map(f).collect())
    }
}

impl Serialize for StateSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|q| q.0))
    }
}

impl<'de> Deserialize<'de> for StateSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Vec<u32> = Vec::deserialize(d)?;
        Ok(StateSet::from_vec(v.into_iter().map(StateId).collect()))
    }
}

impl FromIterator<StateId> for StateSet {
    fn from_iter<I: IntoIterator<Item = StateId>>(iter: I) -> Self {
        StateSet::from_vec(iter.into_iter().collect())
    }
}

/// An order-1 transition `q -letter,branch-> targets`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Trans1 {
    pub letter: Symbol,
    pub branch: StateSet,
    pub targets: StateSet,
}

/// A long-form transition `head -letter,branch-> (Q_1, ..., Q_k)` where `k`
/// is the order of `head`. `targets[i]` is `Q_{i+1}`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct LongForm {
    pub head: StateId,
    pub letter: Symbol,
    pub branch: StateSet,
    pub targets: Vec<StateSet>,
}

impl LongForm {
    /// `Q_k` for 1-based `k`.
    pub fn target(&self, k: u8) -> &StateSet {
        &self.targets[k as usize - 1]
    }
}

/// A chain of transitions from a state of order `m` down to a label of
/// order `k`: `end` is the order-k label and `targets[j-1]` holds `Q_j` for
/// `k < j ≤ m`; lower entries are empty.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Prefix {
    pub end: StateId,
    pub targets: Vec<StateSet>,
}

/// An order-n alternating stack automaton.
#[derive(Clone, Debug)]
pub struct StackAutomaton {
    order: u8,
    letters: u16,
    orders: Vec<u8>,
    finals: Vec<bool>,
    hi: Vec<Vec<(StateId, StateSet)>>,
    lo: Vec<Vec<Trans1>>,
    label_of: HashMap<(StateId, StateSet), StateId>,
    lo_index: HashSet<(StateId, Trans1)>,
    parents: Vec<Vec<(StateId, StateSet)>>,
    transitions: usize,
}

impl StackAutomaton {
    pub fn new(order: u8, letters: usize) -> StackAutomaton {
        assert!(order >= 1);
        StackAutomaton {
            order,
            letters: letters as u16,
            orders: Vec::new(),
            finals: Vec::new(),
            hi: Vec::new(),
            lo: Vec::new(),
            label_of: HashMap::new(),
            lo_index: HashSet::new(),
            parents: Vec::new(),
            transitions: 0,
        }
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn letters(&self) -> usize {
        self.letters as usize
    }

    pub fn num_states(&self) -> usize {
        self.orders.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.orders.len() as u32).map(StateId)
    }

    pub fn states_of_order(&self, k: u8) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(move |q| self.orders[q.index()] == k)
    }

    pub fn add_state(&mut self, order: u8, is_final: bool) -> StateId {
        assert!((1..=self.order).contains(&order));
        self.orders.push(order);
        self.finals.push(is_final);
        self.hi.push(Vec::new());
        self.lo.push(Vec::new());
        self.parents.push(Vec::new());
        StateId(self.orders.len() as u32 - 1)
    }

    pub fn state_order(&self, q: StateId) -> u8 {
        self.orders[q.index()]
    }

    pub fn is_final(&self, q: StateId) -> bool {
        self.finals[q.index()]
    }

    pub fn set_final(&mut self, q: StateId, f: bool) {
        self.finals[q.index()] = f;
    }

    /// Transitions `q -label-> Q` of an order-≥2 state.
    pub fn hi(&self, q: StateId) -> &[(StateId, StateSet)] {
        &self.hi[q.index()]
    }

    /// Transitions of an order-1 state.
    pub fn lo(&self, q: StateId) -> &[Trans1] {
        &self.lo[q.index()]
    }

    /// Pairs `(p, Q)` such that `p -q-> Q`.
    pub fn parents(&self, q: StateId) -> &[(StateId, StateSet)] {
        &self.parents[q.index()]
    }

    pub fn is_label(&self, q: StateId) -> bool {
        !self.parents[q.index()].is_empty()
    }

    /// The label of `(q, Q)`, if any.
    pub fn label(&self, q: StateId, targets: &StateSet) -> Option<StateId> {
        self.label_of.get(&(q, targets.clone())).copied()
    }

    /// The order shared by all members of a nonempty set, if homogeneous.
    pub fn set_order(&self, set: &StateSet) -> Option<u8> {
        let mut it = set.iter();
        let k = self.state_order(it.next()?);
        it.all(|q| self.state_order(q) == k).then_some(k)
    }

    fn check_set(&self, set: &StateSet, k: u8) {
        assert!(
            set.iter()
                .all(|q| q.index() < self.num_states() && self.state_order(q) == k),
            "target set of wrong order"
        );
    }

    /// Returns the label of `(q, Q)`, creating a fresh non-final label and
    /// the transition when absent. The flag reports creation.
    pub fn ensure_hi(&mut self, q: StateId, targets: StateSet) -> (StateId, bool) {
        if let Some(l) = self.label(q, &targets) {
            return (l, false);
        }
        let k = self.state_order(q);
        assert!(k >= 2, "order-1 states have no labelled transitions");
        let l = self.add_state(k - 1, false);
        self.add_hi(q, l, targets).expect("fresh label");
        (l, true)
    }

    /// Adds `q -label-> Q`. Fails when `(q, Q)` already has another label.
    pub fn add_hi(
        &mut self,
        q: StateId,
        label: StateId,
        targets: StateSet,
    ) -> Result<bool, String> {
        let k = self.state_order(q);
        assert!(
            k >= 2 && self.state_order(label) == k - 1,
            "label of wrong order"
        );
        self.check_set(&targets, k);
        match self.label_of.get(&(q, targets.clone())) {
            Some(&l) if l == label => return Ok(false),
            Some(_) => return Err("a label already exists for this source and target set".into()),
            None => {}
        }
        self.label_of.insert((q, targets.clone()), label);
        self.hi[q.index()].push((label, targets.clone()));
        self.parents[label.index()].push((q, targets));
        self.transitions += 1;
        Ok(true)
    }

    /// Adds `q -a,branch-> targets`; returns whether it is new.
    pub fn add_lo(
        &mut self,
        q: StateId,
        letter: Symbol,
        branch: StateSet,
        targets: StateSet,
    ) -> bool {
        assert_eq!(
            self.state_order(q),
            1,
            "order-1 transition from a higher-order state"
        );
        assert!((letter.0 as usize) < self.letters(), "letter out of range");
        self.check_set(&targets, 1);
        assert!(
            branch.is_empty() || self.set_order(&branch).is_some(),
            "inhomogeneous branch set"
        );
        let t = Trans1 {
            letter,
            branch,
            targets,
        };
        if !self.lo_index.insert((q, t.clone())) {
            return false;
        }
        self.lo[q.index()].push(t);
        self.transitions += 1;
        true
    }

    pub fn has_lo(&self, q: StateId, t: &Trans1) -> bool {
        self.lo_index.contains(&(q, t.clone()))
    }

    /// Materialises a long-form transition, reusing existing labels.
    /// Returns the order-1 state carrying the final transition and whether
    /// that transition is new.
    pub fn add_long_form(&mut self, t: &LongForm) -> (StateId, bool) {
        let m = self.state_order(t.head);
        assert_eq!(
            t.targets.len(),
            m as usize,
            "long-form length differs from head order"
        );
        let mut q = t.head;
        for k in (2..=m).rev() {
            q = self.ensure_hi(q, t.target(k).clone()).0;
        }
        let new = self.add_lo(q, t.letter, t.branch.clone(), t.target(1).clone());
        (q, new)
    }

    /// True when the long-form is already present.
    pub fn has_long_form(&self, t: &LongForm) -> bool {
        let m = self.state_order(t.head);
        let mut q = t.head;
        for k in (2..=m).rev() {
            match self.label(q, t.target(k)) {
                Some(l) => q = l,
                None => return false,
            }
        }
        self.has_lo(
            q,
            &Trans1 {
                letter: t.letter,
                branch: t.branch.clone(),
                targets: t.target(1).clone(),
            },
        )
    }

    /// Chains from `q` down to a label of order `k` (for `k = order(q)` the
    /// chain is `q` itself).
    pub fn prefixes(&self, q: StateId, k: u8) -> Vec<Prefix> {
        let m = self.state_order(q);
        assert!(k >= 1 && k <= m);
        let mut out = Vec::new();
        let mut targets = vec![StateSet::empty(); m as usize];
        self.prefixes_rec(q, k, &mut targets, &mut out);
        out
    }

    fn prefixes_rec(&self, q: StateId, k: u8, targets: &mut Vec<StateSet>, out: &mut Vec<Prefix>) {
        let j = self.state_order(q);
        if j == k {
            out.push(Prefix {
                end: q,
                targets: targets.clone(),
            });
            return;
        }
        for (l, set) in &self.hi[q.index()] {
            targets[j as usize - 1] = set.clone();
            self.prefixes_rec(*l, k, targets, out);
        }
        targets[j as usize - 1] = StateSet::empty();
    }

    /// All long-form transitions from `q`, in a deterministic order.
    pub fn long_forms(&self, q: StateId) -> Vec<LongForm> {
        let mut out = Vec::new();
        for p in self.prefixes(q, 1) {
            for t in &self.lo[p.end.index()] {
                let mut targets = p.targets.clone();
                targets[0] = t.targets.clone();
                out.push(LongForm {
                    head: q,
                    letter: t.letter,
                    branch: t.branch.clone(),
                    targets,
                });
            }
        }
        out
    }

    /// Long-form transitions from `q` reading `a`.
    pub fn long_forms_reading(&self, q: StateId, a: Symbol) -> Vec<LongForm> {
        let mut v = self.long_forms(q);
        v.retain(|t| t.letter == a);
        v
    }

    /// Every long-form transition through the order-1 transition `t` of `q1`,
    /// grouped by head. Heads are states without parents.
    pub fn long_forms_through(&self, q1: StateId, t: &Trans1) -> Vec<LongForm> {
        let mut out = Vec::new();
        let mut targets = vec![t.targets.clone()];
        self.up_rec(q1, t, &mut targets, &mut out);
        out
    }

    fn up_rec(&self, q: StateId, t: &Trans1, targets: &mut Vec<StateSet>, out: &mut Vec<LongForm>) {
        if !self.is_label(q) || self.state_order(q) == self.order {
            out.push(LongForm {
                head: q,
                letter: t.letter,
                branch: t.branch.clone(),
                targets: targets.clone(),
            });
        }
        for (p, set) in &self.parents[q.index()] {
            targets.push(set.clone());
            self.up_rec(*p, t, targets, out);
            targets.pop();
        }
    }

    /// Set long-form transitions `Q -a,B-> (Q_1..Q_k)` for a set of order-k
    /// states: one long-form per member, branch and target sets unioned.
    /// The empty set yields the single all-empty bundle. Inhomogeneous
    /// branch unions are dropped.
    pub fn set_long_forms(
        &self,
        set: &StateSet,
        k: u8,
        a: Symbol,
    ) -> Vec<(StateSet, Vec<StateSet>)> {
        let per: Vec<Vec<LongForm>> = set.iter().map(|q| self.long_forms_reading(q, a)).collect();
        let mut out = BTreeSet::new();
        let mut acc = (StateSet::empty(), vec![StateSet::empty(); k as usize]);
        self.product_rec(&per, 0, &mut acc, &mut out);
        out.into_iter().collect()
    }

    fn product_rec(
        &self,
        per: &[Vec<LongForm>],
        i: usize,
        acc: &mut (StateSet, Vec<StateSet>),
        out: &mut BTreeSet<(StateSet, Vec<StateSet>)>,
    ) {
        if i == per.len() {
            out.insert(acc.clone());
            return;
        }
        for t in &per[i] {
            let branch = acc.0.union(&t.branch);
            if !branch.is_empty() && self.set_order(&branch).is_none() {
                continue;
            }
            let saved = acc.clone();
            acc.0 = branch;
            for (j, s) in t.targets.iter().enumerate() {
                acc.1[j] = acc.1[j].union(s);
            }
            self.product_rec(per, i + 1, acc, out);
            *acc = saved;
        }
    }

    /// Membership of `w` (of order `order(q)`) in the language of `q`.
    pub fn accepts(&self, q: StateId, w: &Stack) -> bool {
        if w.order() != self.state_order(q) {
            return false;
        }
        Membership::new(self).accepting(w).binary_search(&q).is_ok()
    }

    /// Copies `other` into `self`; returns the offset added to its state ids.
    pub fn embed(&mut self, other: &StackAutomaton) -> u32 {
        assert_eq!(self.order, other.order);
        let off = self.num_states() as u32;
        let sh = |q: StateId| StateId(q.0 + off);
        for q in other.states() {
            self.add_state(other.state_order(q), other.is_final(q));
        }
        for q in other.states() {
            for (l, set) in &other.hi[q.index()] {
                self.add_hi(sh(q), sh(*l), set.map(sh))
                    .expect("disjoint copy");
            }
            for t in &other.lo[q.index()] {
                self.add_lo(sh(q), t.letter, t.branch.map(sh), t.targets.map(sh));
            }
        }
        off
    }

    /// A fresh state with the language of `q` and no incoming transitions.
    /// Labels below it are copied so the new state owns its chains.
    pub fn copy_root(&mut self, q: StateId) -> StateId {
        let r = self.add_state(self.state_order(q), self.is_final(q));
        self.copy_transitions(q, r);
        r
    }

    /// Adds to `to` copies of the transitions of `from`, with fresh copies
    /// of the labels below `from`.
    pub fn copy_transitions(&mut self, from: StateId, to: StateId) {
        for (l, set) in self.hi[from.index()].clone() {
            let l2 = self.add_state(self.state_order(l), self.is_final(l));
            self.copy_transitions(l, l2);
            self.add_hi(to, l2, set).expect("fresh source");
        }
        for t in self.lo[from.index()].clone() {
            self.add_lo(to, t.letter, t.branch, t.targets);
        }
    }

    /// A fresh state accepting `L(x) ∪ L(y)`.
    pub fn union_states(&mut self, x: StateId, y: StateId) -> StateId {
        let k = self.state_order(x);
        assert_eq!(
            k,
            self.state_order(y),
            "union of states of different orders"
        );
        let u = self.add_state(k, self.is_final(x) || self.is_final(y));
        let mut by_set: Vec<(StateSet, Vec<StateId>)> = Vec::new();
        for (l, set) in self.hi[x.index()].iter().chain(self.hi[y.index()].iter()) {
            match by_set.iter_mut().find(|(s, _)| s == set) {
                Some((_, ls)) => ls.push(*l),
                None => by_set.push((set.clone(), vec![*l])),
            }
        }
        for (set, ls) in by_set {
            let l = self.union_all(&ls);
            self.add_hi(u, l, set).expect("fresh source");
        }
        for t in self.lo[x.index()]
            .clone()
            .into_iter()
            .chain(self.lo[y.index()].clone())
        {
            self.add_lo(u, t.letter, t.branch, t.targets);
        }
        u
    }

    fn union_all(&mut self, ls: &[StateId]) -> StateId {
        if ls.len() == 1 {
            return self.copy_root(ls[0]);
        }
        let mut u = self.union_states(ls[0], ls[1]);
        for &l in &ls[2..] {
            u = self.union_states(u, l);
        }
        u
    }

    /// A fresh state accepting `L(x) ∩ L(y)`.
    pub fn intersect_states(&mut self, x: StateId, y: StateId) -> StateId {
        let mut memo = HashMap::new();
        self.intersect_rec(x, y, &mut memo)
    }

    fn intersect_rec(
        &mut self,
        x: StateId,
        y: StateId,
        memo: &mut HashMap<(StateId, StateId), StateId>,
    ) -> StateId {
        if let Some(&u) = memo.get(&(x, y)) {
            return self.copy_root(u);
        }
        let k = self.state_order(x);
        assert_eq!(
            k,
            self.state_order(y),
            "intersection of states of different orders"
        );
        let u = self.add_state(k, self.is_final(x) && self.is_final(y));
        let mut by_set: Vec<(StateSet, Vec<StateId>)> = Vec::new();
        for (lx, sx) in self.hi[x.index()].clone() {
            for (ly, sy) in self.hi[y.index()].clone() {
                let l = self.intersect_rec(lx, ly, memo);
                let set = sx.union(&sy);
                match by_set.iter_mut().find(|(s, _)| *s == set) {
                    Some((_, ls)) => ls.push(l),
                    None => by_set.push((set, vec![l])),
                }
            }
        }
        for (set, ls) in by_set {
            let l = if ls.len() == 1 {
                ls[0]
            } else {
                self.union_all(&ls)
            };
            self.add_hi(u, l, set).expect("fresh source");
        }
        for tx in self.lo[x.index()].clone() {
            for ty in self.lo[y.index()].clone() {
                if tx.letter != ty.letter {
                    continue;
                }
                let branch = tx.branch.union(&ty.branch);
                if !branch.is_empty() && self.set_order(&branch).is_none() {
                    continue;
                }
                self.add_lo(u, tx.letter, branch, tx.targets.union(&ty.targets));
            }
        }
        memo.insert((x, y), u);
        u
    }

    /// States reachable from `roots` through labels, targets and branches.
    pub fn reachable(&self, roots: &[StateId]) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut stack: Vec<StateId> = roots.to_vec();
        while let Some(q) = stack.pop() {
            if std::mem::replace(&mut seen[q.index()], true) {
                continue;
            }
            for (l, set) in &self.hi[q.index()] {
                stack.push(*l);
                stack.extend(set.iter());
            }
            for t in &self.lo[q.index()] {
                stack.extend(t.branch.iter());
                stack.extend(t.targets.iter());
            }
        }
        seen
    }

    /// The sub-automaton on the states marked `keep`, renumbered in order.
    /// Transitions touching dropped states are removed. Returns the map from
    /// old to new ids.
    pub fn restrict_to(&self, keep: &[bool]) -> (StackAutomaton, Vec<Option<StateId>>) {
        let mut out = StackAutomaton::new(self.order, self.letters());
        let mut map = vec![None; self.num_states()];
        for q in self.states() {
            if keep[q.index()] {
                map[q.index()] = Some(out.add_state(self.state_order(q), self.is_final(q)));
            }
        }
        let tr = |s: &StateSet| -> Option<StateSet> {
            s.iter()
                .map(|q| map[q.index()])
                .collect::<Option<Vec<_>>>()
                .map(StateSet::from_vec)
        };
        for q in self.states() {
            let Some(nq) = map[q.index()] else { continue };
            for (l, set) in &self.hi[q.index()] {
                if let (Some(nl), Some(ns)) = (map[l.index()], tr(set)) {
                    out.add_hi(nq, nl, ns).expect("injective renaming");
                }
            }
            for t in &self.lo[q.index()] {
                if let (Some(nb), Some(nt)) = (tr(&t.branch), tr(&t.targets)) {
                    out.add_lo(nq, t.letter, nb, nt);
                }
            }
        }
        (out, map)
    }

    /// The part of the automaton reachable from `q`, with `q` renumbered.
    pub fn restrict(&self, q: StateId) -> (StackAutomaton, StateId) {
        let keep = self.reachable(&[q]);
        let (a, map) = self.restrict_to(&keep);
        (a, map[q.index()].expect("root kept"))
    }

    /// Checks the at-most-one-label rule and set orders.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for q in self.states() {
            let k = self.state_order(q);
            for (l, set) in &self.hi[q.index()] {
                if !seen.insert((q, set.clone())) {
                    return Err(format!("two labels for state {} and one target set", q.0));
                }
                if k < 2
                    || self.state_order(*l) != k - 1
                    || set.iter().any(|s| self.state_order(s) != k)
                {
                    return Err(format!("order mismatch at state {}", q.0));
                }
            }
            for t in &self.lo[q.index()] {
                if k != 1 || t.targets.iter().any(|s| self.state_order(s) != 1) {
                    return Err(format!("order mismatch at state {}", q.0));
                }
                if !t.branch.is_empty() && self.set_order(&t.branch).is_none() {
                    return Err(format!("inhomogeneous branch at state {}", q.0));
                }
            }
        }
        Ok(())
    }

    /// Set-based nonemptiness: a witness stack accepted by every state of
    /// each queried set, when one exists. Sets are keyed by their order.
    pub fn joint_witnesses(&self, queries: &[(u8, StateSet)]) -> HashMap<(u8, StateSet), Stack> {
        let mut universe: Vec<(u8, StateSet)> = Vec::new();
        let mut in_universe: HashSet<(u8, StateSet)> = HashSet::new();
        for q in queries {
            if in_universe.insert(q.clone()) {
                universe.push(q.clone());
            }
        }
        let mut known: HashMap<(u8, StateSet), Stack> = HashMap::new();
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < universe.len() {
                let key = universe[i].clone();
                i += 1;
                if known.contains_key(&key) {
                    continue;
                }
                let mut wanted = Vec::new();
                if let Some(w) = self.derive_witness(&key, &known, &mut wanted) {
                    known.insert(key, w);
                    changed = true;
                }
                for w in wanted {
                    if in_universe.insert(w.clone()) {
                        universe.push(w);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        known
    }

    fn derive_witness(
        &self,
        key: &(u8, StateSet),
        known: &HashMap<(u8, StateSet), Stack>,
        wanted: &mut Vec<(u8, StateSet)>,
    ) -> Option<Stack> {
        let (k, set) = key;
        let k = *k;
        if set.iter().all(|q| self.is_final(q)) {
            return Some(Stack::empty(k));
        }
        let lookup = |order: u8, s: &StateSet, wanted: &mut Vec<(u8, StateSet)>| -> Option<Stack> {
            if s.is_empty() {
                return Some(Stack::empty(order));
            }
            let key = (order, s.clone());
            match known.get(&key) {
                Some(w) => Some(w.clone()),
                None => {
                    wanted.push(key);
                    None
                }
            }
        };
        if k >= 2 {
            let per: Vec<&[(StateId, StateSet)]> = set.iter().map(|q| self.hi(q)).collect();
            let mut choice = vec![0usize; per.len()];
            if per.iter().any(|p| p.is_empty()) {
                return None;
            }
            loop {
                let labels: StateSet = per.iter().zip(&choice).map(|(p, &c)| p[c].0).collect();
                let rest = per
                    .iter()
                    .zip(&choice)
                    .fold(StateSet::empty(), |acc, (p, &c)| acc.union(&p[c].1));
                let wl = lookup(k - 1, &labels, wanted);
                let wr = lookup(k, &rest, wanted);
                if let (Some(u), Some(v)) = (wl, wr) {
                    return Some(Stack::cons(Elem::Stack(u, 0), &v).expect("orders match"));
                }
                if !advance(
                    &mut choice,
                    &per.iter().map(|p| p.len()).collect::<Vec<_>>(),
                ) {
                    return None;
                }
            }
        }
        for a in 0..self.letters {
            let a = Symbol(a);
            let per: Vec<Vec<&Trans1>> = set
                .iter()
                .map(|q| self.lo(q).iter().filter(|t| t.letter == a).collect())
                .collect();
            if per.iter().any(|p| p.is_empty()) {
                continue;
            }
            let lens: Vec<usize> = per.iter().map(Vec::len).collect();
            let mut choice = vec![0usize; per.len()];
            loop {
                let branch = per
                    .iter()
                    .zip(&choice)
                    .fold(StateSet::empty(), |acc, (p, &c)| acc.union(&p[c].branch));
                let rest = per
                    .iter()
                    .zip(&choice)
                    .fold(StateSet::empty(), |acc, (p, &c)| acc.union(&p[c].targets));
                let bo = if branch.is_empty() {
                    Some(None)
                } else {
                    self.set_order(&branch).map(Some)
                };
                if let Some(bo) = bo {
                    let ann = match bo {
                        None => Some(None),
                        Some(o) => lookup(o, &branch, wanted).map(Some),
                    };
                    let wr = lookup(1, &rest, wanted);
                    if let (Some(ann), Some(v)) = (ann, wr) {
                        let c = match ann {
                            None => Char::plain(a),
                            Some(s) => Char::annotated(a, s),
                        };
                        return Some(Stack::cons(Elem::Char(c), &v).expect("orders match"));
                    }
                }
                if !advance(&mut choice, &lens) {
                    break;
                }
            }
        }
        None
    }

    /// States whose language is nonempty.
    pub fn nonempty_states(&self) -> Vec<bool> {
        let queries: Vec<(u8, StateSet)> = self
            .states()
            .map(|q| (self.state_order(q), StateSet::singleton(q)))
            .collect();
        let known = self.joint_witnesses(&queries);
        queries.iter().map(|q| known.contains_key(q)).collect()
    }

    /// A stack accepted from `q`, if any.
    pub fn witness(&self, q: StateId) -> Option<Stack> {
        let key = (self.state_order(q), StateSet::singleton(q));
        self.joint_witnesses(std::slice::from_ref(&key))
            .remove(&key)
    }

    /// Canonical description of the automaton under a structural naming:
    /// states given a base name keep it, labels are named after their
    /// (smallest) parent and target set. Names are interned in `table` so
    /// descriptions from one table compare by equality.
    pub fn canonical(
        &self,
        table: &mut NameTable,
        base: &dyn Fn(StateId) -> Option<u64>,
    ) -> Canonical {
        let mut names: Vec<Option<u32>> = vec![None; self.num_states()];
        for q in self.states() {
            if let Some(b) = base(q) {
                names[q.index()] = Some(table.intern(NameKey::Base(b)));
            }
        }
        for k in (1..=self.order).rev() {
            for q in self.states_of_order(k) {
                if names[q.index()].is_some() {
                    continue;
                }
                let mut best: Option<u32> = None;
                for (p, set) in &self.parents[q.index()] {
                    let (Some(pn), Some(sn)) = (
                        names[p.index()],
                        set.iter()
                            .map(|s| names[s.index()])
                            .collect::<Option<Vec<u32>>>(),
                    ) else {
                        continue;
                    };
                    let mut sn = sn;
                    sn.sort_unstable();
                    let id = table.intern(NameKey::Label(pn, sn.into()));
                    best = Some(best.map_or(id, |b| b.min(id)));
                }
                names[q.index()] = Some(
                    best.unwrap_or_else(|| table.intern(NameKey::Base(u64::MAX - q.0 as u64))),
                );
            }
        }
        let nm = |q: StateId| names[q.index()].expect("named");
        let ns = |s: &StateSet| -> Vec<u32> {
            let mut v: Vec<u32> = s.iter().map(nm).collect();
            v.sort_unstable();
            v
        };
        let mut c = Canonical::default();
        for q in self.states() {
            if self.is_final(q) {
                c.finals.insert(nm(q));
            }
            for (l, set) in &self.hi[q.index()] {
                c.hi.insert((nm(q), nm(*l), ns(set)));
            }
            for t in &self.lo[q.index()] {
                c.lo.insert((nm(q), t.letter.0, ns(&t.branch), ns(&t.targets)));
            }
        }
        c
    }

    /// Serializable description with transitions in a deterministic order.
    pub fn to_doc(&self) -> AutomatonDoc {
        let mut hi = Vec::new();
        let mut lo = Vec::new();
        for q in self.states() {
            let mut h: Vec<_> = self.hi[q.index()]
                .iter()
                .map(|(l, s)| (q.0, l.0, s.clone()))
                .collect();
            h.sort();
            hi.extend(h);
            let mut t: Vec<_> = self.lo[q.index()]
                .iter()
                .map(|t| (q.0, t.letter.0, t.branch.clone(), t.targets.clone()))
                .collect();
            t.sort();
            lo.extend(t);
        }
        AutomatonDoc {
            order: self.order,
            letters: self.letters,
            states: self.orders.clone(),
            finals: self
                .states()
                .filter(|q| self.is_final(*q))
                .map(|q| q.0)
                .collect(),
            hi,
            lo,
        }
    }

    pub fn from_doc(doc: &AutomatonDoc) -> Result<StackAutomaton, String> {
        if doc.order == 0 {
            return Err("order must be positive".into());
        }
        let mut a = StackAutomaton::new(doc.order, doc.letters as usize);
        for &k in &doc.states {
            if k == 0 || k > doc.order {
                return Err("state order out of range".into());
            }
            a.add_state(k, false);
        }
        let n = a.num_states() as u32;
        let in_range = |s: &StateSet| s.iter().all(|q| q.0 < n);
        for &f in &doc.finals {
            if f >= n {
                return Err("final state out of range".into());
            }
            a.set_final(StateId(f), true);
        }
        for (q, l, s) in &doc.hi {
            if *q >= n || *l >= n || !in_range(s) {
                return Err("state out of range".into());
            }
            let (q, l) = (StateId(*q), StateId(*l));
            let k = a.state_order(q);
            if k < 2 || a.state_order(l) != k - 1 || s.iter().any(|x| a.state_order(x) != k) {
                return Err("transition orders do not match".into());
            }
            a.add_hi(q, l, s.clone())?;
        }
        for (q, letter, b, t) in &doc.lo {
            if *q >= n || !in_range(b) || !in_range(t) || *letter >= doc.letters {
                return Err("state or letter out of range".into());
            }
            let q = StateId(*q);
            if a.state_order(q) != 1 || t.iter().any(|x| a.state_order(x) != 1) {
                return Err("transition orders do not match".into());
            }
            if !b.is_empty() && a.set_order(b).is_none() {
                return Err("inhomogeneous branch set".into());
            }
            a.add_lo(q, Symbol(*letter), b.clone(), t.clone());
        }
        Ok(a)
    }

    /// Graphviz rendering. Order-≥2 transitions are drawn as a box node
    /// with a dashed edge to the label and solid edges to the targets.
    pub fn to_dot(&self, alphabet: &Alphabet, state_name: &dyn Fn(StateId) -> String) -> String {
        let mut s = String::from("digraph stackautomaton {\n  rankdir=LR;\n");
        for q in self.states() {
            let shape = if self.is_final(q) {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(
                s,
                "  s{} [label=\"{} (order {})\", shape={shape}];",
                q.0,
                escape(&state_name(q)),
                self.state_order(q)
            );
        }
        let mut t = 0;
        for q in self.states() {
            for (l, set) in &self.hi[q.index()] {
                let _ = writeln!(s, "  t{t} [shape=point];\n  s{} -> t{t} [arrowhead=none];\n  t{t} -> s{} [style=dashed];", q.0, l.0);
                for x in set.iter() {
                    let _ = writeln!(s, "  t{t} -> s{};", x.0);
                }
                t += 1;
            }
            for tr in &self.lo[q.index()] {
                let _ = writeln!(
                    s,
                    "  t{t} [shape=box, label=\"{}\"];\n  s{} -> t{t} [arrowhead=none];",
                    escape(alphabet.name(tr.letter)),
                    q.0
                );
                for x in tr.branch.iter() {
                    let _ = writeln!(s, "  t{t} -> s{} [style=dotted];", x.0);
                }
                for x in tr.targets.iter() {
                    let _ = writeln!(s, "  t{t} -> s{};", x.0);
                }
                t += 1;
            }
        }
        s.push_str("}\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Odometer step over a product of choices; false after the last tuple.
pub(crate) fn advance(choice: &mut [usize], lens: &[usize]) -> bool {
    for i in (0..choice.len()).rev() {
        choice[i] += 1;
        if choice[i] < lens[i] {
            return true;
        }
        choice[i] = 0;
    }
    false
}

/// Bottom-up membership with a memo keyed by interned substacks.
pub struct Membership<'a> {
    aut: &'a StackAutomaton,
    memo: HashMap<Stack, Arc<[StateId]>>,
    by_order: Vec<Vec<StateId>>,
}

impl<'a> Membership<'a> {
    pub fn new(aut: &'a StackAutomaton) -> Membership<'a> {
        let mut by_order = vec![Vec::new(); aut.order as usize + 1];
        for q in aut.states() {
            by_order[aut.state_order(q) as usize].push(q);
        }
        Membership {
            aut,
            memo: HashMap::new(),
            by_order,
        }
    }

    /// Sorted states of order `w.order()` accepting `w`.
    pub fn accepting(&mut self, w: &Stack) -> Arc<[StateId]> {
        if let Some(r) = self.memo.get(w) {
            return r.clone();
        }
        let k = w.order();
        let mut res = Vec::new();
        if k as usize >= self.by_order.len() {
            return Arc::from(res);
        }
        match w.split() {
            None => {
                res.extend(
                    self.by_order[k as usize]
                        .iter()
                        .copied()
                        .filter(|q| self.aut.is_final(*q)),
                );
            }
            Some((Elem::Stack(u, _), v)) => {
                let au = self.accepting(u);
                let av = self.accepting(v);
                for &q in &self.by_order[k as usize] {
                    if self
                        .aut
                        .hi(q)
                        .iter()
                        .any(|(l, set)| au.binary_search(l).is_ok() && set.is_subset_of_sorted(&av))
                    {
                        res.push(q);
                    }
                }
            }
            Some((Elem::Char(c), v)) => {
                let av = self.accepting(v);
                let ann = c
                    .annotation
                    .as_ref()
                    .map(|a| (a.stack.order(), self.accepting(&a.stack)));
                for &q in &self.by_order[1] {
                    let ok = self.aut.lo(q).iter().any(|t| {
                        t.letter == c.symbol
                            && t.targets.is_subset_of_sorted(&av)
                            && (t.branch.is_empty()
                                || match &ann {
                                    Some((o, aa)) => {
                                        self.aut.set_order(&t.branch) == Some(*o)
                                            && t.branch.is_subset_of_sorted(aa)
                                    }
                                    None => false,
                                })
                    });
                    if ok {
                        res.push(q);
                    }
                }
            }
        }
        let r: Arc<[StateId]> = Arc::from(res);
        self.memo.insert(w.clone(), r.clone());
        r
    }

    pub fn accepts(&mut self, q: StateId, w: &Stack) -> bool {
        w.order() == self.aut.state_order(q) && self.accepting(w).binary_search(&q).is_ok()
    }
}

/// Keys of the structural naming used by [`StackAutomaton::canonical`].
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum NameKey {
    Base(u64),
    Label(u32, Box<[u32]>),
}

/// Interning table for canonical state names.
#[derive(Default, Debug)]
pub struct NameTable {
    ids: HashMap<NameKey, u32>,
}

impl NameTable {
    pub fn intern(&mut self, k: NameKey) -> u32 {
        let n = self.ids.len() as u32;
        *self.ids.entry(k).or_insert(n)
    }
}

/// A naming-independent description of an automaton.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Canonical {
    pub finals: BTreeSet<u32>,
    pub hi: BTreeSet<(u32, u32, Vec<u32>)>,
    pub lo: BTreeSet<(u32, u16, Vec<u32>, Vec<u32>)>,
}

/// JSON form of a stack automaton.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct AutomatonDoc {
    pub order: u8,
    pub letters: u16,
    /// Order of each state.
    pub states: Vec<u8>,
    pub finals: Vec<u32>,
    /// `(source, label, targets)`.
    pub hi: Vec<(u32, u32, StateSet)>,
    /// `(source, letter, branch, targets)`.
    pub lo: Vec<(u32, u16, StateSet, StateSet)>,
}

/// Acceptance conditions used to build target automata.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Target {
    /// Every stack.
    Any,
    /// Exactly `⊥_n`.
    Empty,
    /// Stacks whose top character is the given letter.
    Top(Symbol),
}

/// A stack automaton with a dedicated order-n state for every control.
#[derive(Clone, Debug)]
pub struct PAutomaton {
    pub aut: StackAutomaton,
    controls: Vec<StateId>,
}

/// Failure to answer a membership query.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown control {0}")]
pub struct UnknownControl(pub u32);

impl PAutomaton {
    /// An automaton with one non-final order-n state per control and no
    /// transitions.
    pub fn new(order: u8, letters: usize, num_controls: usize) -> PAutomaton {
        let mut aut = StackAutomaton::new(order, letters);
        let controls = (0..num_controls)
            .map(|_| aut.add_state(order, false))
            .collect();
        PAutomaton { aut, controls }
    }

    /// Wraps an automaton whose control states are given explicitly.
    pub fn from_parts(aut: StackAutomaton, controls: Vec<StateId>) -> PAutomaton {
        assert!(controls.iter().all(|q| aut.state_order(*q) == aut.order()));
        PAutomaton { aut, controls }
    }

    pub fn order(&self) -> u8 {
        self.aut.order()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn control_state(&self, c: Control) -> StateId {
        self.controls[c.index()]
    }

    pub fn control_states(&self) -> &[StateId] {
        &self.controls
    }

    /// The control owning an order-n state, if any.
    pub fn control_of(&self, q: StateId) -> Option<Control> {
        self.controls
            .iter()
            .position(|x| *x == q)
            .map(|i| Control(i as u32))
    }

    pub fn member(&self, c: Control, w: &Stack) -> Result<bool, UnknownControl> {
        let q = *self.controls.get(c.index()).ok_or(UnknownControl(c.0))?;
        Ok(self.aut.accepts(q, w))
    }

    /// Adds a target condition for `c`. Each call builds its own sink states,
    /// so several targets for one control never share a target set.
    pub fn add_target(&mut self, c: Control, target: Target) {
        let q = self.control_state(c);
        add_target_from(&mut self.aut, q, target);
    }

    /// Checks the saturation precondition: control states and the labels
    /// below them are non-final and no target set contains them. These are
    /// the only states saturation adds transitions to.
    pub fn check_precondition(&self) -> Result<(), String> {
        let mut initial = vec![false; self.aut.num_states()];
        let mut stack: Vec<StateId> = self.controls.clone();
        while let Some(q) = stack.pop() {
            if std::mem::replace(&mut initial[q.index()], true) {
                continue;
            }
            stack.extend(self.aut.hi(q).iter().map(|(l, _)| *l));
        }
        for q in self.aut.states() {
            if initial[q.index()] && self.aut.is_final(q) {
                return Err(format!("initial state {} is final", q.0));
            }
            let incoming = self
                .aut
                .hi(q)
                .iter()
                .flat_map(|(_, s)| s.iter())
                .chain(self.aut.lo(q).iter().flat_map(|t| t.targets.iter()));
            for x in incoming {
                if initial[x.index()] {
                    return Err(format!("initial state {} has an incoming transition", x.0));
                }
            }
        }
        Ok(())
    }
}

/// Adds transitions from the order-m state `q` realising `target` on
/// stacks of order m. Sinks are fresh.
pub fn add_target_from(aut: &mut StackAutomaton, q: StateId, target: Target) {
    let m = aut.state_order(q);
    let letters: Vec<Symbol> = (0..aut.letters() as u16).map(Symbol).collect();
    match target {
        Target::Any | Target::Top(_) => {
            let sinks = universal_sinks(aut, m);
            let first: Vec<Symbol> = match target {
                Target::Top(a) => vec![a],
                _ => letters,
            };
            let mut cur = q;
            for k in (2..=m).rev() {
                cur = aut
                    .ensure_hi(cur, StateSet::singleton(sinks[k as usize - 1]))
                    .0;
            }
            for a in first {
                aut.add_lo(cur, a, StateSet::empty(), StateSet::singleton(sinks[0]));
            }
        }
        Target::Empty => {
            let mut cur = q;
            for k in (2..=m).rev() {
                let e = aut.add_state(k, true);
                cur = aut.ensure_hi(cur, StateSet::singleton(e)).0;
            }
            let e = aut.add_state(1, true);
            aut.add_lo(
                cur,
                Symbol::BOTTOM,
                StateSet::empty(),
                StateSet::singleton(e),
            );
        }
    }
}

/// Final sinks `s_1..s_m` where `s_k` accepts every order-k stack whose
/// nested sequences are nonempty (the empty order-k stack included).
pub fn universal_sinks(aut: &mut StackAutomaton, m: u8) -> Vec<StateId> {
    let letters: Vec<Symbol> = (0..aut.letters() as u16).map(Symbol).collect();
    let sinks: Vec<StateId> = (1..=m).map(|k| aut.add_state(k, true)).collect();
    for a in &letters {
        aut.add_lo(
            sinks[0],
            *a,
            StateSet::empty(),
            StateSet::singleton(sinks[0]),
        );
    }
    for k in 2..=m {
        let mut cur = sinks[k as usize - 1];
        for j in (2..=k).rev() {
            cur = aut
                .ensure_hi(cur, StateSet::singleton(sinks[j as usize - 1]))
                .0;
        }
        for a in &letters {
            aut.add_lo(cur, *a, StateSet::empty(), StateSet::singleton(sinks[0]));
        }
    }
    sinks
}
