//! Regular sets of multi-stack configurations.
//!
//! A set is a finite union of tuples `(q, (A_1, s_1), ..., (A_m, s_m))`; the
//! tuple accepts `⟨q, w_1, ..., w_m⟩` when every `w_i` is accepted by `A_i`
//! from `s_i`. Automata are shared between tuples through `Arc`.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hostack::Stack;
use crate::model::{Configuration, Control};
use crate::stackauto::{add_target_from, AutomatonDoc, StackAutomaton, StateId, Target};

/// Errors raised by set operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegConfError {
    #[error("arity mismatch: expected {expected} stacks, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("order mismatch: expected {expected}, found {found}")]
    OrderMismatch { expected: u8, found: u8 },
    #[error("operation not supported: {0}")]
    NotSupported(&'static str),
    #[error("invalid document: {0}")]
    Invalid(String),
}

/// The language of one state of a stack automaton.
#[derive(Clone, Debug)]
pub struct StackLang {
    pub aut: Arc<StackAutomaton>,
    pub init: StateId,
}

impl StackLang {
    /// Exactly `⊥_n`.
    pub fn bottom(order: u8, letters: usize) -> StackLang {
        StackLang::from_target(order, letters, Target::Empty)
    }

    /// Every stack of the given order.
    pub fn universal(order: u8, letters: usize) -> StackLang {
        StackLang::from_target(order, letters, Target::Any)
    }

    pub fn from_target(order: u8, letters: usize, target: Target) -> StackLang {
        let mut aut = StackAutomaton::new(order, letters);
        let init = aut.add_state(order, false);
        add_target_from(&mut aut, init, target);
        StackLang {
            aut: Arc::new(aut),
            init,
        }
    }

    /// The part of `aut` reachable from `q`.
    pub fn restricted(aut: &StackAutomaton, q: StateId) -> StackLang {
        let (a, init) = aut.restrict(q);
        StackLang {
            aut: Arc::new(a),
            init,
        }
    }

    pub fn accepts(&self, w: &Stack) -> bool {
        self.aut.accepts(self.init, w)
    }

    pub fn witness(&self) -> Option<Stack> {
        self.aut.witness(self.init)
    }

    fn combine(&self, other: &StackLang, intersect: bool) -> StackLang {
        let mut aut = (*self.aut).clone();
        let off = aut.embed(&other.aut);
        let y = StateId(other.init.0 + off);
        let q = if intersect {
            aut.intersect_states(self.init, y)
        } else {
            aut.union_states(self.init, y)
        };
        StackLang::restricted(&aut, q)
    }
}

/// One tuple of a regular configuration set.
#[derive(Clone, Debug)]
pub struct ConfigTuple {
    pub control: Control,
    pub stacks: Vec<StackLang>,
}

impl ConfigTuple {
    pub fn accepts(&self, c: &Configuration) -> bool {
        c.control == self.control && self.stacks.iter().zip(&c.stacks).all(|(l, w)| l.accepts(w))
    }

    /// A configuration of the tuple, if its languages are all nonempty.
    pub fn witness(&self) -> Option<Configuration> {
        let stacks = self
            .stacks
            .iter()
            .map(StackLang::witness)
            .collect::<Option<Vec<_>>>()?;
        Some(Configuration {
            control: self.control,
            stacks,
        })
    }
}

/// A finite union of configuration tuples.
#[derive(Clone, Debug)]
pub struct RegularConfigSet {
    pub order: u8,
    pub num_stacks: usize,
    pub letters: usize,
    pub tuples: Vec<ConfigTuple>,
}

impl RegularConfigSet {
    pub fn empty(order: u8, num_stacks: usize, letters: usize) -> RegularConfigSet {
        RegularConfigSet {
            order,
            num_stacks,
            letters,
            tuples: Vec::new(),
        }
    }

    /// Adds a tuple after checking its arity and orders.
    pub fn push(&mut self, t: ConfigTuple) -> Result<(), RegConfError> {
        if t.stacks.len() != self.num_stacks {
            return Err(RegConfError::ArityMismatch {
                expected: self.num_stacks,
                found: t.stacks.len(),
            });
        }
        for l in &t.stacks {
            if l.aut.order() != self.order {
                return Err(RegConfError::OrderMismatch {
                    expected: self.order,
                    found: l.aut.order(),
                });
            }
        }
        self.tuples.push(t);
        Ok(())
    }

    fn check_arity(&self, found: usize) -> Result<(), RegConfError> {
        if found != self.num_stacks {
            return Err(RegConfError::ArityMismatch {
                expected: self.num_stacks,
                found,
            });
        }
        Ok(())
    }

    pub fn member(&self, c: &Configuration) -> Result<bool, RegConfError> {
        self.check_arity(c.stacks.len())?;
        Ok(self.tuples.iter().any(|t| t.accepts(c)))
    }

    fn check_compatible(&self, other: &RegularConfigSet) -> Result<(), RegConfError> {
        self.check_arity(other.num_stacks)?;
        if self.order != other.order {
            return Err(RegConfError::OrderMismatch {
                expected: self.order,
                found: other.order,
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &RegularConfigSet) -> Result<RegularConfigSet, RegConfError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.tuples.extend(other.tuples.iter().cloned());
        Ok(out)
    }

    /// Pairwise intersection of tuples with equal controls.
    pub fn intersect(&self, other: &RegularConfigSet) -> Result<RegularConfigSet, RegConfError> {
        self.check_compatible(other)?;
        let mut out = RegularConfigSet::empty(self.order, self.num_stacks, self.letters);
        for x in &self.tuples {
            for y in &other.tuples {
                if x.control != y.control {
                    continue;
                }
                let stacks = x
                    .stacks
                    .iter()
                    .zip(&y.stacks)
                    .map(|(a, b)| a.combine(b, true))
                    .collect();
                out.tuples.push(ConfigTuple {
                    control: x.control,
                    stacks,
                });
            }
        }
        Ok(out)
    }

    /// Complementation of alternating stack automata is not provided.
    pub fn complement(&self) -> Result<RegularConfigSet, RegConfError> {
        Err(RegConfError::NotSupported("complement"))
    }

    /// A member of the set, if any.
    pub fn witness(&self) -> Option<Configuration> {
        self.tuples.iter().find_map(ConfigTuple::witness)
    }

    pub fn is_empty(&self) -> bool {
        self.witness().is_none()
    }

    /// Drops tuples with an empty component.
    pub fn prune(&mut self) {
        self.tuples.retain(|t| t.witness().is_some());
    }

    /// Tuples sorted by control; automata deduplicated by identity.
    pub fn to_doc(&self) -> RegConfDoc {
        let mut automata: Vec<AutomatonDoc> = Vec::new();
        let mut seen: HashMap<*const StackAutomaton, usize> = HashMap::new();
        let mut tuples = Vec::new();
        let mut order: Vec<usize> = (0..self.tuples.len()).collect();
        order.sort_by_key(|i| self.tuples[*i].control);
        for i in order {
            let t = &self.tuples[i];
            let stacks = t
                .stacks
                .iter()
                .map(|l| {
                    let idx = *seen.entry(Arc::as_ptr(&l.aut)).or_insert_with(|| {
                        automata.push(l.aut.to_doc());
                        automata.len() - 1
                    });
                    (idx, l.init.0)
                })
                .collect();
            tuples.push(TupleDoc {
                control: t.control.0,
                stacks,
            });
        }
        RegConfDoc {
            order: self.order,
            num_stacks: self.num_stacks,
            letters: self.letters,
            automata,
            tuples,
        }
    }

    pub fn from_doc(doc: &RegConfDoc) -> Result<RegularConfigSet, RegConfError> {
        let automata = doc
            .automata
            .iter()
            .map(|a| StackAutomaton::from_doc(a).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()
            .map_err(RegConfError::Invalid)?;
        let mut out = RegularConfigSet::empty(doc.order, doc.num_stacks, doc.letters);
        for t in &doc.tuples {
            let mut stacks = Vec::new();
            for &(idx, init) in &t.stacks {
                let aut = automata
                    .get(idx)
                    .ok_or_else(|| RegConfError::Invalid("automaton index out of range".into()))?;
                if init as usize >= aut.num_states() || aut.state_order(StateId(init)) != doc.order
                {
                    return Err(RegConfError::Invalid("bad initial state".into()));
                }
                stacks.push(StackLang {
                    aut: aut.clone(),
                    init: StateId(init),
                });
            }
            out.push(ConfigTuple {
                control: Control(t.control),
                stacks,
            })?;
        }
        Ok(out)
    }
}

/// Serializable form of a tuple: automaton index and initial state per stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleDoc {
    pub control: u32,
    pub stacks: Vec<(usize, u32)>,
}

/// Serializable form of a [`RegularConfigSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegConfDoc {
    pub order: u8,
    pub num_stacks: usize,
    pub letters: usize,
    pub automata: Vec<AutomatonDoc>,
    pub tuples: Vec<TupleDoc>,
}
