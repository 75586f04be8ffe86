//! Reachability analysis for collapsible pushdown systems.
//!
//! The crate decides control-state reachability and computes backward
//! reachability sets for collapsible pushdown systems (CPDS) and for three
//! decidable multi-stack restrictions: ordered, phase-bounded and
//! scope-bounded systems. All procedures are built on saturation of
//! alternating stack automata. A bounded explicit-state explorer serves as
//! ground truth for differential testing.
//!
//! Module overview:
//!
//! * [`hostack`]: annotated higher-order stacks and their operations.
//! * [`model`]: system descriptions, concrete semantics and run validators.
//! * [`stackauto`]: alternating stack automata and long-form transitions.
//! * [`saturate`]: backward saturation for single-stack systems.
//! * [`ecpds`]: extended systems whose rules apply languages of rule sequences.
//! * [`ordered`]: ordered multi-stack reachability.
//! * [`phases`]: phase-bounded reachability.
//! * [`scopes`]: scope-bounded reachability over layered automata.
//! * [`regconf`]: regular sets of multi-stack configurations.
//! * [`oracle`]: bounded explicit-state exploration and random instances.

pub mod ecpds;
pub mod hostack;
pub mod model;
pub mod oracle;
pub mod ordered;
pub mod phases;
pub mod regconf;
pub mod saturate;
pub mod scopes;
pub mod stackauto;
