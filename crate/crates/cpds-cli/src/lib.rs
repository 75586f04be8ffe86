//! Front end for the `cpds` engine: the system file format, the JSON result
//! document and the commands behind the `cpds` binary.
//!
//! Exit codes: 0 for reachable or member, 1 for unreachable, not a member,
//! unknown within bounds or a self-test divergence, 2 for usage, parse and
//! solver errors.

pub mod commands;
pub mod sysfile;
