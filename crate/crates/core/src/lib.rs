//! Auditing the demographic-parity gap of a black-box classifier with as
//! few label queries as possible.

pub mod auditor;
pub mod baselines;
pub mod bitset;
pub mod classfile;
pub mod domain;
pub mod gaussian;
pub mod harness;
pub mod error;
pub mod minimax;
pub mod oracle;

pub use domain::{Diameter, Domain, Example, Group, Hypothesis, HypothesisClass, Label, Transcript, VersionSpace};
pub use error::{AuditError, Result};
pub use oracle::{AuditResult, CountingOracle, LabelOracle};
