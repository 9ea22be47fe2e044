//! Check suites shared by the integration tests and the acceptance runner.
//! Every suite panics on the first violation.
#![allow(dead_code)]

pub mod gradient;
pub mod graph_oracle;
pub mod invariants;
pub mod reference;
pub mod repro;
pub mod sweep;
