//! Joint radio and NFV resource allocation for tactile services with an
//! end-to-end delay budget.
//!
//! A frame is a [`scenario::Scenario`]. The [`solver`] minimizes a weighted
//! sum of transmit power and NF execution time subject to per-user delay
//! budgets covering uplink and downlink transmission, both queues, and the NF
//! chain. [`audit`] re-checks every constraint independently, [`oracle`]
//! enumerates tiny instances exhaustively and [`experiment`] runs seeded
//! parameter sweeps.

// `!(x <= y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod experiment;
pub mod nfv;
pub mod oracle;
pub mod qos;
pub mod radio;
pub mod scenario;
pub mod solver;

pub use scenario::{Scenario, ScenarioConfig};
pub use solver::{solve_joint, solve_separate, Allocation, Mode, RunResult, SolverSettings};
