//! Consensus ADMM over a network of agents with adaptive penalty gains.
//!
//! Every agent holds a private convex objective and talks only to its
//! neighbors. Each round it takes a gradient step on its local augmented
//! Lagrangian, re-estimates its neighbors' states, and updates its
//! multipliers. The penalty weights an agent applies to its neighbors form
//! one row of a row-stochastic matrix; with adaptation switched on, each
//! agent shifts weight between two neighbors per round so that a local
//! energy function decreases faster.
//!
//! ```
//! use adaptive_admm::engine::{run_until_converged, RunConfig, RunStatus};
//! use adaptive_admm::network::{build_comm_matrix, gen_ring};
//! use adaptive_admm::problem::{sample_problem, ObjectiveKind};
//!
//! let topology = gen_ring(5)?;
//! let s = build_comm_matrix(&topology);
//! let spec = sample_problem(&s, 2, ObjectiveKind::Quadratic, 0)?;
//! let result = run_until_converged(&spec, &topology, &RunConfig::default())?;
//! assert_eq!(result.status, RunStatus::Converged);
//! # Ok::<(), adaptive_admm::Error>(())
//! ```
//!
//! The modules map onto the pieces of the method:
//!
//! * [`network`]: communication graphs and their validity checks.
//! * [`problem`]: objectives, coupling constraints, centralized oracle.
//! * [`gains`]: row-stochastic penalty rows and their adaptation rule.
//! * [`agent`]: per-agent state, update laws and local energy.
//! * [`engine`]: synchronous rounds, monitors, stopping rules, comparisons.
//! * [`trace`]: trace records and their CSV/JSON encodings.

pub mod agent;
pub mod engine;
mod error;
pub mod gains;
pub mod network;
pub mod problem;
pub mod trace;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/problem.md")]
    mod problem {}
    #[doc = include_str!("../../../book/src/gains.md")]
    mod gains {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
