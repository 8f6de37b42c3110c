//! Dual-domain solvers for stochastic workload allocation over a
//! mapping-node/data-center (MN-DC) network, together with a seeded
//! experiment harness.
//!
//! Mapping nodes collect delay-tolerant workload arrivals and route them
//! over bandwidth-limited links to data centers, which process workloads
//! subject to capacity caps and stochastic energy prices and renewables.
//! The long-term average-cost problem is tackled in the dual domain: the
//! Lagrange multipliers of the flow-balance constraints fully determine the
//! per-slot allocation in closed form, so the whole task reduces to finding
//! good multipliers.
//!
//! The crate provides:
//! - [`network`]: topology, cost evaluation, incidence algebra, queue
//!   dynamics, and smoothness constants;
//! - [`scenario`]: seeded generation of topologies and i.i.d. state streams;
//! - [`dual`]: closed-form primal recovery, instantaneous dual value and
//!   gradient, optional l2 regularization, plus a numeric primal oracle;
//! - [`solvers`]: batch gradient ascent, stochastic gradient, projected
//!   offline SAGA with a gradient table, SDG, SDG+ and the learn-and-adapt
//!   online SAGA;
//! - [`harness`]: paired-stream solver comparisons, mu/K parameter sweeps,
//!   and deterministic CSV emission.

pub mod dual;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod scenario;
pub mod solvers;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
