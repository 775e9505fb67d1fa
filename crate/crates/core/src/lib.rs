//! Joint VNF placement and CPU allocation over a substrate of hosts and
//! virtual links, with service classes modeled as an open network of M/M/1
//! queues.
//!
//! The crate is organized around a validated problem instance
//! ([`model::ValidatedInstance`]) from which everything else is derived:
//!
//! * [`traffic`] resolves aggregate per-queue arrival rates and expected
//!   visit counts from the per-class routing matrices.
//! * [`convex`] is a small log-barrier interior-point solver for the convex
//!   programs produced by the placement relaxation and the CPU allocator.
//! * [`maxz`] implements the iterative relax-score-fix placement heuristic.
//! * [`allocation`] optimizes per-queue service rates for a fixed placement
//!   and exposes the full-load Newton shortcut justified by the criticality
//!   graph test.
//! * [`baselines`] holds brute-force enumeration plus the greedy and
//!   affinity placement heuristics used for comparison.
//! * [`replicas`] expands multi-instance VNFs and searches over traffic
//!   split fractions.
//! * [`des`] is a discrete-event simulator used to validate the analytic
//!   model end to end.
//! * [`scenario`] and [`harness`] parse scenario files, run strategies and
//!   sweeps, and render CSV results; the `vnfp` binary is a thin wrapper
//!   around them.

pub mod allocation;
pub mod baselines;
pub mod convex;
pub mod des;
pub mod harness;
pub mod maxz;
pub mod model;
pub mod replicas;
pub mod scenario;
pub mod traffic;

pub use model::{validate_instance, Placement, ProblemInstance, ValidatedInstance};
