//! Analytical performance model and cross-layer optimizer for LLM-training
//! clusters built from multi-chiplet modules (MCMs) and optical circuit-switched
//! rail networks.
//!
//! The crate is layered bottom-up:
//!
//! - [`workload`]: model/strategy description and deterministic traffic projection.
//! - [`arch`]: MCM geometry, edge budget and cost model.
//! - [`network`]: parallelism mapping, link allocation, logical and physical topology synthesis.
//! - [`sim`]: collective, compute and memory models composed into an iteration timeline.
//! - [`opt`]: inner strategy/topology search, outer architecture planner, Pareto archive.
//! - [`config`] and [`run`]: declarative experiment files and result emission.

pub mod arch;
pub mod config;
pub mod network;
pub mod opt;
pub mod run;
pub mod sim;
pub mod workload;

pub use workload::{ModelConfig, ParallelStrategy, Parallelism};
