//! Nested design-space search.
//!
//! The inner loop samples parallel strategies for a fixed package design and
//! synthesizes a topology for each; the outer loop mutates the package using
//! the bottleneck reported by the best inner point. Every evaluation feeds a
//! throughput/cost Pareto archive.

mod evaluate;
mod inner;
mod optimize;
mod pareto;
mod planner;
mod space;
mod surrogate;

pub use evaluate::{
    evaluate_point, gpu_arch, railx_plan, reuse_window, BaselinePreset, ClusterKind, DesignPoint, EvalError,
    EvalOptions,
};
pub use inner::{inner_search, EvalRecord, InnerConfig, InnerOutcome, Outcome};
pub use optimize::{optimize, OptimizeConfig, OptimizeResult, OuterRecord};
pub use pareto::{dominates, pareto_filter, pareto_update, Objectives, ParetoArchive};
pub use planner::{outer_step, select_rule, ArchBounds, Rule};
pub use space::{divisors, strategy_space};
pub use surrogate::{Forest, ForestParams};

use crate::arch::ArchError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("no feasible strategy among {evaluated} evaluated")]
    NoFeasibleStrategy { evaluated: usize },
    #[error("every neighbouring architecture was already visited or is invalid")]
    SearchExhausted,
    #[error(transparent)]
    Arch(#[from] ArchError),
}
