//! Analytical training-step model.
//!
//! Collectives follow ring (or fully-connected) step formulas, operators
//! follow a roofline over closed-form FLOP and byte counts, and the
//! iteration composes them along the 1F1B pipeline.

mod collective;
mod compute;
mod iteration;
mod links;
mod memory;

pub use collective::{collective_time, effective_bw};
pub use compute::{compute_time, local_tokens, op_cost, op_time, OpCost};
pub use iteration::{simulate_iteration, Bottleneck, DiagnosticLog, DieSpec, SimOptions, SimResult};
pub use links::{Channel, LinkPlan};
pub use memory::{check_capacity, memory_footprint, MemoryFootprint, OPTIMIZER_BYTES_PER_PARAM};

use crate::workload::Parallelism;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("needs {need_gb:.1} GB per die, {have_gb:.1} GB available")]
    CapacityExceeded { need_gb: f64, have_gb: f64 },
    #[error("no link bandwidth assigned to {0}")]
    MissingChannel(Parallelism),
}
