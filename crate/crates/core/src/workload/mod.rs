//! Workload description and traffic projection.

mod heatmap;
mod model;
mod schedule;
mod strategy;
mod traffic;

pub use heatmap::{traffic_heatmap, HeatmapError, Placement};
pub use model::ModelConfig;
pub use schedule::{one_f_one_b, phase_schedule, ComputeOp, LayerPhase, PhaseSchedule, PipelineOp, PipelineSend};
pub use strategy::{validate_strategy, ParallelStrategy, StrategyError};
pub use traffic::{
    collective_instances, project_traffic, CollectiveInstance, CollectiveKind, PhaseTag, TrafficEntry, TrafficOptions,
    TrafficProfile,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The five parallelism axes of hybrid LLM training.
///
/// The derived ordering (TP < CP < EP < DP < PP) is the fixed tie-break order
/// used throughout link allocation and topology synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Parallelism {
    Tp,
    Cp,
    Ep,
    Dp,
    Pp,
}

impl Parallelism {
    pub const ALL: [Parallelism; 5] = [
        Parallelism::Tp,
        Parallelism::Cp,
        Parallelism::Ep,
        Parallelism::Dp,
        Parallelism::Pp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Parallelism::Tp => "TP",
            Parallelism::Cp => "CP",
            Parallelism::Ep => "EP",
            Parallelism::Dp => "DP",
            Parallelism::Pp => "PP",
        }
    }
}

impl fmt::Display for Parallelism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
