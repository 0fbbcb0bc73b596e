//! Optical-interconnect topology synthesis.
//!
//! Parallelism groups are first split between the on-package network and the
//! optical network, each MCM's optical links are divided by traffic share, the
//! per-parallelism rings (or a fully-connected EP group) form the logical
//! topology, and the cheapest rail-dimension wiring that realizes it is chosen.

mod alloc;
mod logical;
mod mapping;
mod physical;

pub use alloc::{allocate_links, LinkAllocation, ReuseGroup};
pub use logical::{build_logical, fc_pair_links, LinkRange, LogicalGroup, LogicalTopology, Shape};
pub use mapping::{map_parallelisms, Mapping};
pub use physical::{
    derive_physical, validate_topology, PhysicalTopology, RailDimension, TopologyViolation, WiringPlan,
};

use crate::workload::Parallelism;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("tp = {tp} exceeds the {dies} dies of one MCM")]
    TpExceedsMcm { tp: u64, dies: u64 },
    #[error("intra-MCM groups cover {product} of {dies} dies")]
    McmNotFilled { product: u64, dies: u64 },
    #[error("{links} links cannot give {needed} parallelisms one link each")]
    InsufficientLinks { links: u64, needed: u64 },
    #[error("no feasible rail mapping: {0}")]
    NoFeasibleMapping(String),
}

/// `floor` that absorbs the rounding error of an exact-in-rationals quotient
/// (e.g. 7.999999999 from 32 * 0.1 / 0.4).
pub(crate) fn floor_tol(x: f64) -> u64 {
    (x + 1e-9 * x.abs().max(1.0)).floor().max(0.0) as u64
}

/// Allocation-order position, for the fixed TP < CP < EP < DP < PP tie-break.
pub(crate) fn order(p: Parallelism) -> usize {
    Parallelism::ALL.iter().position(|&q| q == p).unwrap_or(usize::MAX)
}
