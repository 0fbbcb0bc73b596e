use super::{LinkAllocation, NetworkError};
use crate::workload::{ParallelStrategy, Parallelism, PhaseTag};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Ring,
    FullyConnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalGroup {
    pub parallelism: Parallelism,
    pub shape: Shape,
    pub group_size: u64,
    /// Links per MCM (shared links for reuse members).
    pub links: u64,
}

/// Contiguous block of per-MCM link indices assigned to one parallelism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRange {
    pub parallelism: Parallelism,
    pub links: Range<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalTopology {
    pub groups: Vec<LogicalGroup>,
    pub reuse: Option<super::ReuseGroup>,
    /// Active link assignment in the attention and FFN phases.
    pub phase_configs: BTreeMap<PhaseTag, Vec<LinkRange>>,
}

impl LogicalTopology {
    pub fn group(&self, p: Parallelism) -> Option<&LogicalGroup> {
        self.groups.iter().find(|g| g.parallelism == p)
    }

    pub fn links_for(&self, p: Parallelism) -> u64 {
        self.group(p).map_or(0, |g| g.links)
    }

    /// Exclusive links plus each shared block once.
    pub fn links_used(&self) -> u64 {
        let shared = self.reuse.map_or(0, |r| r.links);
        let exclusive: u64 = self
            .groups
            .iter()
            .filter(|g| {
                !self
                    .reuse
                    .is_some_and(|r| r.pair.0 == g.parallelism || r.pair.1 == g.parallelism)
            })
            .map(|g| g.links)
            .sum();
        exclusive + shared
    }
}

/// Per-peer link counts of a fully-connected group member: `links` spread
/// over the `n - 1` peers, the first peers taking the remainder.
pub fn fc_pair_links(links: u64, n: u64) -> Vec<u64> {
    if n <= 1 {
        return Vec::new();
    }
    let peers = n - 1;
    (0..peers)
        .map(|i| links / peers + u64::from(i < links % peers))
        .collect()
}

/// Rings of each inter-MCM parallelism (EP may be fully connected when it
/// has a link per peer). Reuse members share one block of links whose owner
/// switches between the attention and FFN phases.
pub fn build_logical(
    inter: &BTreeSet<Parallelism>,
    s: &ParallelStrategy,
    alloc: &LinkAllocation,
    ep_shape: Shape,
) -> Result<LogicalTopology, NetworkError> {
    let mut groups = Vec::new();
    for &p in inter {
        let n = s.axis_degree(p);
        if n <= 1 {
            continue;
        }
        let links = alloc.links_for(p);
        if links == 0 {
            return Err(NetworkError::InsufficientLinks { links: 0, needed: 1 });
        }
        let shape = if p == Parallelism::Ep && ep_shape == Shape::FullyConnected && n - 1 <= links {
            Shape::FullyConnected
        } else {
            Shape::Ring
        };
        groups.push(LogicalGroup {
            parallelism: p,
            shape,
            group_size: n,
            links,
        });
    }
    let reuse = alloc.reuse.filter(|r| {
        groups.iter().any(|g| g.parallelism == r.pair.0) && groups.iter().any(|g| g.parallelism == r.pair.1)
    });

    // Link index layout: shared block first, then exclusive blocks in order.
    let mut exclusive = Vec::new();
    let mut next = reuse.map_or(0, |r| r.links);
    for g in &groups {
        if reuse.is_some_and(|r| r.pair.0 == g.parallelism || r.pair.1 == g.parallelism) {
            continue;
        }
        exclusive.push(LinkRange {
            parallelism: g.parallelism,
            links: next..next + g.links,
        });
        next += g.links;
    }
    let mut phase_configs = BTreeMap::new();
    for (phase, owner) in [(PhaseTag::AttentionPhase, 0usize), (PhaseTag::FfnPhase, 1usize)] {
        let mut ranges = exclusive.clone();
        if let Some(r) = reuse {
            let p = if owner == 0 { r.pair.0 } else { r.pair.1 };
            ranges.insert(
                0,
                LinkRange {
                    parallelism: p,
                    links: 0..r.links,
                },
            );
        }
        phase_configs.insert(phase, ranges);
    }
    Ok(LogicalTopology {
        groups,
        reuse,
        phase_configs,
    })
}
