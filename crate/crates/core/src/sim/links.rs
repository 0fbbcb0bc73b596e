use crate::arch::{McmArch, TechParams};
use crate::network::{fc_pair_links, LogicalTopology, Mapping, Shape};
use crate::workload::{ParallelStrategy, Parallelism};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-device bandwidth (GB/s) and shape one parallelism's collectives see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub bw: f64,
    pub shape: Shape,
    /// Carried by the package network rather than the scale-out fabric.
    pub intra: bool,
}

/// Bandwidth seen by every parallelism with a nontrivial group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkPlan {
    pub channels: BTreeMap<Parallelism, Channel>,
}

impl LinkPlan {
    pub fn channel(&self, p: Parallelism) -> Option<Channel> {
        self.channels.get(&p).copied()
    }

    /// Optical cluster: intra axes share the NoP bisection, inter axes get
    /// `l_p * optical_link_bw` split over the package's dies. A fully
    /// connected EP group is limited by its thinnest peer connection.
    pub fn optical(
        arch: &McmArch,
        s: &ParallelStrategy,
        mapping: &Mapping,
        logical: &LogicalTopology,
        tech: &TechParams,
    ) -> LinkPlan {
        let dies = arch.dies_per_mcm() as f64;
        let nop = Channel {
            bw: arch.nop_bw_per_die(),
            shape: Shape::Ring,
            intra: true,
        };
        let mut plan = LinkPlan::default();
        for p in Parallelism::ALL {
            if p == Parallelism::Dp || s.axis_degree(p) <= 1 {
                continue;
            }
            let ch = if mapping.is_intra(p) {
                nop
            } else {
                let g = logical.group(p);
                let links = g.map_or(0, |g| g.links);
                match g.map(|g| g.shape) {
                    Some(Shape::FullyConnected) => {
                        let n = s.axis_degree(p);
                        let thinnest = fc_pair_links(links, n).into_iter().min().unwrap_or(0);
                        Channel {
                            bw: (n - 1) as f64 * thinnest as f64 * tech.optical_link_bw / dies,
                            shape: Shape::FullyConnected,
                            intra: false,
                        }
                    }
                    _ => Channel {
                        bw: links as f64 * tech.optical_link_bw / dies,
                        shape: Shape::Ring,
                        intra: false,
                    },
                }
            };
            plan.channels.insert(p, ch);
        }
        plan.insert_dp(s, |p| plan_axis(arch, tech, mapping, logical, p, dies));
        plan
    }

    /// Fixed-bandwidth fabric: `intra_bw` inside a package, `inter_bw` per
    /// device between packages (full bisection).
    pub fn electrical(s: &ParallelStrategy, mapping: &Mapping, intra_bw: f64, inter_bw: f64) -> LinkPlan {
        let ch = |p: Parallelism| Channel {
            bw: if mapping.is_intra(p) { intra_bw } else { inter_bw },
            shape: Shape::Ring,
            intra: mapping.is_intra(p),
        };
        let mut plan = LinkPlan::default();
        for p in Parallelism::ALL {
            if p != Parallelism::Dp && s.axis_degree(p) > 1 {
                plan.channels.insert(p, ch(p));
            }
        }
        plan.insert_dp(s, ch);
        plan
    }

    /// Plan from per-axis channels; the gradient ring is derived from the
    /// EP and outer DP axes.
    pub fn from_axes(s: &ParallelStrategy, axes: &BTreeMap<Parallelism, Channel>) -> LinkPlan {
        let mut plan = LinkPlan::default();
        for (&p, &ch) in axes {
            if p != Parallelism::Dp && s.axis_degree(p) > 1 {
                plan.channels.insert(p, ch);
            }
        }
        let fallback = Channel {
            bw: 0.0,
            shape: Shape::Ring,
            intra: false,
        };
        plan.insert_dp(s, |p| axes.get(&p).copied().unwrap_or(fallback));
        plan
    }

    /// The gradient ring spans the EP axis and the outer DP axis, so it runs
    /// at the slower of the two.
    pub(crate) fn insert_dp(&mut self, s: &ParallelStrategy, axis: impl Fn(Parallelism) -> Channel) {
        if s.dp <= 1 {
            return;
        }
        let mut spans = Vec::new();
        if s.ep > 1 {
            spans.push(
                self.channels
                    .get(&Parallelism::Ep)
                    .copied()
                    .unwrap_or_else(|| axis(Parallelism::Ep)),
            );
        }
        if s.axis_degree(Parallelism::Dp) > 1 {
            spans.push(axis(Parallelism::Dp));
        }
        let slowest = spans.into_iter().min_by(|a, b| a.bw.total_cmp(&b.bw));
        if let Some(mut ch) = slowest {
            ch.shape = Shape::Ring;
            self.channels.insert(Parallelism::Dp, ch);
        }
    }
}

fn plan_axis(
    arch: &McmArch,
    tech: &TechParams,
    mapping: &Mapping,
    logical: &LogicalTopology,
    p: Parallelism,
    dies: f64,
) -> Channel {
    if mapping.is_intra(p) {
        Channel {
            bw: arch.nop_bw_per_die(),
            shape: Shape::Ring,
            intra: true,
        }
    } else {
        Channel {
            bw: logical.links_for(p) as f64 * tech.optical_link_bw / dies,
            shape: Shape::Ring,
            intra: false,
        }
    }
}
