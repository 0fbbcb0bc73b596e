use super::{CollectiveKind, ParallelStrategy, Parallelism, TrafficProfile};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeatmapError {
    #[error("placement has no {parallelism} rank for device {device}")]
    PlacementIncomplete { parallelism: Parallelism, device: usize },
    #[error("{parallelism} group size {found} does not match traffic group size {expected}")]
    GroupSizeMismatch {
        parallelism: Parallelism,
        expected: u64,
        found: usize,
    },
}

/// Device-to-rank assignment: for each parallelism, its groups as ordered
/// rings of device ids (position in the ring = rank).
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    device_count: usize,
    groups: BTreeMap<Parallelism, Vec<Vec<usize>>>,
}

impl Placement {
    /// Canonical rank layout: TP varies fastest, then CP, EP, the remaining DP
    /// replicas, and PP slowest. EP groups are the innermost slice of DP groups.
    pub fn canonical(s: &ParallelStrategy) -> Self {
        let dims = [s.tp, s.cp, s.ep, s.dp / s.ep.max(1), s.pp].map(|d| d as usize);
        let device_count: usize = dims.iter().product();
        let coords = |d: usize| {
            let mut rest = d;
            let mut c = [0usize; 5];
            for (i, &n) in dims.iter().enumerate() {
                c[i] = rest % n;
                rest /= n;
            }
            c
        };
        let id = |c: [usize; 5]| {
            let mut d = 0;
            for i in (0..5).rev() {
                d = d * dims[i] + c[i];
            }
            d
        };
        // Axes spanned by each parallelism's group, fastest first.
        let spans: [(Parallelism, &[usize]); 5] = [
            (Parallelism::Tp, &[0]),
            (Parallelism::Cp, &[1]),
            (Parallelism::Ep, &[2]),
            (Parallelism::Dp, &[2, 3]),
            (Parallelism::Pp, &[4]),
        ];
        let mut groups = BTreeMap::new();
        for (p, axes) in spans {
            let mut seen = vec![false; device_count];
            let mut list = Vec::new();
            for d in 0..device_count {
                if seen[d] {
                    continue;
                }
                let base = coords(d);
                if axes.iter().any(|&a| base[a] != 0) {
                    continue;
                }
                let size: usize = axes.iter().map(|&a| dims[a]).product();
                let mut ring = Vec::with_capacity(size);
                for r in 0..size {
                    let mut c = base;
                    let mut rest = r;
                    for &a in axes {
                        c[a] = rest % dims[a];
                        rest /= dims[a];
                    }
                    let member = id(c);
                    seen[member] = true;
                    ring.push(member);
                }
                list.push(ring);
            }
            groups.insert(p, list);
        }
        Placement { device_count, groups }
    }

    /// Explicit placement; every device must appear exactly once in the groups
    /// of every listed parallelism.
    pub fn from_groups(
        device_count: usize,
        groups: BTreeMap<Parallelism, Vec<Vec<usize>>>,
    ) -> Result<Self, HeatmapError> {
        for (&p, list) in &groups {
            let mut hits = vec![0usize; device_count];
            for &d in list.iter().flatten() {
                if d < device_count {
                    hits[d] += 1;
                }
            }
            if let Some(device) = hits.iter().position(|&h| h != 1) {
                return Err(HeatmapError::PlacementIncomplete { parallelism: p, device });
            }
        }
        Ok(Placement { device_count, groups })
    }

    pub fn device_count(&self) -> usize {
        self.device_count
    }

    pub fn groups(&self, p: Parallelism) -> Option<&[Vec<usize>]> {
        self.groups.get(&p).map(Vec::as_slice)
    }
}

/// Source-by-destination bytes per iteration. Ring collectives send only to
/// the ring successor, all-to-all spreads evenly over the group, and pipeline
/// transfers go to the adjacent stages.
pub fn traffic_heatmap(profile: &TrafficProfile, placement: &Placement) -> Result<Vec<Vec<f64>>, HeatmapError> {
    let n_dev = placement.device_count;
    let mut matrix = vec![vec![0.0; n_dev]; n_dev];
    for e in profile
        .entries
        .iter()
        .filter(|e| e.volume_per_device > 0.0 && e.group_size > 1)
    {
        let groups = placement
            .groups(e.parallelism)
            .ok_or(HeatmapError::PlacementIncomplete {
                parallelism: e.parallelism,
                device: 0,
            })?;
        for ring in groups {
            let n = ring.len();
            if n as u64 != e.group_size {
                return Err(HeatmapError::GroupSizeMismatch {
                    parallelism: e.parallelism,
                    expected: e.group_size,
                    found: n,
                });
            }
            let v = e.volume_per_device;
            match e.collective {
                CollectiveKind::AllGather | CollectiveKind::ReduceScatter => {
                    for i in 0..n {
                        matrix[ring[i]][ring[(i + 1) % n]] += v;
                    }
                }
                CollectiveKind::AllToAll => {
                    let share = v / (n - 1) as f64;
                    for &src in ring {
                        for &dst in ring.iter().filter(|&&d| d != src) {
                            matrix[src][dst] += share;
                        }
                    }
                }
                CollectiveKind::P2P => {
                    // `v` is the stage average of 2(n-1) directed boundary transfers.
                    let per_direction = v * n as f64 / (2.0 * (n - 1) as f64);
                    for i in 0..n - 1 {
                        matrix[ring[i]][ring[i + 1]] += per_direction;
                        matrix[ring[i + 1]][ring[i]] += per_direction;
                    }
                }
            }
        }
    }
    Ok(matrix)
}
