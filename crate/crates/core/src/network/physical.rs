use super::{order, LogicalTopology, NetworkError, Shape};
use crate::workload::{Parallelism, PhaseTag};
use serde::{Deserialize, Serialize};

/// One rail dimension `D_i = (N_i, R_i, S_i)`: rails of `n` MCMs, each MCM
/// spending `r` links on the dimension, `k` of them into the same OCS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailDimension {
    pub n: u64,
    pub r: u64,
    pub k: u64,
    /// OCS groups per rail, `floor(r / k)`.
    pub s: u64,
    pub parallelisms: Vec<Parallelism>,
}

impl RailDimension {
    pub fn new(n: u64, r: u64, k: u64, parallelisms: Vec<Parallelism>) -> Self {
        RailDimension {
            n,
            r,
            k,
            s: if k == 0 { 0 } else { r / k },
            parallelisms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalTopology {
    pub dims: Vec<RailDimension>,
    pub total_ocs: u64,
    pub mcm_count: u64,
}

impl PhysicalTopology {
    /// `S = sum_i (prod_{j != i} N_j) * S_i`.
    pub fn new(dims: Vec<RailDimension>, mcm_count: u64) -> Self {
        let total_ocs = ocs_count(&dims);
        PhysicalTopology {
            dims,
            total_ocs,
            mcm_count,
        }
    }

    pub fn links_used(&self) -> u64 {
        self.dims.iter().map(|d| d.r).sum()
    }

    /// Port-level wiring plus the per-phase OCS cross-connects that realize
    /// the logical rings on every rail.
    pub fn wiring_plan(&self, logical: &LogicalTopology) -> WiringPlan {
        let strides: Vec<u64> = self
            .dims
            .iter()
            .scan(1u64, |acc, d| {
                let s = *acc;
                *acc *= d.n;
                Some(s)
            })
            .collect();
        let mut dims = Vec::new();
        let mut link_offset = 0;
        let mut next_ocs = 0;
        let mut cross = Vec::new();
        for (i, d) in self.dims.iter().enumerate() {
            let rails = self.mcm_count / d.n.max(1);
            let mut switches = Vec::new();
            for rail in 0..rails {
                let base = rail_base(rail, i, &self.dims, &strides);
                let members: Vec<u64> = (0..d.n).map(|c| base + c * strides[i]).collect();
                for g in 0..d.s {
                    let mut ports = Vec::new();
                    for (pos, &mcm) in members.iter().enumerate() {
                        for t in 0..d.k {
                            ports.push(PortAssignment {
                                mcm,
                                mcm_link: link_offset + g * d.k + t,
                                ocs_port: pos as u64 * d.k + t,
                            });
                        }
                    }
                    switches.push(OcsWiring {
                        id: next_ocs,
                        rail,
                        group: g,
                        ports,
                    });
                    next_ocs += 1;
                }
                for phase in [PhaseTag::AttentionPhase, PhaseTag::FfnPhase] {
                    let connections = rail_connections(d, &members, logical, phase);
                    if !connections.is_empty() {
                        cross.push(PhaseCrossConnect {
                            phase,
                            dim: i,
                            rail,
                            connections,
                        });
                    }
                }
            }
            dims.push(DimWiring {
                index: i,
                n: d.n,
                r: d.r,
                k: d.k,
                s: d.s,
                parallelisms: d.parallelisms.clone(),
                switches,
            });
            link_offset += d.r;
        }
        WiringPlan {
            mcm_count: self.mcm_count,
            total_ocs: self.total_ocs,
            dims,
            cross_connects: cross,
        }
    }
}

fn rail_base(rail: u64, dim: usize, dims: &[RailDimension], strides: &[u64]) -> u64 {
    let mut rest = rail;
    let mut base = 0;
    for (j, d) in dims.iter().enumerate() {
        if j == dim {
            continue;
        }
        base += (rest % d.n) * strides[j];
        rest /= d.n;
    }
    base
}

/// MCM pairs a rail's OCSs connect in one phase. A dimension hosting two
/// parallelisms `(p, q)` with degrees `(a, b)` indexes its rail as `u + a * v`.
fn rail_connections(
    d: &RailDimension,
    members: &[u64],
    logical: &LogicalTopology,
    phase: PhaseTag,
) -> Vec<(u64, u64, Parallelism)> {
    let reuse = logical
        .reuse
        .filter(|r| d.parallelisms.contains(&r.pair.0) && d.parallelisms.contains(&r.pair.1));
    let mut out = Vec::new();
    let mut stride = 1u64;
    for &p in &d.parallelisms {
        let Some(g) = logical.group(p) else { continue };
        let a = g.group_size;
        let active = match reuse {
            Some(r) if phase == PhaseTag::AttentionPhase => p == r.pair.0,
            Some(r) => p == r.pair.1,
            None => true,
        };
        if active {
            for start in 0..d.n {
                if (start / stride) % a != 0 {
                    continue;
                }
                let ring: Vec<u64> = (0..a).map(|u| members[(start + u * stride) as usize]).collect();
                match g.shape {
                    Shape::Ring => {
                        for u in 0..a as usize {
                            out.push((ring[u], ring[(u + 1) % a as usize], p));
                        }
                    }
                    Shape::FullyConnected => {
                        for u in 0..a as usize {
                            for w in u + 1..a as usize {
                                out.push((ring[u], ring[w], p));
                            }
                        }
                    }
                }
            }
        }
        stride *= a;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortAssignment {
    pub mcm: u64,
    pub mcm_link: u64,
    pub ocs_port: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsWiring {
    pub id: u64,
    pub rail: u64,
    pub group: u64,
    pub ports: Vec<PortAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimWiring {
    pub index: usize,
    pub n: u64,
    pub r: u64,
    pub k: u64,
    pub s: u64,
    pub parallelisms: Vec<Parallelism>,
    pub switches: Vec<OcsWiring>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCrossConnect {
    pub phase: PhaseTag,
    pub dim: usize,
    pub rail: u64,
    pub connections: Vec<(u64, u64, Parallelism)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WiringPlan {
    pub mcm_count: u64,
    pub total_ocs: u64,
    pub dims: Vec<DimWiring>,
    pub cross_connects: Vec<PhaseCrossConnect>,
}

pub(crate) fn ocs_count(dims: &[RailDimension]) -> u64 {
    (0..dims.len())
        .map(|i| {
            let others: u64 = dims
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, d)| d.n)
                .product();
            others * dims[i].s
        })
        .sum()
}

/// Largest `k` dividing `r` with `k * n <= ports`, so every link of the
/// dimension lands on an OCS.
fn best_k(n: u64, r: u64, ports: u64) -> Option<u64> {
    if n == 0 || n > ports || r == 0 {
        return None;
    }
    let cap = (ports / n).min(r);
    (1..=cap).rev().find(|k| r % k == 0)
}

#[derive(Debug, Clone)]
struct Item {
    members: Vec<Parallelism>,
    degree: u64,
    links: u64,
    /// A reuse pair already fills its dimension.
    sealed: bool,
}

fn partitions(items: &[Item]) -> Vec<Vec<Vec<usize>>> {
    fn rec(rest: &[usize], items: &[Item], acc: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        let Some((&first, tail)) = rest.split_first() else {
            out.push(acc.clone());
            return;
        };
        acc.push(vec![first]);
        rec(tail, items, acc, out);
        acc.pop();
        if items[first].sealed {
            return;
        }
        for (i, &other) in tail.iter().enumerate() {
            if items[other].sealed {
                continue;
            }
            let remaining: Vec<usize> = tail
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &x)| x)
                .collect();
            acc.push(vec![first, other]);
            rec(&remaining, items, acc, out);
            acc.pop();
        }
    }
    let idx: Vec<usize> = (0..items.len()).collect();
    let mut out = Vec::new();
    rec(&idx, items, &mut Vec::new(), &mut out);
    out
}

/// Enumerates parallelism-to-rail-dimension mappings (one or two
/// parallelisms per dimension, reuse pairs sharing one) and returns the
/// wiring with the fewest OCSs. Ties prefer fewer dimensions, then the
/// lexicographically smallest `(N_1, N_2, ...)`.
pub fn derive_physical(
    logical: &LogicalTopology,
    mcm_count: u64,
    total_links: u64,
    ports: u64,
) -> Result<PhysicalTopology, NetworkError> {
    let mut items = Vec::new();
    if let Some(r) = logical.reuse {
        let (a, b) = (logical.group(r.pair.0), logical.group(r.pair.1));
        if let (Some(a), Some(b)) = (a, b) {
            items.push(Item {
                members: vec![a.parallelism, b.parallelism],
                degree: a.group_size * b.group_size,
                links: r.links,
                sealed: true,
            });
        }
    }
    for g in &logical.groups {
        if g.group_size <= 1 || items.iter().any(|it| it.members.contains(&g.parallelism)) {
            continue;
        }
        items.push(Item {
            members: vec![g.parallelism],
            degree: g.group_size,
            links: g.links,
            sealed: false,
        });
    }
    let product: u64 = items.iter().map(|it| it.degree).product();
    if product != mcm_count {
        return Err(NetworkError::NoFeasibleMapping(format!(
            "inter-MCM group sizes multiply to {product}, cluster has {mcm_count} MCMs"
        )));
    }
    let used: u64 = items.iter().map(|it| it.links).sum();
    if used > total_links {
        return Err(NetworkError::NoFeasibleMapping(format!(
            "{used} links requested, {total_links} available"
        )));
    }
    if items.is_empty() {
        return Ok(PhysicalTopology::new(Vec::new(), mcm_count));
    }

    let mut best: Option<(u64, usize, Vec<u64>, Vec<RailDimension>)> = None;
    for part in partitions(&items) {
        if part.len() > 4 {
            continue;
        }
        let mut dims = Vec::with_capacity(part.len());
        let mut feasible = true;
        for block in &part {
            let n: u64 = block.iter().map(|&i| items[i].degree).product();
            let r: u64 = block.iter().map(|&i| items[i].links).sum();
            let mut members: Vec<Parallelism> = block.iter().flat_map(|&i| items[i].members.clone()).collect();
            members.sort_by_key(|&p| order(p));
            match best_k(n, r, ports) {
                Some(k) => dims.push(RailDimension::new(n, r, k, members)),
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        dims.sort_by_key(|d| order(d.parallelisms[0]));
        let s = ocs_count(&dims);
        let ns: Vec<u64> = dims.iter().map(|d| d.n).collect();
        let key = (s, dims.len(), ns);
        let better = match &best {
            None => true,
            Some((bs, bl, bn, _)) => key < (*bs, *bl, bn.clone()),
        };
        if better {
            best = Some((key.0, key.1, key.2, dims));
        }
    }
    best.map(|(_, _, _, dims)| PhysicalTopology::new(dims, mcm_count))
        .ok_or_else(|| {
            NetworkError::NoFeasibleMapping(format!("every mapping puts more than {ports} ports on one OCS"))
        })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyViolation {
    McmProductMismatch { product: u64, mcm_count: u64 },
    LinkOvercommit { used: u64, available: u64 },
    PortOverflow { dim: usize, ports_needed: u64, ports: u64 },
    OcsGroupMismatch { dim: usize, s: u64, expected: u64 },
    OcsCountMismatch { total: u64, expected: u64 },
    TooManyDimensions(usize),
    DegenerateDimension { dim: usize },
}

/// Itemized constraint check of a wiring against the package link budget and
/// the OCS port count.
pub fn validate_topology(phys: &PhysicalTopology, total_links: u64, ports: u64) -> Vec<TopologyViolation> {
    let mut v = Vec::new();
    let product: u64 = phys.dims.iter().map(|d| d.n).product();
    if product != phys.mcm_count {
        v.push(TopologyViolation::McmProductMismatch {
            product,
            mcm_count: phys.mcm_count,
        });
    }
    let used = phys.links_used();
    if used > total_links {
        v.push(TopologyViolation::LinkOvercommit {
            used,
            available: total_links,
        });
    }
    if phys.dims.len() > 4 {
        v.push(TopologyViolation::TooManyDimensions(phys.dims.len()));
    }
    for (i, d) in phys.dims.iter().enumerate() {
        if d.n < 2 || d.k == 0 {
            v.push(TopologyViolation::DegenerateDimension { dim: i });
            continue;
        }
        if d.k * d.n > ports {
            v.push(TopologyViolation::PortOverflow {
                dim: i,
                ports_needed: d.k * d.n,
                ports,
            });
        }
        if d.s != d.r / d.k {
            v.push(TopologyViolation::OcsGroupMismatch {
                dim: i,
                s: d.s,
                expected: d.r / d.k,
            });
        }
    }
    let expected = ocs_count(&phys.dims);
    if phys.total_ocs != expected {
        v.push(TopologyViolation::OcsCountMismatch {
            total: phys.total_ocs,
            expected,
        });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{allocate_links, build_logical, LogicalGroup};
    use crate::workload::ParallelStrategy;
    use std::collections::{BTreeMap, BTreeSet};
    use Parallelism::*;

    fn logical(groups: &[(Parallelism, u64, u64)]) -> LogicalTopology {
        LogicalTopology {
            groups: groups
                .iter()
                .map(|&(p, n, l)| LogicalGroup {
                    parallelism: p,
                    shape: Shape::Ring,
                    group_size: n,
                    links: l,
                })
                .collect(),
            reuse: None,
            phase_configs: BTreeMap::new(),
        }
    }

    #[test]
    fn two_dims_ocs_formula() {
        let dims = vec![
            RailDimension::new(4, 2, 1, vec![Cp]),
            RailDimension::new(4, 1, 1, vec![Dp]),
        ];
        assert_eq!(dims[0].s, 2);
        assert_eq!(dims[1].s, 1);
        let t = PhysicalTopology::new(dims, 16);
        assert_eq!(t.total_ocs, 12);
        assert!(validate_topology(&t, 3, 64).is_empty());
    }

    #[test]
    fn single_dimension() {
        let t = derive_physical(&logical(&[(Dp, 8, 32)]), 8, 32, 64).unwrap();
        assert_eq!(t.dims.len(), 1);
        assert_eq!(t.dims[0].k, 8);
        assert_eq!(t.total_ocs, 32 / 8);
    }

    #[test]
    fn overcommit_and_boundary() {
        let t = PhysicalTopology::new(vec![RailDimension::new(8, 33, 8, vec![Dp])], 8);
        assert!(
            validate_topology(&t, 32, 64).contains(&TopologyViolation::LinkOvercommit {
                used: 33,
                available: 32
            })
        );
        let t = PhysicalTopology::new(vec![RailDimension::new(8, 32, 8, vec![Dp])], 8);
        assert!(validate_topology(&t, 32, 64).is_empty());
        let t = PhysicalTopology::new(vec![RailDimension::new(8, 32, 16, vec![Dp])], 8);
        assert_eq!(validate_topology(&t, 32, 64).len(), 1);
    }

    #[test]
    fn reuse_pair_shares_dimension() {
        let s = ParallelStrategy::new(8, 4, 1, 16, 4);
        let v = BTreeMap::from([(Cp, 300.0), (Ep, 200.0), (Dp, 50.0)]);
        let alloc = allocate_links(32, &v, Some((Cp, Ep))).unwrap();
        let l = build_logical(&BTreeSet::from([Cp, Ep, Dp]), &s, &alloc, Shape::Ring).unwrap();
        let t = derive_physical(&l, 64, 32, 64).unwrap();
        let dim = t.dims.iter().find(|d| d.parallelisms.contains(&Cp)).unwrap();
        assert_eq!(dim.parallelisms, vec![Cp, Ep]);
        assert_eq!(dim.n, 16);
        assert!(validate_topology(&t, 32, 64).is_empty());
    }

    #[test]
    fn infeasible_when_rail_exceeds_ports() {
        assert!(matches!(
            derive_physical(&logical(&[(Dp, 32, 4)]), 32, 4, 16),
            Err(NetworkError::NoFeasibleMapping(_))
        ));
    }

    #[test]
    fn wiring_plan_is_consistent() {
        let s = ParallelStrategy::new(8, 2, 1, 8, 2);
        let v = BTreeMap::from([(Cp, 300.0), (Ep, 200.0), (Dp, 50.0)]);
        let alloc = allocate_links(16, &v, Some((Cp, Ep))).unwrap();
        let l = build_logical(&BTreeSet::from([Cp, Ep, Dp]), &s, &alloc, Shape::Ring).unwrap();
        let t = derive_physical(&l, 16, 16, 64).unwrap();
        let plan = t.wiring_plan(&l);
        let switches: usize = plan.dims.iter().map(|d| d.switches.len()).sum();
        assert_eq!(switches as u64, t.total_ocs);
        for d in &plan.dims {
            for sw in &d.switches {
                assert!(sw.ports.len() as u64 <= 64);
            }
        }
        // Attention connects CP rings, FFN connects EP rings on the shared dimension.
        let reuse_dim = plan.dims.iter().position(|d| d.parallelisms == vec![Cp, Ep]).unwrap();
        for cc in plan.cross_connects.iter().filter(|c| c.dim == reuse_dim) {
            let want = if cc.phase == PhaseTag::AttentionPhase { Cp } else { Ep };
            assert!(cc.connections.iter().all(|c| c.2 == want));
        }
    }
}
