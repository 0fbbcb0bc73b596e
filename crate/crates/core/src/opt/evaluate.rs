use crate::arch::{cost_model, CostBreakdown, McmArch, McmVars, ScaleOut, TechParams, H100_AREA, H100_TFLOPS};
use crate::network::{
    allocate_links, build_logical, derive_physical, map_parallelisms, LogicalTopology, Mapping, NetworkError,
    PhysicalTopology, RailDimension, Shape,
};
use crate::sim::{
    op_cost, op_time, simulate_iteration, Channel, DiagnosticLog, DieSpec, LinkPlan, SimError, SimOptions, SimResult,
};
use crate::workload::{
    project_traffic, validate_strategy, ComputeOp, ModelConfig, ParallelStrategy, Parallelism, StrategyError,
    TrafficOptions,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Cluster organisations compared in the scaling experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClusterKind {
    /// MCMs with traffic-proportional optical links and fewest-OCS wiring.
    ChipLight,
    /// Two rail dimensions with links split evenly between them.
    RailX,
    /// MCMs with an electrical scale-out fabric.
    ChipletIb,
    /// GPU nodes with NVLink scale-up and an electrical scale-out fabric.
    GpuClos,
}

impl ClusterKind {
    pub const ALL: [ClusterKind; 4] = [
        ClusterKind::ChipLight,
        ClusterKind::RailX,
        ClusterKind::ChipletIb,
        ClusterKind::GpuClos,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ClusterKind::ChipLight => "ChipLight",
            ClusterKind::RailX => "RailX-like",
            ClusterKind::ChipletIb => "Chiplet+IB",
            ClusterKind::GpuClos => "GPU+clos",
        }
    }
}

/// Hardware of the GPU and electrical-fabric baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinePreset {
    pub gpus_per_node: u64,
    /// GB/s per GPU.
    pub nvlink_bw: f64,
    /// GB/s per device of the electrical scale-out fabric.
    pub ib_bw: f64,
    pub gpu_tflops: f64,
    pub gpu_area: f64,
    pub gpu_mem_bw: f64,
    pub gpu_mem_cap: f64,
    /// HBM stacks per GPU, for costing.
    pub gpu_hbm: u64,
}

impl Default for BaselinePreset {
    fn default() -> Self {
        BaselinePreset {
            gpus_per_node: 8,
            nvlink_bw: 900.0,
            ib_bw: 60.0,
            gpu_tflops: H100_TFLOPS,
            gpu_area: H100_AREA,
            gpu_mem_bw: 3350.0,
            gpu_mem_cap: 80.0,
            gpu_hbm: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub kind: ClusterKind,
    /// Allow CP/EP link sharing when the phase gap permits it.
    pub reuse: bool,
    /// Try a fully-connected EP group alongside the ring.
    pub fc_ep: bool,
    pub sim: SimOptions,
    pub baseline: BaselinePreset,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kind: ClusterKind::ChipLight,
            reuse: true,
            fc_ep: true,
            sim: SimOptions::default(),
            baseline: BaselinePreset::default(),
        }
    }
}

/// One fully evaluated (architecture, strategy, topology) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub kind: ClusterKind,
    pub arch: McmArch,
    pub strategy: ParallelStrategy,
    pub mapping: Mapping,
    pub logical: Option<LogicalTopology>,
    pub physical: Option<PhysicalTopology>,
    pub result: SimResult,
    pub cost: CostBreakdown,
}

impl DesignPoint {
    pub fn throughput(&self) -> f64 {
        self.result.throughput
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.total
    }

    pub fn reuse_active(&self) -> bool {
        self.logical.as_ref().is_some_and(|l| l.reuse.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl EvalError {
    /// Diagnostic the planner can act on, when the failure has one.
    pub fn log(&self) -> Option<DiagnosticLog> {
        match self {
            EvalError::Sim(SimError::CapacityExceeded { need_gb, have_gb }) => {
                Some(DiagnosticLog::capacity(*need_gb, *have_gb))
            }
            _ => None,
        }
    }
}

/// An H100-class GPU cluster with the same total compute, described as
/// single-die "packages" grouped into NVLink nodes.
pub fn gpu_arch(compute_total: f64, preset: &BaselinePreset) -> McmArch {
    let gpus = (compute_total / preset.gpu_tflops).round().max(1.0) as u64;
    let node = preset.gpus_per_node.min(gpus).max(1);
    McmArch {
        vars: McmVars {
            n: gpus.div_ceil(node),
            x: 1,
            y: node,
            m: preset.gpu_hbm,
            o: 0,
            r: 0.0,
        },
        compute_total,
        die_perf: compute_total / gpus as f64,
        die_area: preset.gpu_area,
        die_edge: preset.gpu_area.sqrt(),
        links: 0,
        b_p: 0.0,
        mem_bw_per_die: preset.gpu_mem_bw,
        mem_cap_per_die: preset.gpu_mem_cap,
        o_max: 0,
    }
}

/// Shortest compute gap between the CP all-gather and the EP all-to-all
/// (attention through router) and back (next layer's norm and QKV).
pub fn reuse_window(model: &ModelConfig, s: &ParallelStrategy, die: &DieSpec, opts: &SimOptions) -> f64 {
    let t = |ops: &[ComputeOp]| -> f64 {
        ops.iter()
            .map(|&op| op_time(op_cost(op, model, s), die.perf, opts.efficiency, die.mem_bw))
            .sum()
    };
    let to_ep = t(&[
        ComputeOp::Attention,
        ComputeOp::OutProj,
        ComputeOp::FfnNorm,
        ComputeOp::Router,
    ]);
    let to_cp = t(&[ComputeOp::AttnNorm, ComputeOp::QkvProj]);
    to_ep.min(to_cp)
}

/// Inter-MCM traffic per axis. Without an outer DP axis, gradient traffic
/// rides the EP links.
fn inter_volumes(model: &ModelConfig, s: &ParallelStrategy, mapping: &Mapping) -> BTreeMap<Parallelism, f64> {
    let prof = project_traffic(model, s, &TrafficOptions::default());
    let mut v: BTreeMap<Parallelism, f64> = mapping.inter.iter().map(|&p| (p, prof.volume(p))).collect();
    if !mapping.inter.contains(&Parallelism::Dp) && s.dp > 1 {
        if let Some(ep) = v.get_mut(&Parallelism::Ep) {
            *ep += prof.volume(Parallelism::Dp);
        }
    }
    v
}

fn reuse_pair(
    model: &ModelConfig,
    s: &ParallelStrategy,
    members: &BTreeSet<Parallelism>,
    die: &DieSpec,
    tech: &TechParams,
    opts: &EvalOptions,
) -> Option<(Parallelism, Parallelism)> {
    let both = members.contains(&Parallelism::Cp) && members.contains(&Parallelism::Ep);
    let gap_ok = || reuse_window(model, s, die, &opts.sim) >= tech.ocs_switch_latency * 1e-3;
    (opts.reuse && both && model.is_moe() && gap_ok()).then_some((Parallelism::Cp, Parallelism::Ep))
}

/// Strategy validation, traffic projection, topology synthesis, simulation
/// and costing of one design point.
pub fn evaluate_point(
    model: &ModelConfig,
    arch: &McmArch,
    s: &ParallelStrategy,
    tech: &TechParams,
    opts: &EvalOptions,
) -> Result<DesignPoint, EvalError> {
    validate_strategy(model, *s, arch.total_dies())?;
    let die = DieSpec::from(arch);
    let prof = project_traffic(model, s, &TrafficOptions::default());
    let mapping = map_parallelisms(s, arch.dies_per_mcm(), &prof.volumes())?;
    mapping.check_fill(s, arch.dies_per_mcm())?;
    let point = |result: SimResult, cost: CostBreakdown, logical, physical| DesignPoint {
        kind: opts.kind,
        arch: arch.clone(),
        strategy: *s,
        mapping: mapping.clone(),
        logical,
        physical,
        result,
        cost,
    };

    match opts.kind {
        ClusterKind::GpuClos => {
            let plan = LinkPlan::electrical(s, &mapping, opts.baseline.nvlink_bw, opts.baseline.ib_bw);
            let result = simulate_iteration(model, s, &die, &plan, &opts.sim)?;
            Ok(point(
                result,
                cost_model(arch, ScaleOut::Electrical { ports_per_die: 1 }, tech),
                None,
                None,
            ))
        }
        ClusterKind::ChipletIb => {
            let plan = LinkPlan::electrical(s, &mapping, arch.nop_bw_per_die(), opts.baseline.ib_bw);
            let result = simulate_iteration(model, s, &die, &plan, &opts.sim)?;
            Ok(point(
                result,
                cost_model(arch, ScaleOut::Electrical { ports_per_die: 1 }, tech),
                None,
                None,
            ))
        }
        ClusterKind::ChipLight => {
            let volumes = inter_volumes(model, s, &mapping);
            let pair = reuse_pair(model, s, &mapping.inter, &die, tech, opts);
            let alloc = allocate_links(arch.links, &volumes, pair)?;
            let mut best: Option<(SimResult, LogicalTopology, PhysicalTopology)> = None;
            let shapes: &[Shape] = if opts.fc_ep && mapping.inter.contains(&Parallelism::Ep) {
                &[Shape::Ring, Shape::FullyConnected]
            } else {
                &[Shape::Ring]
            };
            for &shape in shapes {
                let logical = build_logical(&mapping.inter, s, &alloc, shape)?;
                if shape == Shape::FullyConnected && logical.group(Parallelism::Ep).map(|g| g.shape) != Some(shape) {
                    continue;
                }
                let physical = derive_physical(&logical, arch.vars.n, arch.links, tech.ocs_port_count)?;
                let plan = LinkPlan::optical(arch, s, &mapping, &logical, tech);
                let result = simulate_iteration(model, s, &die, &plan, &opts.sim)?;
                // Ring wins ties.
                if best.as_ref().is_none_or(|b| result.iteration_time < b.0.iteration_time) {
                    best = Some((result, logical, physical));
                }
            }
            let (result, logical, physical) = best.expect("ring shape always evaluated");
            let cost = cost_model(
                arch,
                ScaleOut::Optical {
                    ocs: physical.total_ocs,
                },
                tech,
            );
            Ok(point(result, cost, Some(logical), Some(physical)))
        }
        ClusterKind::RailX => {
            let (plan, physical) = railx_plan(model, arch, s, &mapping, &die, tech, opts)?;
            let result = simulate_iteration(model, s, &die, &plan, &opts.sim)?;
            let cost = cost_model(
                arch,
                ScaleOut::Optical {
                    ocs: physical.total_ocs,
                },
                tech,
            );
            Ok(point(result, cost, None, Some(physical)))
        }
    }
}

/// Two-dimensional rail grid `N_1 x N_2` with `N_1` the largest divisor of
/// `N` not above `sqrt(N)` and half of the links on each dimension. Inter
/// axes are packed onto the dimensions by descending traffic; an axis that
/// fits neither dimension alone may span both. Links inside a dimension are
/// split by traffic share, with CP/EP reuse when both share it.
pub fn railx_plan(
    model: &ModelConfig,
    arch: &McmArch,
    s: &ParallelStrategy,
    mapping: &Mapping,
    die: &DieSpec,
    tech: &TechParams,
    opts: &EvalOptions,
) -> Result<(LinkPlan, PhysicalTopology), NetworkError> {
    let n = arch.vars.n;
    let n1 = (1..=n).filter(|d| n % d == 0 && d * d <= n).max().unwrap_or(1);
    let sizes: Vec<u64> = if n1 == 1 { vec![n] } else { vec![n1, n / n1] };
    let share = |i: usize| {
        let k = sizes.len() as u64;
        arch.links / k + u64::from((i as u64) < arch.links % k)
    };

    let volumes = inter_volumes(model, s, mapping);
    let mut order: Vec<Parallelism> = volumes.keys().copied().collect();
    order.sort_by(|a, b| volumes[b].total_cmp(&volumes[a]));
    let mut rem = sizes.clone();
    let mut members: Vec<BTreeSet<Parallelism>> = vec![BTreeSet::new(); sizes.len()];
    for &p in &order {
        let d = s.axis_degree(p);
        if let Some(i) = (0..rem.len()).find(|&i| rem[i] % d == 0) {
            rem[i] /= d;
            members[i].insert(p);
        } else if rem.len() == 2 && rem[0] > 1 && rem[1] > 1 && rem[0] * rem[1] == d {
            rem = vec![1, 1];
            members[0].insert(p);
            members[1].insert(p);
        } else {
            return Err(NetworkError::NoFeasibleMapping(format!(
                "{} group of {d} does not fit the rail grid",
                p.label()
            )));
        }
    }
    if n > 1 && rem.iter().any(|&r| r != 1) {
        return Err(NetworkError::NoFeasibleMapping(format!(
            "inter groups do not tile the {sizes:?} grid"
        )));
    }

    let dies = arch.dies_per_mcm() as f64;
    let mut axes: BTreeMap<Parallelism, Channel> = BTreeMap::new();
    let mut dims = Vec::new();
    for (i, set) in members.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        let links = share(i);
        let v: BTreeMap<Parallelism, f64> = set.iter().map(|&p| (p, volumes[&p])).collect();
        let pair = reuse_pair(model, s, set, die, tech, opts);
        let alloc = allocate_links(links, &v, pair)?;
        for &p in set {
            let bw = alloc.links_for(p) as f64 * tech.optical_link_bw / dies;
            let e = axes.entry(p).or_insert(Channel {
                bw,
                shape: Shape::Ring,
                intra: false,
            });
            e.bw = e.bw.min(bw);
        }
        let k = (1..=links.min(tech.ocs_port_count / sizes[i].max(1)))
            .rev()
            .find(|k| links % k == 0)
            .ok_or_else(|| NetworkError::NoFeasibleMapping(format!("rail of {} exceeds OCS ports", sizes[i])))?;
        dims.push(RailDimension::new(sizes[i], links, k, set.iter().copied().collect()));
    }
    for &p in &mapping.intra {
        axes.insert(
            p,
            Channel {
                bw: arch.nop_bw_per_die(),
                shape: Shape::Ring,
                intra: true,
            },
        );
    }
    Ok((LinkPlan::from_axes(s, &axes), PhysicalTopology::new(dims, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::derive_mcm;

    fn small_moe() -> ModelConfig {
        let mut m = ModelConfig::toy_dense(4, 512, 256, 1024, 64);
        m.num_heads = 8;
        m.head_dim = 64;
        m.num_experts = 16;
        m.top_k_experts = 4;
        m
    }

    fn arch(n: u64) -> McmArch {
        let v = McmVars {
            n,
            x: 2,
            y: 2,
            m: 6,
            o: 4,
            r: 0.5,
        };
        derive_mcm(n as f64 * 4.0 * H100_TFLOPS, v, &TechParams::default()).unwrap()
    }

    #[test]
    fn chiplight_point_is_consistent() {
        let m = small_moe();
        let a = arch(16);
        let s = ParallelStrategy::new(4, 4, 1, 4, 4).with_microbatches(4);
        let p = evaluate_point(&m, &a, &s, &TechParams::default(), &EvalOptions::default()).unwrap();
        assert!(p.throughput() > 0.0 && p.total_cost() > 0.0);
        let phys = p.physical.as_ref().unwrap();
        assert!(crate::network::validate_topology(phys, a.links, 128).is_empty());
        assert_eq!(p.logical.as_ref().unwrap().links_used(), a.links);
    }

    #[test]
    fn reuse_never_hurts() {
        let m = small_moe();
        let a = arch(16);
        let s = ParallelStrategy::new(4, 4, 1, 4, 4).with_microbatches(4);
        // The toy's phase gap is far below a MEMS switching time.
        let tech = TechParams {
            ocs_switch_latency: 0.0,
            ..TechParams::default()
        };
        let on = evaluate_point(&m, &a, &s, &tech, &EvalOptions::default()).unwrap();
        let off = evaluate_point(
            &m,
            &a,
            &s,
            &tech,
            &EvalOptions {
                reuse: false,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert!(on.reuse_active());
        assert!(!off.reuse_active());
        assert!(on.throughput() >= off.throughput());
    }

    #[test]
    fn reuse_needs_a_long_enough_gap() {
        let m = small_moe();
        let a = arch(16);
        let s = ParallelStrategy::new(4, 4, 1, 4, 4).with_microbatches(4);
        let slow_ocs = TechParams {
            ocs_switch_latency: 1e6,
            ..TechParams::default()
        };
        let p = evaluate_point(&m, &a, &s, &slow_ocs, &EvalOptions::default()).unwrap();
        assert!(!p.reuse_active());
    }

    #[test]
    fn baselines_evaluate() {
        let m = small_moe();
        let a = arch(16);
        let tech = TechParams::default();
        let s = ParallelStrategy::new(4, 4, 1, 4, 4).with_microbatches(4);
        for kind in [ClusterKind::RailX, ClusterKind::ChipletIb] {
            let p = evaluate_point(
                &m,
                &a,
                &s,
                &tech,
                &EvalOptions {
                    kind,
                    ..EvalOptions::default()
                },
            )
            .unwrap();
            assert!(p.throughput() > 0.0);
        }
        let g = gpu_arch(a.compute_total, &BaselinePreset::default());
        assert_eq!(g.total_dies(), 64);
        let s = ParallelStrategy::new(8, 2, 1, 4, 4).with_microbatches(4);
        let p = evaluate_point(
            &m,
            &g,
            &s,
            &tech,
            &EvalOptions {
                kind: ClusterKind::GpuClos,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert!(p.throughput() > 0.0);
    }

    #[test]
    fn underfilled_package_is_rejected() {
        let m = small_moe();
        let a = arch(16);
        let s = ParallelStrategy::new(2, 8, 1, 4, 4).with_microbatches(4);
        assert!(matches!(
            evaluate_point(&m, &a, &s, &TechParams::default(), &EvalOptions::default()),
            Err(EvalError::Network(NetworkError::McmNotFilled { product: 2, dies: 4 }))
        ));
    }
}
