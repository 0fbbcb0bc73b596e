use super::collective::collective_time;
use super::compute::{compute_time, op_cost, op_time, OpCost};
use super::links::LinkPlan;
use super::memory::{check_capacity, memory_footprint};
use super::SimError;
use crate::workload::{
    collective_instances, phase_schedule, CollectiveInstance, CollectiveKind, LayerPhase, ModelConfig,
    ParallelStrategy, Parallelism, PhaseTag, TrafficOptions,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Die-level hardware a simulation needs, independent of how the package
/// was derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DieSpec {
    /// TFLOPS.
    pub perf: f64,
    /// GB/s.
    pub mem_bw: f64,
    /// GB.
    pub mem_cap: f64,
}

impl From<&crate::arch::McmArch> for DieSpec {
    fn from(a: &crate::arch::McmArch) -> Self {
        DieSpec {
            perf: a.die_perf,
            mem_bw: a.mem_bw_per_die,
            mem_cap: a.mem_cap_per_die,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Fraction of peak FLOPS matrix kernels reach.
    pub efficiency: f64,
    /// Hide the gradient all-gather behind backward compute.
    pub dp_overlap: bool,
    /// Recompute the forward pass during backward instead of storing it.
    pub recompute: bool,
    /// Per-step collective latency, seconds.
    pub alpha: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            efficiency: 0.6,
            dp_overlap: true,
            recompute: true,
            alpha: crate::arch::TechParams::default().step_latency(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bottleneck {
    Compute,
    Memory,
    NoP,
    Oi(Parallelism),
    Capacity,
}

impl Bottleneck {
    pub fn label(self) -> String {
        match self {
            Bottleneck::Oi(p) => format!("OI-{}", p.label()),
            other => format!("{other:?}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Compute" => Bottleneck::Compute,
            "Memory" => Bottleneck::Memory,
            "NoP" => Bottleneck::NoP,
            "Capacity" => Bottleneck::Capacity,
            _ => {
                let p = s.strip_prefix("OI-")?;
                Bottleneck::Oi(Parallelism::ALL.into_iter().find(|q| q.label() == p)?)
            }
        })
    }
}

/// Keys the class map by label so it stays a JSON object.
mod by_label {
    use super::Bottleneck;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<Bottleneck, f64>, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_map(m.iter().map(|(k, v)| (k.label(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<Bottleneck, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(de)?
            .into_iter()
            .map(|(k, v)| {
                Bottleneck::parse(&k)
                    .map(|b| (b, v))
                    .ok_or_else(|| D::Error::custom(format!("unknown bottleneck `{k}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticLog {
    pub compute_utilization: f64,
    pub mem_bw_utilization: f64,
    pub peak_memory_per_die: f64,
    pub memory_capacity_per_die: f64,
    /// Exposed communication per parallelism over one iteration, seconds.
    pub comm_exposed_time: BTreeMap<Parallelism, f64>,
    /// Bytes each device sends per iteration, per parallelism.
    pub comm_bytes: BTreeMap<Parallelism, f64>,
    /// Time of each bottleneck class, seconds.
    #[serde(with = "by_label")]
    pub class_time: BTreeMap<Bottleneck, f64>,
    pub bottleneck: Bottleneck,
}

impl DiagnosticLog {
    /// Log of a point that did not fit in memory.
    pub fn capacity(need_gb: f64, have_gb: f64) -> Self {
        DiagnosticLog {
            compute_utilization: 0.0,
            mem_bw_utilization: 0.0,
            peak_memory_per_die: need_gb,
            memory_capacity_per_die: have_gb,
            comm_exposed_time: BTreeMap::new(),
            comm_bytes: BTreeMap::new(),
            class_time: BTreeMap::new(),
            bottleneck: Bottleneck::Capacity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub iteration_time: f64,
    /// Tokens per second.
    pub throughput: f64,
    /// Seconds per iteration spent in each phase class; sums to the
    /// iteration time.
    pub phase_breakdown: BTreeMap<String, f64>,
    pub logs: DiagnosticLog,
}

/// Per-microbatch, per-stage totals.
#[derive(Default)]
struct Tally {
    compute: f64,
    compute_bound: f64,
    memory_bound: f64,
    flops: f64,
    bytes: f64,
    comm: BTreeMap<Parallelism, f64>,
    sent: BTreeMap<Parallelism, f64>,
}

impl Tally {
    fn op(&mut self, cost: OpCost, die: &DieSpec, opts: &SimOptions) {
        let t = op_time(cost, die.perf, opts.efficiency, die.mem_bw);
        let tc = compute_time(cost.flops, die.perf, opts.efficiency);
        self.compute += t;
        if tc >= t {
            self.compute_bound += t;
        } else {
            self.memory_bound += t;
        }
        self.flops += cost.flops;
        self.bytes += cost.bytes;
    }

    fn comm(&mut self, inst: &CollectiveInstance, times: f64, ch: super::Channel, die: &DieSpec, opts: &SimOptions) {
        let t = collective_time(
            inst.collective,
            inst.group_size,
            inst.payload_bytes(),
            ch.bw,
            opts.alpha,
            die.mem_bw,
            ch.shape,
        );
        *self.comm.entry(inst.parallelism).or_default() += t * times;
        *self.sent.entry(inst.parallelism).or_default() += inst.sent_bytes * times;
    }

    fn total(&self) -> f64 {
        self.compute + self.comm.values().sum::<f64>()
    }
}

/// One training iteration: every stage runs the per-layer phase list for
/// each microbatch forward and backward, the 1F1B pipeline adds `pp - 1`
/// microbatch slots of bubble, and the gradient all-gather is exposed only
/// beyond the backward compute it overlaps.
pub fn simulate_iteration(
    model: &ModelConfig,
    s: &ParallelStrategy,
    die: &DieSpec,
    links: &LinkPlan,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    let fp = memory_footprint(model, s);
    check_capacity(&fp, die.mem_cap)?;

    let instances = collective_instances(model, s, &TrafficOptions::default());
    let find = |p: Parallelism, kind: CollectiveKind, phase: PhaseTag| {
        instances
            .iter()
            .find(|i| i.parallelism == p && i.collective == kind && i.phase == phase)
    };
    let channel = |p: Parallelism| links.channel(p).ok_or(SimError::MissingChannel(p));

    let sched = phase_schedule(model, s);
    let layers = sched.layers_per_stage.max(1) as f64;
    let bwd_factor = if opts.recompute { 3.0 } else { 2.0 };

    let mut fwd = Tally::default();
    let mut bwd = Tally::default();
    for (tally, list, factor) in [
        (&mut fwd, &sched.forward_layer, 1.0),
        (&mut bwd, &sched.backward_layer, bwd_factor),
    ] {
        for ph in list {
            match *ph {
                LayerPhase::Compute(op) => tally.op(op_cost(op, model, s).scale(factor * layers), die, opts),
                LayerPhase::Comm {
                    parallelism,
                    collective,
                    phase,
                } => {
                    if let Some(inst) = find(parallelism, collective, phase) {
                        tally.comm(inst, layers, channel(parallelism)?, die, opts);
                    }
                }
            }
        }
    }
    // Stage-boundary sends: activations forward, their gradients backward.
    if s.pp > 1 {
        let ch = channel(Parallelism::Pp)?;
        let msg =
            crate::sim::compute::local_tokens(model, s) * model.hidden_dim as f64 * model.bytes_per_element as f64
                / s.tp as f64;
        let t = collective_time(CollectiveKind::P2P, s.pp, msg, ch.bw, opts.alpha, die.mem_bw, ch.shape);
        *fwd.comm.entry(Parallelism::Pp).or_default() += t;
        *bwd.comm.entry(Parallelism::Pp).or_default() += t;
    }

    let mb = s.num_microbatches.max(1) as f64;
    let slots = mb + s.pp as f64 - 1.0;
    let per_mb = fwd.total() + bwd.total();

    let mut dp_time = 0.0;
    let mut dp_sent = 0.0;
    if s.dp > 1 {
        if let Some(inst) = find(Parallelism::Dp, CollectiveKind::AllGather, PhaseTag::BackwardPhase) {
            let ch = channel(Parallelism::Dp)?;
            dp_time = collective_time(
                inst.collective,
                inst.group_size,
                inst.payload_bytes(),
                ch.bw,
                opts.alpha,
                die.mem_bw,
                ch.shape,
            );
            dp_sent = inst.sent_bytes * inst.count as f64;
        }
    }
    let overlappable = if opts.dp_overlap { bwd.compute } else { 0.0 };
    let dp_exposed = (dp_time - overlappable).max(0.0);
    let iteration_time = slots * per_mb + dp_exposed;

    let mut breakdown = BTreeMap::new();
    breakdown.insert("compute".to_string(), mb * (fwd.compute + bwd.compute));
    let mut exposed = BTreeMap::new();
    for p in Parallelism::ALL {
        let c = mb * (fwd.comm.get(&p).unwrap_or(&0.0) + bwd.comm.get(&p).unwrap_or(&0.0));
        let c = if p == Parallelism::Dp { dp_exposed } else { c };
        if c > 0.0 || links.channel(p).is_some() && s.degree(p) > 1 {
            breakdown.insert(p.label().to_string(), c);
            exposed.insert(p, c * if p == Parallelism::Dp { 1.0 } else { slots / mb });
        }
    }
    breakdown.insert("bubble".to_string(), (slots - mb) * per_mb);

    let mut comm_bytes: BTreeMap<Parallelism, f64> = BTreeMap::new();
    for (p, v) in fwd.sent.iter().chain(bwd.sent.iter()) {
        *comm_bytes.entry(*p).or_default() += v * mb;
    }
    if let Some(inst) = find(Parallelism::Pp, CollectiveKind::P2P, PhaseTag::StageBoundary) {
        if s.pp > 1 {
            comm_bytes.insert(Parallelism::Pp, inst.sent_bytes * inst.count as f64);
        }
    }
    if dp_sent > 0.0 {
        comm_bytes.insert(Parallelism::Dp, dp_sent);
    }

    let mut class_time: BTreeMap<Bottleneck, f64> = BTreeMap::new();
    class_time.insert(Bottleneck::Compute, slots * (fwd.compute_bound + bwd.compute_bound));
    class_time.insert(Bottleneck::Memory, slots * (fwd.memory_bound + bwd.memory_bound));
    for (&p, &t) in &exposed {
        let class = match links.channel(p) {
            Some(ch) if ch.intra => Bottleneck::NoP,
            _ => Bottleneck::Oi(p),
        };
        *class_time.entry(class).or_default() += t;
    }
    let bottleneck = class_time
        .iter()
        .fold(
            (Bottleneck::Compute, -1.0),
            |best, (&k, &v)| if v > best.1 { (k, v) } else { best },
        )
        .0;

    let flops = mb * (fwd.flops + bwd.flops);
    let bytes = mb * (fwd.bytes + bwd.bytes);
    let logs = DiagnosticLog {
        compute_utilization: (flops / (die.perf * 1e12 * iteration_time)).clamp(0.0, 1.0),
        mem_bw_utilization: (bytes / (die.mem_bw * 1e9 * iteration_time)).clamp(0.0, 1.0),
        peak_memory_per_die: fp.total_gb(),
        memory_capacity_per_die: die.mem_cap,
        comm_exposed_time: exposed,
        comm_bytes,
        class_time,
        bottleneck,
    };
    let tokens = (model.global_batch * model.context_length) as f64;
    Ok(SimResult {
        iteration_time,
        throughput: tokens / iteration_time,
        phase_breakdown: breakdown,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Shape;
    use crate::sim::collective::oracle::ring_steps;
    use crate::sim::Channel;
    use crate::workload::{project_traffic, ComputeOp};
    use proptest::prelude::*;

    const DIE: DieSpec = DieSpec {
        perf: 100.0,
        mem_bw: 2000.0,
        mem_cap: 1e6,
    };

    fn plan(s: &ParallelStrategy, bw: f64) -> LinkPlan {
        let mut plan = LinkPlan::default();
        for p in Parallelism::ALL {
            if s.degree(p) > 1 {
                plan.channels.insert(
                    p,
                    Channel {
                        bw,
                        shape: Shape::Ring,
                        intra: p == Parallelism::Tp,
                    },
                );
            }
        }
        plan
    }

    fn moe() -> ModelConfig {
        let mut m = ModelConfig::toy_dense(4, 256, 128, 64, 16);
        m.num_experts = 8;
        m.top_k_experts = 2;
        m
    }

    #[test]
    fn single_die_is_pure_compute() {
        let m = ModelConfig::toy_dense(2, 64, 128, 16, 2);
        let s = ParallelStrategy::single();
        let opts = SimOptions::default();
        let r = simulate_iteration(&m, &s, &DIE, &LinkPlan::default(), &opts).unwrap();
        let ops = [
            ComputeOp::AttnNorm,
            ComputeOp::QkvProj,
            ComputeOp::Attention,
            ComputeOp::OutProj,
            ComputeOp::FfnNorm,
            ComputeOp::Ffn,
        ];
        let per_layer: f64 = ops
            .iter()
            .map(|&op| {
                let c = op_cost(op, &m, &s);
                op_time(c, DIE.perf, opts.efficiency, DIE.mem_bw)
                    + op_time(c.scale(3.0), DIE.perf, opts.efficiency, DIE.mem_bw)
            })
            .sum();
        assert!((r.iteration_time - 2.0 * per_layer).abs() <= 1e-12 * r.iteration_time);
        assert!(r.logs.comm_bytes.is_empty());
    }

    #[test]
    fn tp_only_phase_sum() {
        let m = ModelConfig::toy_dense(1, 64, 128, 16, 2);
        let s = ParallelStrategy::new(2, 1, 1, 1, 1);
        let opts = SimOptions::default();
        let bw = 300.0;
        let r = simulate_iteration(&m, &s, &DIE, &plan(&s, bw), &opts).unwrap();
        let compute: f64 = [
            ComputeOp::AttnNorm,
            ComputeOp::QkvProj,
            ComputeOp::Attention,
            ComputeOp::OutProj,
            ComputeOp::FfnNorm,
            ComputeOp::Ffn,
        ]
        .iter()
        .map(|&op| {
            let c = op_cost(op, &m, &s);
            op_time(c, DIE.perf, opts.efficiency, DIE.mem_bw)
                + op_time(c.scale(3.0), DIE.perf, opts.efficiency, DIE.mem_bw)
        })
        .sum();
        // Two AG and two RS of the full activation per pass.
        let act = (2 * 16 * 64 * 2) as f64;
        let one = ring_steps(CollectiveKind::AllGather, 2, act, bw * 1e9, opts.alpha);
        let want = compute + 8.0 * one;
        assert!(
            (r.iteration_time - want).abs() <= 1e-9 * want,
            "{} vs {}",
            r.iteration_time,
            want
        );
    }

    #[test]
    fn breakdown_sums_to_iteration() {
        let m = moe();
        let s = ParallelStrategy::new(2, 2, 2, 4, 2);
        let r = simulate_iteration(&m, &s, &DIE, &plan(&s, 50.0), &SimOptions::default()).unwrap();
        let sum: f64 = r.phase_breakdown.values().sum();
        assert!((sum - r.iteration_time).abs() <= 1e-9 * r.iteration_time);
        assert!(r.logs.compute_utilization > 0.0 && r.logs.compute_utilization <= 1.0);
        assert!(r.logs.mem_bw_utilization >= 0.0 && r.logs.mem_bw_utilization <= 1.0);
        let tokens = (m.global_batch * m.context_length) as f64;
        assert_eq!(r.throughput, tokens / r.iteration_time);
    }

    #[test]
    fn charged_bytes_match_traffic_profile() {
        let m = moe();
        for s in [
            ParallelStrategy::new(2, 2, 2, 4, 2),
            ParallelStrategy::new(1, 4, 1, 4, 4),
            ParallelStrategy::new(4, 1, 4, 1, 1),
        ] {
            let r = simulate_iteration(&m, &s, &DIE, &plan(&s, 50.0), &SimOptions::default()).unwrap();
            let prof = project_traffic(&m, &s, &TrafficOptions::default());
            for p in Parallelism::ALL {
                let want = prof.volume(p);
                let got = r.logs.comm_bytes.get(&p).copied().unwrap_or(0.0);
                assert!((want - got).abs() <= 1e-9 * want.max(1.0), "{p:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn dp_overlap_hides_gradients() {
        let m = ModelConfig::toy_dense(2, 64, 128, 16, 4);
        let s = ParallelStrategy::new(1, 1, 1, 4, 1);
        let on = simulate_iteration(&m, &s, &DIE, &plan(&s, 1000.0), &SimOptions::default()).unwrap();
        let off = SimOptions {
            dp_overlap: false,
            ..SimOptions::default()
        };
        let off = simulate_iteration(&m, &s, &DIE, &plan(&s, 1000.0), &off).unwrap();
        assert!(on.iteration_time <= off.iteration_time);
        assert!(off.phase_breakdown["DP"] > 0.0);
    }

    #[test]
    fn capacity_and_missing_channel() {
        let m = ModelConfig::default();
        let tiny = DieSpec { mem_cap: 1.0, ..DIE };
        assert!(matches!(
            simulate_iteration(
                &m,
                &ParallelStrategy::single(),
                &tiny,
                &LinkPlan::default(),
                &SimOptions::default()
            ),
            Err(SimError::CapacityExceeded { .. })
        ));
        let s = ParallelStrategy::new(2, 1, 1, 1, 1);
        let toy = ModelConfig::toy_dense(1, 64, 128, 16, 2);
        assert_eq!(
            simulate_iteration(&toy, &s, &DIE, &LinkPlan::default(), &SimOptions::default()),
            Err(SimError::MissingChannel(Parallelism::Tp))
        );
    }

    #[test]
    fn memory_bound_bottleneck() {
        let m = moe();
        let s = ParallelStrategy::single().with_microbatches(16);
        let slow = DieSpec { mem_bw: 1.0, ..DIE };
        let r = simulate_iteration(&m, &s, &slow, &LinkPlan::default(), &SimOptions::default()).unwrap();
        assert_eq!(r.logs.bottleneck, Bottleneck::Memory);
    }

    proptest! {
        #[test]
        fn bandwidth_monotone(bw in 1.0f64..1e3, bump in 1.0f64..4.0, which in 0usize..5, memk in 1.0f64..4.0) {
            let m = moe();
            let s = ParallelStrategy::new(2, 2, 2, 4, 2);
            let base = plan(&s, bw);
            let mut more = base.clone();
            let p = Parallelism::ALL[which];
            if let Some(ch) = more.channels.get_mut(&p) {
                ch.bw *= bump;
            }
            let opts = SimOptions::default();
            let a = simulate_iteration(&m, &s, &DIE, &base, &opts).unwrap();
            let b = simulate_iteration(&m, &s, &DIE, &more, &opts).unwrap();
            prop_assert!(b.iteration_time <= a.iteration_time);
            let fast_mem = DieSpec { mem_bw: DIE.mem_bw * memk, ..DIE };
            let c = simulate_iteration(&m, &s, &fast_mem, &base, &opts).unwrap();
            prop_assert!(c.iteration_time <= a.iteration_time);
            let again = simulate_iteration(&m, &s, &DIE, &base, &opts).unwrap();
            prop_assert_eq!(a, again);
        }
    }
}
