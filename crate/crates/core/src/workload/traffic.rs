use super::{ModelConfig, ParallelStrategy, Parallelism};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CollectiveKind {
    AllGather,
    ReduceScatter,
    AllToAll,
    P2P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseTag {
    AttentionPhase,
    FfnPhase,
    BackwardPhase,
    StageBoundary,
}

/// Tunable constants of the closed-form traffic formulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficOptions {
    /// Element width of synchronized gradients; `None` uses the activation width.
    pub grad_bytes_per_element: Option<u64>,
    /// Passes that repeat TP and EP collectives (forward + backward).
    pub tp_ep_passes: u64,
    /// Passes that repeat the ring-attention KV gather (forward + recompute).
    pub cp_passes: u64,
}

impl Default for TrafficOptions {
    fn default() -> Self {
        TrafficOptions {
            grad_bytes_per_element: None,
            tp_ep_passes: 2,
            cp_passes: 2,
        }
    }
}

/// One collective call as issued by every member of its group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectiveInstance {
    pub parallelism: Parallelism,
    pub collective: CollectiveKind,
    pub phase: PhaseTag,
    pub group_size: u64,
    /// Bytes each device sends for one call.
    pub sent_bytes: f64,
    /// Calls per device per iteration.
    pub count: u64,
}

impl CollectiveInstance {
    /// Buffer size the call operates on: the gathered / reduced tensor for
    /// ring collectives, the per-device send buffer for all-to-all.
    pub fn payload_bytes(&self) -> f64 {
        let n = self.group_size as f64;
        match self.collective {
            CollectiveKind::P2P => self.sent_bytes,
            _ if self.group_size <= 1 => 0.0,
            _ => self.sent_bytes * n / (n - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficEntry {
    pub parallelism: Parallelism,
    pub collective: CollectiveKind,
    pub group_size: u64,
    /// Bytes sent per device per iteration.
    pub volume_per_device: f64,
    pub phase: PhaseTag,
}

impl TrafficEntry {
    /// Entry for a single ring all-gather / reduce-scatter on a buffer of
    /// `payload` bytes: each member forwards `(n-1)/n` of it.
    pub fn ring(parallelism: Parallelism, collective: CollectiveKind, n: u64, payload: f64, phase: PhaseTag) -> Self {
        let sent = if n > 1 {
            payload * (n - 1) as f64 / n as f64
        } else {
            0.0
        };
        TrafficEntry {
            parallelism,
            collective,
            group_size: n,
            volume_per_device: sent,
            phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub entries: Vec<TrafficEntry>,
    /// Attention/FFN alternation over the layers held by one pipeline stage.
    pub phase_timeline: Vec<PhaseTag>,
}

impl TrafficProfile {
    pub fn volume(&self, p: Parallelism) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.parallelism == p)
            .map(|e| e.volume_per_device)
            .sum()
    }

    pub fn volumes(&self) -> BTreeMap<Parallelism, f64> {
        Parallelism::ALL.iter().map(|&p| (p, self.volume(p))).collect()
    }

    pub fn total_per_device(&self) -> f64 {
        self.entries.iter().map(|e| e.volume_per_device).sum()
    }
}

fn ring_fraction(n: u64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n - 1) as f64 / n as f64
    }
}

/// Gradient bytes held by one device once TP, PP and EP sharding are applied.
pub(crate) fn grad_bytes_per_device(model: &ModelConfig, s: &ParallelStrategy, opts: &TrafficOptions) -> f64 {
    let width = opts.grad_bytes_per_element.unwrap_or(model.bytes_per_element) as f64;
    let shard = (s.tp * s.pp) as f64;
    let params = model.dense_params() as f64 / shard + model.expert_params() as f64 / (shard * s.ep as f64);
    params * width
}

/// Every collective call of one training iteration, per device.
///
/// With `b` sequences per microbatch and `A = b * (context / cp) * hidden * bytes`:
///
/// - TP: AG + RS around attention and around the FFN, each sending
///   `(tp-1)/tp * A`, repeated in forward and backward.
/// - CP: ring-attention KV all-gather over the full context,
///   `(cp-1)/cp * b * context * 2 * attn_dim * bytes / tp`, forward and recompute.
/// - EP: dispatch and combine all-to-all, each `A / tp * top_k * (ep-1)/ep`.
/// - DP: one all-gather of the local gradient shard, `(dp-1)/dp * grad bytes`.
/// - PP: activations forward and gradients backward per microbatch,
///   `2 * (pp-1)/pp * A / tp` averaged over stages.
pub fn collective_instances(
    model: &ModelConfig,
    s: &ParallelStrategy,
    opts: &TrafficOptions,
) -> Vec<CollectiveInstance> {
    let bytes = model.bytes_per_element as f64;
    let mb = s.num_microbatches.max(1);
    let seq_per_mb = model.global_batch as f64 / s.dp as f64 / mb as f64;
    let local_tokens = seq_per_mb * model.context_length as f64 / s.cp as f64;
    let act = local_tokens * model.hidden_dim as f64 * bytes;
    let layers = (model.num_layers / s.pp).max(1);
    let per_layer_calls = layers * mb;

    let tp_sent = ring_fraction(s.tp) * act;
    let kv_full = seq_per_mb * model.context_length as f64 * 2.0 * model.attn_dim() as f64 * bytes / s.tp as f64;
    let ep_active = model.is_moe() && s.ep > 1;
    let a2a_sent = if ep_active {
        act / s.tp as f64 * model.top_k_experts as f64 * ring_fraction(s.ep)
    } else {
        0.0
    };

    let mut out = Vec::with_capacity(9);
    let tp_calls = opts.tp_ep_passes * per_layer_calls;
    for (collective, phase) in [
        (CollectiveKind::AllGather, PhaseTag::AttentionPhase),
        (CollectiveKind::ReduceScatter, PhaseTag::AttentionPhase),
        (CollectiveKind::AllGather, PhaseTag::FfnPhase),
        (CollectiveKind::ReduceScatter, PhaseTag::FfnPhase),
    ] {
        out.push(CollectiveInstance {
            parallelism: Parallelism::Tp,
            collective,
            phase,
            group_size: s.tp,
            sent_bytes: tp_sent,
            count: tp_calls,
        });
    }
    out.push(CollectiveInstance {
        parallelism: Parallelism::Cp,
        collective: CollectiveKind::AllGather,
        phase: PhaseTag::AttentionPhase,
        group_size: s.cp,
        sent_bytes: ring_fraction(s.cp) * kv_full,
        count: opts.cp_passes * per_layer_calls,
    });
    for _ in 0..2 {
        out.push(CollectiveInstance {
            parallelism: Parallelism::Ep,
            collective: CollectiveKind::AllToAll,
            phase: PhaseTag::FfnPhase,
            group_size: s.ep,
            sent_bytes: a2a_sent,
            count: tp_calls,
        });
    }
    out.push(CollectiveInstance {
        parallelism: Parallelism::Dp,
        collective: CollectiveKind::AllGather,
        phase: PhaseTag::BackwardPhase,
        group_size: s.dp,
        sent_bytes: ring_fraction(s.dp) * grad_bytes_per_device(model, s, opts),
        count: 1,
    });
    out.push(CollectiveInstance {
        parallelism: Parallelism::Pp,
        collective: CollectiveKind::P2P,
        phase: PhaseTag::StageBoundary,
        group_size: s.pp,
        sent_bytes: 2.0 * ring_fraction(s.pp) * act / s.tp as f64,
        count: mb,
    });
    out
}

/// Deterministic per-iteration traffic of every parallelism.
pub fn project_traffic(model: &ModelConfig, strategy: &ParallelStrategy, opts: &TrafficOptions) -> TrafficProfile {
    let mut entries: Vec<TrafficEntry> = Vec::new();
    for inst in collective_instances(model, strategy, opts) {
        let volume = inst.sent_bytes * inst.count as f64;
        // Merge dispatch/combine style repeats into one entry per (p, kind, phase).
        if let Some(e) = entries
            .iter_mut()
            .find(|e| e.parallelism == inst.parallelism && e.collective == inst.collective && e.phase == inst.phase)
        {
            e.volume_per_device += volume;
            continue;
        }
        entries.push(TrafficEntry {
            parallelism: inst.parallelism,
            collective: inst.collective,
            group_size: inst.group_size,
            volume_per_device: volume,
            phase: inst.phase,
        });
    }
    let layers = (model.num_layers / strategy.pp).max(1);
    let phase_timeline = (0..layers)
        .flat_map(|_| [PhaseTag::AttentionPhase, PhaseTag::FfnPhase])
        .collect();
    TrafficProfile {
        entries,
        phase_timeline,
    }
}
