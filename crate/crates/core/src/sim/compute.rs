use crate::workload::{ComputeOp, ModelConfig, ParallelStrategy};

/// FLOPs and HBM traffic of one forward operator for one microbatch on one die.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpCost {
    pub flops: f64,
    pub bytes: f64,
}

impl std::ops::Add for OpCost {
    type Output = OpCost;
    fn add(self, o: OpCost) -> OpCost {
        OpCost {
            flops: self.flops + o.flops,
            bytes: self.bytes + o.bytes,
        }
    }
}

impl OpCost {
    pub fn scale(self, k: f64) -> OpCost {
        OpCost {
            flops: self.flops * k,
            bytes: self.bytes * k,
        }
    }
}

/// Tokens a die processes per microbatch, `b * context / cp`.
pub fn local_tokens(model: &ModelConfig, s: &ParallelStrategy) -> f64 {
    model.global_batch as f64 / s.dp as f64 / s.num_microbatches.max(1) as f64 * model.context_length as f64
        / s.cp as f64
}

/// Forward cost of one operator. With `t` local tokens, hidden `h`,
/// attention width `a`, FFN width `f`:
///
/// - QKV projection `2 t h 3a / tp`, output projection `2 t a h / tp`
/// - causal attention `2 t context a / tp` (scores and values, half masked)
/// - router `2 t h E / tp`, FFN `2 t k 3 h f / tp` with `k` active experts
/// - norms are folded into neighbouring kernels and cost no FLOPs
///
/// Bytes count local weight shards plus activations read and written.
/// Embedding and output head are not modelled.
pub fn op_cost(op: ComputeOp, model: &ModelConfig, s: &ParallelStrategy) -> OpCost {
    let t = local_tokens(model, s);
    let tp = s.tp as f64;
    let w = model.bytes_per_element as f64;
    let h = model.hidden_dim as f64;
    let a = model.attn_dim() as f64;
    let f = model.ffn_dim as f64;
    let ctx = model.context_length as f64;
    let seqs = model.global_batch as f64 / s.dp as f64 / s.num_microbatches.max(1) as f64;
    let active = if model.is_moe() {
        model.top_k_experts as f64
    } else {
        1.0
    };
    match op {
        ComputeOp::AttnNorm | ComputeOp::FfnNorm => OpCost {
            flops: 0.0,
            bytes: 2.0 * t * h * w / tp,
        },
        ComputeOp::QkvProj => OpCost {
            flops: 2.0 * t * h * 3.0 * a / tp,
            bytes: (3.0 * h * a / tp + t * h + 3.0 * t * a / tp) * w,
        },
        ComputeOp::Attention => OpCost {
            flops: 2.0 * t * ctx * a / tp,
            bytes: (2.0 * t * a + 2.0 * seqs * ctx * a) * w / tp,
        },
        ComputeOp::OutProj => OpCost {
            flops: 2.0 * t * a * h / tp,
            bytes: (a * h / tp + t * a / tp + t * h) * w,
        },
        ComputeOp::Router => OpCost {
            flops: 2.0 * t * h * model.num_experts as f64 / tp,
            bytes: (h * model.num_experts as f64 + t * h / tp) * w,
        },
        ComputeOp::Ffn => {
            let local_experts = if model.is_moe() {
                (model.num_experts / s.ep) as f64
            } else {
                1.0
            };
            OpCost {
                flops: 2.0 * t * active * 3.0 * h * f / tp,
                bytes: (local_experts * 3.0 * h * f / tp + 2.0 * t * active * h / tp + 2.0 * t * active * f / tp) * w,
            }
        }
    }
}

/// `flops / (die_perf * efficiency)` with `die_perf` in TFLOPS.
pub fn compute_time(flops: f64, die_perf: f64, efficiency: f64) -> f64 {
    flops / (die_perf * 1e12 * efficiency)
}

/// Roofline time: the slower of the compute and memory-bandwidth bounds.
pub fn op_time(cost: OpCost, die_perf: f64, efficiency: f64, mem_bw: f64) -> f64 {
    compute_time(cost.flops, die_perf, efficiency).max(cost.bytes / (mem_bw * 1e9))
}
