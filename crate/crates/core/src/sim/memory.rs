use super::SimError;
use crate::workload::{ModelConfig, ParallelStrategy};
use serde::{Deserialize, Serialize};

/// Optimizer bytes per parameter: fp32 master copy plus two Adam moments.
pub const OPTIMIZER_BYTES_PER_PARAM: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub weights: f64,
    pub grads: f64,
    pub optimizer: f64,
    pub activations: f64,
}

impl MemoryFootprint {
    pub fn total(&self) -> f64 {
        self.weights + self.grads + self.optimizer + self.activations
    }

    pub fn total_gb(&self) -> f64 {
        self.total() / 1e9
    }
}

/// Bytes held by one die. Weights and gradients are sharded by `tp * pp`
/// (experts also by `ep`). Optimizer states are additionally sharded over
/// the data-parallel replicas of each weight. Activations keep one layer
/// input per local layer for each in-flight microbatch plus the working set
/// of one recomputed layer.
pub fn memory_footprint(model: &ModelConfig, s: &ParallelStrategy) -> MemoryFootprint {
    let w = model.bytes_per_element as f64;
    let shard = (s.tp * s.pp) as f64;
    let dense = model.dense_params() as f64 / shard;
    let expert = model.expert_params() as f64 / (shard * s.ep as f64);
    let expert_replicas = (s.dp / s.ep).max(1) as f64;
    let optimizer = (dense / s.dp as f64 + expert / expert_replicas) * OPTIMIZER_BYTES_PER_PARAM;

    let t = super::compute::local_tokens(model, s);
    let tp = s.tp as f64;
    let h = model.hidden_dim as f64;
    let a = model.attn_dim() as f64;
    let f = model.ffn_dim as f64;
    let k = if model.is_moe() {
        model.top_k_experts as f64
    } else {
        1.0
    };
    let seqs = model.global_batch as f64 / s.dp as f64 / s.num_microbatches.max(1) as f64;
    let layers = (model.num_layers / s.pp).max(1) as f64;
    let in_flight = s.pp.min(s.num_microbatches.max(1)) as f64;
    let checkpoints = layers * in_flight * t * h * w / tp;
    let working = (t * (6.0 * h + 3.0 * a + 3.0 * k * f) + 2.0 * seqs * model.context_length as f64 * a) * w / tp;

    MemoryFootprint {
        weights: (dense + expert) * w,
        grads: (dense + expert) * w,
        optimizer,
        activations: checkpoints + working,
    }
}

/// Fails when the footprint exceeds `capacity_gb`.
pub fn check_capacity(fp: &MemoryFootprint, capacity_gb: f64) -> Result<(), SimError> {
    if fp.total_gb() > capacity_gb {
        Err(SimError::CapacityExceeded {
            need_gb: fp.total_gb(),
            have_gb: capacity_gb,
        })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameter count by walking the layer list.
    fn walk(m: &ModelConfig) -> f64 {
        let (h, a, f) = (m.hidden_dim, m.attn_dim(), m.ffn_dim);
        let mut n = 2 * m.vocab_size * h + h;
        for _ in 0..m.num_layers {
            n += 4 * h * a + 2 * h;
            if m.is_moe() {
                n += h * m.num_experts + m.num_experts * 3 * h * f;
            } else {
                n += 3 * h * f;
            }
        }
        n as f64
    }

    #[test]
    fn single_device_states_match_walk() {
        let m = ModelConfig::toy_dense(2, 64, 128, 16, 2);
        let fp = memory_footprint(&m, &ParallelStrategy::single());
        let p = walk(&m);
        assert_eq!(fp.weights + fp.grads + fp.optimizer, p * (2.0 + 2.0 + 12.0));
    }

    #[test]
    fn moe_states_match_walk() {
        let mut m = ModelConfig::toy_dense(2, 64, 128, 16, 2);
        m.num_experts = 4;
        m.top_k_experts = 2;
        let fp = memory_footprint(&m, &ParallelStrategy::single());
        assert_eq!(fp.weights, walk(&m) * 2.0);
    }

    #[test]
    fn tp_never_grows_weight_shard() {
        let m = ModelConfig::default();
        let a = memory_footprint(&m, &ParallelStrategy::new(4, 1, 2, 8, 8));
        let b = memory_footprint(&m, &ParallelStrategy::new(8, 1, 2, 8, 8));
        assert!(b.weights <= a.weights);
        assert!(b.activations <= a.activations);
    }

    #[test]
    fn capacity_exceeded() {
        let m = ModelConfig::default();
        let fp = memory_footprint(&m, &ParallelStrategy::single());
        assert!(matches!(
            check_capacity(&fp, 80.0),
            Err(SimError::CapacityExceeded { .. })
        ));
        assert!(check_capacity(&fp, fp.total_gb() + 1.0).is_ok());
    }
}
