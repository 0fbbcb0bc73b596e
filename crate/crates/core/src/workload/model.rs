use serde::{Deserialize, Serialize};

/// Transformer / MoE workload description.
///
/// Missing fields deserialize to the Qwen3-235B-A22B shape at 10k context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub head_dim: u64,
    /// Per-expert FFN width for MoE models, full FFN width for dense ones.
    pub ffn_dim: u64,
    /// 1 for a dense model.
    pub num_experts: u64,
    pub top_k_experts: u64,
    pub vocab_size: u64,
    pub context_length: u64,
    /// Sequences per iteration.
    pub global_batch: u64,
    pub bytes_per_element: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::qwen3_235b_a22b()
    }
}

impl ModelConfig {
    pub fn qwen3_235b_a22b() -> Self {
        ModelConfig {
            num_layers: 94,
            hidden_dim: 4096,
            num_heads: 64,
            head_dim: 128,
            ffn_dim: 1536,
            num_experts: 128,
            top_k_experts: 8,
            vocab_size: 151_936,
            context_length: 10_240,
            global_batch: 256,
            bytes_per_element: 2,
        }
    }

    /// Small dense model used by examples and tests.
    pub fn toy_dense(num_layers: u64, hidden: u64, ffn: u64, context: u64, batch: u64) -> Self {
        ModelConfig {
            num_layers,
            hidden_dim: hidden,
            num_heads: 2,
            head_dim: hidden / 2,
            ffn_dim: ffn,
            num_experts: 1,
            top_k_experts: 1,
            vocab_size: 64,
            context_length: context,
            global_batch: batch,
            bytes_per_element: 2,
        }
    }

    pub fn is_moe(&self) -> bool {
        self.num_experts > 1
    }

    /// Width of the concatenated attention heads.
    pub fn attn_dim(&self) -> u64 {
        self.num_heads * self.head_dim
    }

    /// Q, K, V and output projections (full multi-head attention).
    pub fn attention_params_per_layer(&self) -> u64 {
        4 * self.hidden_dim * self.attn_dim()
    }

    /// Gated (SwiGLU) FFN: gate, up and down projections, per expert.
    pub fn ffn_params_per_expert(&self) -> u64 {
        3 * self.hidden_dim * self.ffn_dim
    }

    pub fn router_params_per_layer(&self) -> u64 {
        if self.is_moe() {
            self.hidden_dim * self.num_experts
        } else {
            0
        }
    }

    /// Parameters replicated across expert-parallel ranks: attention, norms,
    /// router, input embedding, output head and final norm.
    pub fn dense_params(&self) -> u64 {
        let per_layer = self.attention_params_per_layer() + 2 * self.hidden_dim + self.router_params_per_layer();
        self.num_layers * per_layer + 2 * self.vocab_size * self.hidden_dim + self.hidden_dim
    }

    /// Parameters that are sharded across expert-parallel ranks.
    pub fn expert_params(&self) -> u64 {
        self.num_layers * self.num_experts * self.ffn_params_per_expert()
    }

    pub fn params_total(&self) -> u64 {
        self.dense_params() + self.expert_params()
    }

    /// Names the first field that breaks a structural invariant.
    pub fn check(&self) -> Result<(), String> {
        let counts = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_experts", self.num_experts),
            ("top_k_experts", self.top_k_experts),
            ("vocab_size", self.vocab_size),
            ("context_length", self.context_length),
            ("global_batch", self.global_batch),
            ("bytes_per_element", self.bytes_per_element),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be >= 1"));
        }
        if self.top_k_experts > self.num_experts {
            return Err("top_k_experts must not exceed num_experts".into());
        }
        Ok(())
    }
}
