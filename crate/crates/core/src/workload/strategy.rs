use super::{ModelConfig, Parallelism};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Degrees of the hybrid parallel strategy.
///
/// Expert-parallel groups are carved out of data-parallel ranks, so `ep`
/// divides `dp` and does not enter the world-size product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelStrategy {
    pub tp: u64,
    pub cp: u64,
    pub pp: u64,
    pub dp: u64,
    pub ep: u64,
    pub num_microbatches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("device count must be >= 1")]
    NoDevices,
    #[error("{0} degree must be >= 1")]
    ZeroDegree(&'static str),
    #[error("tp*cp*pp*dp = {product} does not match device count {devices}")]
    DegreeProductMismatch { product: u64, devices: u64 },
    #[error("{dimension} = {value} is not divisible by {divisor}")]
    IndivisibleDimension {
        dimension: &'static str,
        value: u64,
        divisor: u64,
    },
    #[error("num_microbatches = {mb} is smaller than pp = {pp}")]
    TooFewMicrobatches { mb: u64, pp: u64 },
}

impl ParallelStrategy {
    /// Strategy with the default 1F1B microbatch count (four per stage when pipelined).
    pub fn new(tp: u64, cp: u64, pp: u64, dp: u64, ep: u64) -> Self {
        ParallelStrategy {
            tp,
            cp,
            pp,
            dp,
            ep,
            num_microbatches: if pp > 1 { 4 * pp } else { 1 },
        }
    }

    pub fn single() -> Self {
        Self::new(1, 1, 1, 1, 1)
    }

    pub fn with_microbatches(mut self, mb: u64) -> Self {
        self.num_microbatches = mb;
        self
    }

    pub fn device_count(&self) -> u64 {
        self.tp * self.cp * self.pp * self.dp
    }

    /// Group size of the collective a parallelism issues.
    pub fn degree(&self, p: Parallelism) -> u64 {
        match p {
            Parallelism::Tp => self.tp,
            Parallelism::Cp => self.cp,
            Parallelism::Ep => self.ep,
            Parallelism::Dp => self.dp,
            Parallelism::Pp => self.pp,
        }
    }

    /// Extent of the parallelism as an independent placement axis. The DP axis
    /// only spans the `dp / ep` replicas left once EP groups are carved out.
    pub fn axis_degree(&self, p: Parallelism) -> u64 {
        match p {
            Parallelism::Dp => self.dp / self.ep.max(1),
            other => self.degree(other),
        }
    }
}

/// Checks a strategy against the model and the cluster size.
pub fn validate_strategy(
    model: &ModelConfig,
    strategy: ParallelStrategy,
    device_count: u64,
) -> Result<ParallelStrategy, StrategyError> {
    model.check().map_err(StrategyError::InvalidModel)?;
    if device_count == 0 {
        return Err(StrategyError::NoDevices);
    }
    for p in Parallelism::ALL {
        if strategy.degree(p) == 0 {
            return Err(StrategyError::ZeroDegree(p.label()));
        }
    }
    if strategy.num_microbatches == 0 {
        return Err(StrategyError::ZeroDegree("num_microbatches"));
    }
    let product = strategy.device_count();
    if product != device_count {
        return Err(StrategyError::DegreeProductMismatch {
            product,
            devices: device_count,
        });
    }
    let checks: [(&'static str, u64, u64); 6] = [
        ("num_heads", model.num_heads, strategy.tp),
        ("num_layers", model.num_layers, strategy.pp),
        ("num_experts", model.num_experts, strategy.ep),
        ("dp", strategy.dp, strategy.ep),
        ("global_batch", model.global_batch, strategy.dp),
        ("context_length", model.context_length, strategy.cp),
    ];
    for (dimension, value, divisor) in checks {
        if value % divisor != 0 {
            return Err(StrategyError::IndivisibleDimension {
                dimension,
                value,
                divisor,
            });
        }
    }
    if strategy.pp > 1 && strategy.num_microbatches < strategy.pp {
        return Err(StrategyError::TooFewMicrobatches {
            mb: strategy.num_microbatches,
            pp: strategy.pp,
        });
    }
    Ok(strategy)
}
