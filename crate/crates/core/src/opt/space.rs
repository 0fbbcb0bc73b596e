use crate::workload::{validate_strategy, ModelConfig, ParallelStrategy};

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Microbatch counts tried per strategy: multiples of the stage count that
/// split the per-replica batch evenly.
const MICROBATCH_FACTORS: [u64; 4] = [1, 2, 4, 8];

/// Every valid strategy for `devices` dies whose TP group fits in (and
/// divides) one package, in a fixed lexicographic order.
pub fn strategy_space(model: &ModelConfig, devices: u64, mcm_dies: u64) -> Vec<ParallelStrategy> {
    let mut out = Vec::new();
    for tp in divisors(devices) {
        if mcm_dies % tp != 0 {
            continue;
        }
        for cp in divisors(devices / tp) {
            for pp in divisors(devices / (tp * cp)) {
                let dp = devices / (tp * cp * pp);
                if model.global_batch % dp != 0 {
                    continue;
                }
                let per_replica = model.global_batch / dp;
                for ep in divisors(dp) {
                    let mut seen = Vec::new();
                    for f in MICROBATCH_FACTORS {
                        let mb = f * pp;
                        if per_replica % mb != 0 || seen.contains(&mb) {
                            continue;
                        }
                        seen.push(mb);
                        let s = ParallelStrategy {
                            tp,
                            cp,
                            pp,
                            dp,
                            ep,
                            num_microbatches: mb,
                        };
                        if validate_strategy(model, s, devices).is_ok() {
                            out.push(s);
                        }
                    }
                }
            }
        }
    }
    out
}
