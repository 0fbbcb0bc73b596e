use super::surrogate::{Forest, ForestParams};
use super::{evaluate_point, DesignPoint, EvalError, EvalOptions, OptError};
use crate::arch::{McmArch, McmVars, TechParams};
use crate::sim::{Bottleneck, DiagnosticLog};
use crate::workload::{ModelConfig, ParallelStrategy};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Candidates evaluated concurrently; fixed so results never depend on the
/// worker count.
const BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    /// Evaluations per architecture.
    pub budget: usize,
    /// Share of the budget sampled uniformly before the surrogate ranks.
    pub warmup_fraction: f64,
    /// Leave the architecture once the best throughput improved by less
    /// than this fraction over the last window; 0 disables.
    pub switch_threshold: f64,
    pub min_window: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            budget: 64,
            warmup_fraction: 0.3,
            switch_threshold: 0.01,
            min_window: 5,
        }
    }
}

impl InnerConfig {
    /// `max(min_window, 10% of budget)` evaluations.
    pub fn window(&self) -> usize {
        self.min_window.max(self.budget.div_ceil(10))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Feasible {
        throughput: f64,
        cost: f64,
        iteration_time: f64,
        bottleneck: Bottleneck,
    },
    Infeasible {
        error: String,
    },
}

/// One simulator call, feasible or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: McmVars,
    pub strategy: ParallelStrategy,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default)]
pub struct InnerOutcome {
    /// Feasible points in evaluation order.
    pub points: Vec<DesignPoint>,
    pub records: Vec<EvalRecord>,
    /// Set when some strategy ran out of memory.
    pub capacity_log: Option<DiagnosticLog>,
    pub stopped_early: bool,
}

impl InnerOutcome {
    /// Highest-throughput point, earliest on ties.
    pub fn best(&self) -> Result<&DesignPoint, OptError> {
        self.points
            .iter()
            .fold(None, |b: Option<&DesignPoint>, p| match b {
                Some(b) if b.throughput() >= p.throughput() => Some(b),
                _ => Some(p),
            })
            .ok_or(OptError::NoFeasibleStrategy {
                evaluated: self.records.len(),
            })
    }

    /// Log the planner reads: the best point's, else the capacity failure.
    pub fn planner_log(&self) -> Option<DiagnosticLog> {
        self.best()
            .ok()
            .map(|p| p.result.logs.clone())
            .or_else(|| self.capacity_log.clone())
    }

    fn push(&mut self, arch: &McmArch, s: ParallelStrategy, r: Result<DesignPoint, EvalError>) {
        let outcome = match &r {
            Ok(p) => Outcome::Feasible {
                throughput: p.throughput(),
                cost: p.total_cost(),
                iteration_time: p.result.iteration_time,
                bottleneck: p.result.logs.bottleneck,
            },
            Err(e) => Outcome::Infeasible { error: e.to_string() },
        };
        self.records.push(EvalRecord {
            arch: arch.vars,
            strategy: s,
            outcome,
        });
        match r {
            Ok(p) => self.points.push(p),
            Err(e) => {
                if self.capacity_log.is_none() {
                    self.capacity_log = e.log();
                }
            }
        }
    }

    fn best_value(&self, upto: usize) -> Option<f64> {
        self.records[..upto]
            .iter()
            .filter_map(|r| match r.outcome {
                Outcome::Feasible { throughput, .. } => Some(throughput),
                _ => None,
            })
            .reduce(f64::max)
    }

    fn stalled(&self, cfg: &InnerConfig) -> bool {
        let w = cfg.window();
        let n = self.records.len();
        if cfg.switch_threshold <= 0.0 || n < 2 * w {
            return false;
        }
        match (self.best_value(n - w), self.best_value(n)) {
            (Some(before), Some(now)) => (now - before) / before < cfg.switch_threshold,
            _ => false,
        }
    }
}

fn features(s: &ParallelStrategy) -> Vec<f64> {
    [s.tp, s.cp, s.pp, s.dp, s.ep, s.num_microbatches]
        .iter()
        .map(|&v| (v as f64).log2())
        .collect()
}

/// Parallel-centric search over strategies for one architecture. Budgets at
/// least as large as the space enumerate it in order; smaller budgets draw a
/// seeded uniform warmup and then evaluate the candidates a regression
/// forest ranks highest.
pub fn inner_search(
    model: &ModelConfig,
    arch: &McmArch,
    tech: &TechParams,
    opts: &EvalOptions,
    space: &[ParallelStrategy],
    cfg: &InnerConfig,
    seed: u64,
) -> InnerOutcome {
    let mut out = InnerOutcome::default();
    let budget = cfg.budget.min(space.len());
    let eval = |idx: &[usize]| -> Vec<Result<DesignPoint, EvalError>> {
        idx.par_iter()
            .map(|&i| evaluate_point(model, arch, &space[i], tech, opts))
            .collect()
    };
    let run = |out: &mut InnerOutcome, idx: &[usize]| {
        for (&i, r) in idx.iter().zip(eval(idx)) {
            out.push(arch, space[i], r);
        }
    };

    if budget == space.len() {
        let all: Vec<usize> = (0..space.len()).collect();
        for chunk in all.chunks(BATCH) {
            run(&mut out, chunk);
            if out.stalled(cfg) {
                out.stopped_early = true;
                break;
            }
        }
        return out;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.shuffle(&mut rng);
    let warmup = ((cfg.warmup_fraction * budget as f64).ceil() as usize).clamp(1, budget);
    let mut done = vec![false; space.len()];
    let mut evaluated: Vec<usize> = Vec::new();
    for chunk in order[..warmup].chunks(BATCH) {
        run(&mut out, chunk);
        for &i in chunk {
            done[i] = true;
            evaluated.push(i);
        }
    }
    let mut round = 0u64;
    while evaluated.len() < budget {
        if out.stalled(cfg) {
            out.stopped_early = true;
            break;
        }
        let xs: Vec<Vec<f64>> = evaluated.iter().map(|&i| features(&space[i])).collect();
        let floor = out
            .records
            .iter()
            .filter_map(|r| match r.outcome {
                Outcome::Feasible { throughput, .. } => Some(throughput.ln()),
                _ => None,
            })
            .reduce(f64::min)
            .map_or(-1.0, |m| m - 1.0);
        let ys: Vec<f64> = out
            .records
            .iter()
            .map(|r| match r.outcome {
                Outcome::Feasible { throughput, .. } => throughput.ln(),
                _ => floor,
            })
            .collect();
        let forest = Forest::fit(&xs, &ys, ForestParams::default(), seed.wrapping_add(round));
        round += 1;
        let mut ranked: Vec<(f64, usize)> = order
            .iter()
            .enumerate()
            .filter(|&(_, &i)| !done[i])
            .map(|(rank, &i)| (forest.predict(&features(&space[i])), rank))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = BATCH.min(budget - evaluated.len());
        let pick: Vec<usize> = ranked[..take].iter().map(|&(_, rank)| order[rank]).collect();
        run(&mut out, &pick);
        for &i in &pick {
            done[i] = true;
            evaluated.push(i);
        }
    }
    out
}
