use super::inner::{inner_search, EvalRecord, InnerConfig};
use super::planner::{outer_step, ArchBounds, Rule};
use super::{strategy_space, DesignPoint, EvalOptions, OptError, ParetoArchive};
use crate::arch::{derive_mcm, McmVars, TechParams};
use crate::workload::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Cluster compute, TFLOPS.
    pub compute_total: f64,
    pub start: McmVars,
    pub bounds: ArchBounds,
    /// Package designs visited.
    pub outer_budget: usize,
    pub inner: InnerConfig,
    /// Simulator calls over the whole run.
    pub total_budget: usize,
    pub eval: EvalOptions,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            compute_total: 1024.0 * crate::arch::H100_TFLOPS,
            start: McmVars {
                n: 128,
                x: 2,
                y: 4,
                m: 6,
                o: 4,
                r: 0.5,
            },
            bounds: ArchBounds::default(),
            outer_budget: 8,
            inner: InnerConfig::default(),
            total_budget: 512,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub vars: McmVars,
    /// Rule that produced this design; `None` for the start point.
    pub rule: Option<Rule>,
    pub evaluations: usize,
    pub best_throughput: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub archive: ParetoArchive<DesignPoint>,
    pub records: Vec<EvalRecord>,
    pub outer: Vec<OuterRecord>,
    pub exhausted: bool,
}

/// Nested search: an inner strategy search per package design, then the
/// planner picks the next design from the best point's bottleneck, until the
/// outer or total budget runs out or no unvisited design remains.
pub fn optimize(
    model: &ModelConfig,
    tech: &TechParams,
    cfg: &OptimizeConfig,
    seed: u64,
) -> Result<OptimizeResult, OptError> {
    let mut archive = ParetoArchive::new();
    let mut records = Vec::new();
    let mut outer = Vec::new();
    let mut visited: Vec<McmVars> = Vec::new();
    let mut current = cfg.start;
    let mut rule = None;
    let mut exhausted = false;
    derive_mcm(cfg.compute_total, current, tech)?;

    for step in 0..cfg.outer_budget {
        let remaining = cfg.total_budget.saturating_sub(records.len());
        if remaining == 0 {
            break;
        }
        visited.push(current);
        let arch = derive_mcm(cfg.compute_total, current, tech)?;
        let space = strategy_space(model, arch.total_dies(), arch.dies_per_mcm());
        let inner_cfg = InnerConfig {
            budget: cfg.inner.budget.min(remaining),
            ..cfg.inner.clone()
        };
        let inner_seed = seed.wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let out = inner_search(model, &arch, tech, &cfg.eval, &space, &inner_cfg, inner_seed);
        outer.push(OuterRecord {
            vars: current,
            rule,
            evaluations: out.records.len(),
            best_throughput: out.best().ok().map(|p| p.throughput()),
        });
        let log = out.planner_log();
        records.extend(out.records);
        for p in out.points {
            archive.update(p);
        }
        if step + 1 == cfg.outer_budget {
            break;
        }
        match outer_step(&visited, &current, log.as_ref(), cfg.compute_total, tech, &cfg.bounds) {
            Ok((next, r)) => {
                current = next;
                rule = Some(r);
            }
            Err(OptError::SearchExhausted) => {
                exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(OptimizeResult {
        archive,
        records,
        outer,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::H100_TFLOPS;
    use crate::opt::{evaluate_point, pareto_filter, Objectives};

    fn toy() -> ModelConfig {
        let mut m = ModelConfig::toy_dense(2, 512, 256, 1024, 4);
        m.num_heads = 2;
        m.head_dim = 256;
        m.num_experts = 2;
        m.top_k_experts = 1;
        m
    }

    fn toy_cfg() -> OptimizeConfig {
        OptimizeConfig {
            compute_total: 16.0 * H100_TFLOPS,
            start: McmVars {
                n: 4,
                x: 2,
                y: 2,
                m: 4,
                o: 2,
                r: 0.5,
            },
            bounds: ArchBounds {
                n: (2, 4),
                x: (2, 2),
                y: (2, 2),
                m: (4, 5),
                o: (2, 2),
                r_values: vec![0.5],
            },
            outer_budget: 100,
            inner: InnerConfig {
                budget: 10_000,
                switch_threshold: 0.0,
                ..InnerConfig::default()
            },
            total_budget: 100_000,
            eval: EvalOptions::default(),
        }
    }

    #[test]
    fn toy_space_matches_exhaustive_front() {
        let m = toy();
        let tech = TechParams::default();
        let cfg = toy_cfg();
        let res = optimize(&m, &tech, &cfg, 5).unwrap();
        assert!(res.exhausted);

        let mut all = Vec::new();
        let mut joint = 0;
        for n in [2, 4] {
            for mm in [4, 5] {
                for o in [2] {
                    let v = McmVars {
                        n,
                        x: 2,
                        y: 2,
                        m: mm,
                        o,
                        r: 0.5,
                    };
                    let Ok(a) = derive_mcm(cfg.compute_total, v, &tech) else {
                        continue;
                    };
                    for s in strategy_space(&m, a.total_dies(), a.dies_per_mcm()) {
                        joint += 1;
                        if let Ok(p) = evaluate_point(&m, &a, &s, &tech, &cfg.eval) {
                            all.push(p);
                        }
                    }
                }
            }
        }
        assert!(joint <= 200, "{joint} joint points");
        assert_eq!(res.records.len(), joint);
        let key = |p: &DesignPoint| {
            (
                format!("{:?}", p.arch.vars),
                p.strategy,
                p.throughput().to_bits(),
                p.cost().to_bits(),
            )
        };
        let mut want: Vec<_> = pareto_filter(&all).iter().map(key).collect();
        let mut got: Vec<_> = res.archive.points.iter().map(key).collect();
        want.sort();
        got.sort();
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }

    #[test]
    fn single_outer_step_and_budget() {
        let m = toy();
        let tech = TechParams::default();
        let cfg = OptimizeConfig {
            outer_budget: 1,
            ..toy_cfg()
        };
        let res = optimize(&m, &tech, &cfg, 5).unwrap();
        assert_eq!(res.outer.len(), 1);

        let cfg = OptimizeConfig {
            total_budget: 37,
            inner: InnerConfig {
                budget: 15,
                ..toy_cfg().inner
            },
            ..toy_cfg()
        };
        let res = optimize(&m, &tech, &cfg, 5).unwrap();
        assert_eq!(res.records.len(), 37);
        assert_eq!(
            res.archive.all_evaluated.len(),
            res.records
                .iter()
                .filter(|r| matches!(r.outcome, crate::opt::Outcome::Feasible { .. }))
                .count()
        );
    }

    #[test]
    fn same_seed_same_archive() {
        let m = toy();
        let tech = TechParams::default();
        let cfg = OptimizeConfig {
            inner: InnerConfig {
                budget: 12,
                ..InnerConfig::default()
            },
            outer_budget: 4,
            ..toy_cfg()
        };
        let a = optimize(&m, &tech, &cfg, 11).unwrap();
        let b = optimize(&m, &tech, &cfg, 11).unwrap();
        assert_eq!(a.archive, b.archive);
        assert_eq!(a.records, b.records);
        assert_eq!(a.outer, b.outer);
    }
}
