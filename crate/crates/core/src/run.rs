//! Experiment orchestration and result files.

use crate::arch::{derive_mcm, optical_port_limit, ArchError, McmArch, TechParams};
use crate::config::{ConfigError, ExperimentConfig, Mode, SweepVariable};
use crate::opt::{
    evaluate_point, gpu_arch, inner_search, optimize, strategy_space, ClusterKind, DesignPoint, EvalError, EvalOptions,
    OptError, OptimizeConfig, OptimizeResult,
};
use crate::sim::Bottleneck;
use crate::workload::{project_traffic, traffic_heatmap, HeatmapError, Placement, TrafficOptions, TrafficProfile};
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Arch(_) => "arch",
            RunError::Eval(_) => "evaluation",
            RunError::Opt(_) => "search",
            RunError::Heatmap(_) => "heatmap",
            RunError::Io { .. } => "io",
        }
    }
}

fn arch_of(cfg: &ExperimentConfig) -> Result<McmArch, ArchError> {
    derive_mcm(cfg.arch.compute_total, cfg.arch.vars(), &cfg.tech)
}

fn strategy_of(cfg: &ExperimentConfig) -> Result<crate::ParallelStrategy, ConfigError> {
    cfg.strategy.ok_or_else(|| ConfigError::Validation {
        field: "strategy".into(),
        message: format!("required in {} mode", cfg.mode.label()),
    })
}

pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<DesignPoint, RunError> {
    let s = strategy_of(cfg)?;
    let arch = match cfg.eval.kind {
        ClusterKind::GpuClos => gpu_arch(cfg.arch.compute_total, &cfg.eval.baseline),
        _ => arch_of(cfg)?,
    };
    Ok(evaluate_point(&cfg.model, &arch, &s, &cfg.tech, &cfg.eval)?)
}

pub struct TrafficReport {
    pub profile: TrafficProfile,
    /// Bytes per iteration, row = source device.
    pub heatmap: Vec<Vec<f64>>,
}

pub fn run_traffic(cfg: &ExperimentConfig) -> Result<TrafficReport, RunError> {
    let s = strategy_of(cfg)?;
    crate::workload::validate_strategy(&cfg.model, s, s.device_count()).map_err(EvalError::from)?;
    let profile = project_traffic(&cfg.model, &s, &TrafficOptions::default());
    let heatmap = traffic_heatmap(&profile, &Placement::canonical(&s))?;
    Ok(TrafficReport { profile, heatmap })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRow {
    pub label: String,
    pub value: f64,
    pub vars: Option<crate::arch::McmVars>,
    pub throughput: Option<f64>,
    pub cost: Option<f64>,
    pub iteration_time: Option<f64>,
    pub strategy: Option<crate::ParallelStrategy>,
    pub bottleneck: Option<Bottleneck>,
    pub reuse: bool,
    pub total_ocs: Option<u64>,
    pub evaluations: usize,
    pub error: Option<String>,
}

impl SearchRow {
    fn failed(label: String, value: f64, vars: Option<crate::arch::McmVars>, error: String) -> Self {
        SearchRow {
            label,
            value,
            vars,
            throughput: None,
            cost: None,
            iteration_time: None,
            strategy: None,
            bottleneck: None,
            reuse: false,
            total_ocs: None,
            evaluations: 0,
            error: Some(error),
        }
    }
}

/// Best strategy for one architecture under the configured inner search.
fn best_for(
    cfg: &ExperimentConfig,
    arch: &McmArch,
    opts: &EvalOptions,
    label: String,
    value: f64,
    seed: u64,
) -> SearchRow {
    let space = strategy_space(&cfg.model, arch.total_dies(), arch.dies_per_mcm());
    let out = inner_search(&cfg.model, arch, &cfg.tech, opts, &space, &cfg.search.inner, seed);
    match out.best() {
        Ok(p) => SearchRow {
            label,
            value,
            vars: Some(arch.vars),
            throughput: Some(p.throughput()),
            cost: Some(p.total_cost()),
            iteration_time: Some(p.result.iteration_time),
            strategy: Some(p.strategy),
            bottleneck: Some(p.result.logs.bottleneck),
            reuse: p.reuse_active(),
            total_ocs: p.physical.as_ref().map(|t| t.total_ocs),
            evaluations: out.records.len(),
            error: None,
        },
        Err(e) => SearchRow {
            evaluations: out.records.len(),
            ..SearchRow::failed(label, value, Some(arch.vars), e.to_string())
        },
    }
}

/// Package design after setting one swept variable.
pub fn sweep_vars(
    cfg: &ExperimentConfig,
    variable: SweepVariable,
    value: f64,
    tech: &TechParams,
) -> (f64, crate::arch::McmVars) {
    let mut v = cfg.arch.vars();
    let mut c = cfg.arch.compute_total;
    let die_perf = c / v.total_dies() as f64;
    let int = value.round().max(0.0) as u64;
    match variable {
        SweepVariable::ComputeTotal => {
            c = value;
            v.n = (value / (die_perf * v.dies_per_mcm() as f64)).round().max(1.0) as u64;
        }
        SweepVariable::N => v.n = int,
        SweepVariable::X => v.x = int,
        SweepVariable::Y => v.y = int,
        SweepVariable::M => v.m = int,
        SweepVariable::O => v.o = int,
        SweepVariable::R => {
            v.r = value;
            let edge = (c / v.total_dies() as f64 / tech.compute_density).sqrt();
            v.o = optical_port_limit(edge, value, tech);
        }
    }
    (c, v)
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SearchRow>, RunError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| ConfigError::Validation {
        field: "sweep".into(),
        message: "required in sweep mode".into(),
    })?;
    let label = serde_json::to_value(sweep.variable)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Ok(sweep
        .values
        .iter()
        .map(|&value| {
            let (c, vars) = sweep_vars(cfg, sweep.variable, value, &cfg.tech);
            match derive_mcm(c, vars, &cfg.tech) {
                Ok(arch) => best_for(cfg, &arch, &cfg.eval, label.clone(), value, cfg.seed),
                Err(e) => SearchRow::failed(label.clone(), value, Some(vars), e.to_string()),
            }
        })
        .collect())
}

pub fn run_baselines(cfg: &ExperimentConfig) -> Result<Vec<SearchRow>, RunError> {
    let mut rows = Vec::new();
    let base_die = cfg.arch.compute_total / cfg.arch.vars().total_dies() as f64;
    for &dies in &cfg.baselines.dies {
        let c = dies as f64 * base_die;
        let mut kinds: Vec<(ClusterKind, bool, String)> = cfg
            .baselines
            .kinds
            .iter()
            .map(|&k| (k, cfg.eval.reuse, k.label().to_string()))
            .collect();
        if cfg.baselines.no_reuse_row && cfg.baselines.kinds.contains(&ClusterKind::ChipLight) {
            kinds.push((ClusterKind::ChipLight, false, "ChipLight (no reuse)".to_string()));
        }
        for (kind, reuse, label) in kinds {
            let opts = EvalOptions {
                kind,
                reuse,
                ..cfg.eval
            };
            let arch = if kind == ClusterKind::GpuClos {
                Ok(gpu_arch(c, &cfg.eval.baseline))
            } else {
                let mut v = cfg.arch.vars();
                v.n = (dies / v.dies_per_mcm()).max(1);
                derive_mcm(c, v, &cfg.tech)
            };
            rows.push(match arch {
                Ok(a) => best_for(cfg, &a, &opts, label, dies as f64, cfg.seed),
                Err(e) => SearchRow::failed(label, dies as f64, None, e.to_string()),
            });
        }
    }
    Ok(rows)
}

pub fn optimize_config(cfg: &ExperimentConfig) -> OptimizeConfig {
    OptimizeConfig {
        compute_total: cfg.arch.compute_total,
        start: cfg.arch.vars(),
        bounds: cfg.search.bounds.clone(),
        outer_budget: cfg.search.outer_budget,
        inner: cfg.search.inner.clone(),
        total_budget: cfg.search.total_budget,
        eval: cfg.eval,
    }
}

pub fn run_optimize(cfg: &ExperimentConfig) -> Result<OptimizeResult, RunError> {
    Ok(optimize(&cfg.model, &cfg.tech, &optimize_config(cfg), cfg.seed)?)
}

fn csv_header(cfg: &ExperimentConfig) -> String {
    let mut s = String::from("# config\n");
    for line in cfg.to_toml().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("records serialize") + "\n"
}

fn config_line(cfg: &ExperimentConfig) -> String {
    json_line(&json!({"type": "config", "seed": cfg.seed, "config": cfg}))
}

fn rows_jsonl(cfg: &ExperimentConfig, rows: &[SearchRow]) -> String {
    let mut s = config_line(cfg);
    for r in rows {
        s.push_str(&json_line(&json!({"type": "row", "record": r})));
    }
    s
}

const SEARCH_COLUMNS: &str =
    "label,value,throughput,cost,iteration_time,n,x,y,m,o,r,tp,cp,pp,dp,ep,num_microbatches,bottleneck,reuse,total_ocs,evaluations,error";

fn search_csv(cfg: &ExperimentConfig, rows: &[SearchRow]) -> String {
    let mut s = csv_header(cfg);
    s.push_str(SEARCH_COLUMNS);
    s.push('\n');
    for r in rows {
        let v = r.vars;
        let st = r.strategy;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.value,
            opt(r.throughput),
            opt(r.cost),
            opt(r.iteration_time),
            opt(v.map(|v| v.n)),
            opt(v.map(|v| v.x)),
            opt(v.map(|v| v.y)),
            opt(v.map(|v| v.m)),
            opt(v.map(|v| v.o)),
            opt(v.map(|v| v.r)),
            opt(st.map(|s| s.tp)),
            opt(st.map(|s| s.cp)),
            opt(st.map(|s| s.pp)),
            opt(st.map(|s| s.dp)),
            opt(st.map(|s| s.ep)),
            opt(st.map(|s| s.num_microbatches)),
            opt(r.bottleneck.map(Bottleneck::label)),
            r.reuse,
            opt(r.total_ocs),
            r.evaluations,
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    s
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Runs the configured mode and writes its result files into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut files: Vec<(String, String)> = Vec::new();
    match cfg.mode {
        Mode::Evaluate => {
            let p = run_evaluate(cfg)?;
            let mut s = config_line(cfg);
            s.push_str(&json_line(&json!({"type": "evaluation", "point": p})));
            files.push(("results.jsonl".into(), s));
            if let (Some(phys), Some(logical)) = (&p.physical, &p.logical) {
                let plan = phys.wiring_plan(logical);
                files.push((
                    "wiring.json".into(),
                    serde_json::to_string_pretty(&json!({"config": cfg, "wiring": plan})).expect("serializable") + "\n",
                ));
            }
        }
        Mode::Traffic => {
            let r = run_traffic(cfg)?;
            let mut t = csv_header(cfg);
            t.push_str("parallelism,collective,phase,group_size,volume_per_device\n");
            for e in &r.profile.entries {
                let _ = writeln!(
                    t,
                    "{},{:?},{:?},{},{}",
                    e.parallelism.label(),
                    e.collective,
                    e.phase,
                    e.group_size,
                    e.volume_per_device
                );
            }
            files.push(("traffic.csv".into(), t));
            files.push((
                "traffic.json".into(),
                serde_json::to_string_pretty(&json!({"config": cfg, "profile": r.profile})).expect("serializable")
                    + "\n",
            ));
            let mut h = csv_header(cfg);
            for row in &r.heatmap {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                h.push_str(&cells.join(","));
                h.push('\n');
            }
            files.push(("heatmap.csv".into(), h));
        }
        Mode::Sweep => {
            let rows = run_sweep(cfg)?;
            files.push(("results.jsonl".into(), rows_jsonl(cfg, &rows)));
            files.push(("sweep.csv".into(), search_csv(cfg, &rows)));
        }
        Mode::Baselines => {
            let rows = run_baselines(cfg)?;
            files.push(("results.jsonl".into(), rows_jsonl(cfg, &rows)));
            files.push(("baselines.csv".into(), search_csv(cfg, &rows)));
        }
        Mode::Optimize => {
            let res = run_optimize(cfg)?;
            let mut s = config_line(cfg);
            for r in &res.records {
                s.push_str(&json_line(&json!({"type": "evaluation", "record": r})));
            }
            for o in &res.outer {
                s.push_str(&json_line(&json!({"type": "outer", "record": o})));
            }
            files.push(("results.jsonl".into(), s));
            let rows: Vec<SearchRow> = res
                .archive
                .points
                .iter()
                .map(|p| SearchRow {
                    label: "pareto".into(),
                    value: p.throughput(),
                    vars: Some(p.arch.vars),
                    throughput: Some(p.throughput()),
                    cost: Some(p.total_cost()),
                    iteration_time: Some(p.result.iteration_time),
                    strategy: Some(p.strategy),
                    bottleneck: Some(p.result.logs.bottleneck),
                    reuse: p.reuse_active(),
                    total_ocs: p.physical.as_ref().map(|t| t.total_ocs),
                    evaluations: 1,
                    error: None,
                })
                .collect();
            files.push(("pareto.csv".into(), search_csv(cfg, &rows)));
        }
    }
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = out.join(name);
        write_atomic(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Machine-readable failure record.
pub fn write_error(out: &Path, mode: Option<Mode>, kind: &str, message: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join("error.json");
    let body = json!({"mode": mode.map(|m| m.label()), "kind": kind, "message": message});
    std::fs::write(&path, serde_json::to_string_pretty(&body).expect("serializable") + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::H100_TFLOPS;
    use crate::config::SweepConfig;

    #[test]
    fn r_sweep_uses_the_port_limit() {
        let cfg = ExperimentConfig::new(Mode::Sweep);
        let tech = TechParams::default();
        let (c, lo) = sweep_vars(&cfg, SweepVariable::R, 0.3, &tech);
        let (_, hi) = sweep_vars(&cfg, SweepVariable::R, 0.9, &tech);
        assert_eq!(c, cfg.arch.compute_total);
        assert!(hi.o > lo.o);
        let a = derive_mcm(c, hi, &tech).unwrap();
        assert_eq!(a.o_max, hi.o);
    }

    #[test]
    fn compute_sweep_keeps_die_size() {
        let cfg = ExperimentConfig::new(Mode::Sweep);
        let tech = TechParams::default();
        let (c, v) = sweep_vars(&cfg, SweepVariable::ComputeTotal, 4096.0 * H100_TFLOPS, &tech);
        assert_eq!(v.total_dies(), 4096);
        assert!((c / v.total_dies() as f64 - H100_TFLOPS).abs() < 1e-9);
    }

    #[test]
    fn sweep_writes_rows_and_stream() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(Mode::Sweep);
        cfg.sweep = Some(SweepConfig {
            variable: SweepVariable::M,
            values: vec![4.0, 8.0],
        });
        cfg.search.inner.budget = 16;
        let files = run(&cfg, dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|f| f.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["results.jsonl", "sweep.csv"]);
        let stream = std::fs::read_to_string(&files[0]).unwrap();
        let kinds: Vec<String> = stream
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["type"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(kinds, ["config", "row", "row"]);
    }

    #[test]
    fn invalid_config_is_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            strategy: None,
            ..ExperimentConfig::new(Mode::Evaluate)
        };
        let err = run(&cfg, &dir.path().join("out")).unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(!dir.path().join("out").exists());
        let rec = write_error(dir.path(), Some(Mode::Evaluate), err.kind(), &err.to_string()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rec).unwrap()).unwrap();
        assert_eq!(v["mode"], "evaluate");
    }
}
