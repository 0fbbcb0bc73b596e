//! MCM design points: die geometry, edge budget, bandwidths and cost.
//!
//! Units: lengths in mm, areas in mm², bandwidth in GB/s, compute in TFLOPS,
//! capacity in GB, cost in $.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Technology and cost coefficients. Every field can be overridden from the
/// experiment file; unspecified fields keep these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechParams {
    /// Die-to-die interface bandwidth per mm of die edge.
    pub d2d_bw_density: f64,
    /// pJ/bit, reported only.
    pub d2d_energy: f64,
    /// Co-packaged optics bandwidth per mm of package edge.
    pub cpo_bw_density: f64,
    pub optical_link_bw: f64,
    pub hbm_bw_per_die: f64,
    pub hbm_capacity_per_die: f64,
    /// Logic-die edge consumed by one memory die's interface.
    pub hbm_edge_width: f64,
    /// Package area of one memory die.
    pub hbm_footprint: f64,
    /// Shortest D2D interface that still forms a mesh link.
    pub min_d2d_length: f64,
    /// Ports per optical circuit switch (P).
    pub ocs_port_count: u64,
    pub ocs_cost_per_port: f64,
    pub wafer_cost: f64,
    pub wafer_diameter: f64,
    /// Defects per mm² (0.001 = 0.1 per cm²).
    pub defect_density: f64,
    pub yield_alpha: f64,
    pub package_cost_per_mm2: f64,
    /// Package area relative to the silicon placed on it.
    pub package_area_overhead: f64,
    pub hbm_cost_per_die: f64,
    /// Optical engine plus fiber, per optical link.
    pub cpo_cost_per_port: f64,
    /// Electrical scale-out NIC plus switch port share, per port.
    pub ib_cost_per_port: f64,
    /// ms.
    pub ocs_switch_latency: f64,
    /// µs.
    pub link_latency: f64,
    /// µs added to every collective step.
    pub launch_overhead: f64,
    /// TFLOPS per mm² of logic die.
    pub compute_density: f64,
}

/// H100-class dense BF16 throughput of one logic die, TFLOPS.
pub const H100_TFLOPS: f64 = 989.0;
/// H100 die area, mm².
pub const H100_AREA: f64 = 814.0;

impl Default for TechParams {
    fn default() -> Self {
        TechParams {
            d2d_bw_density: 658.0,
            d2d_energy: 0.29,
            cpo_bw_density: 128.0,
            optical_link_bw: 400.0,
            hbm_bw_per_die: 550.0,
            hbm_capacity_per_die: 16.0,
            hbm_edge_width: 4.0,
            hbm_footprint: 110.0,
            min_d2d_length: 2.0,
            ocs_port_count: 128,
            ocs_cost_per_port: 800.0,
            wafer_cost: 17_000.0,
            wafer_diameter: 300.0,
            defect_density: 0.001,
            yield_alpha: 3.0,
            package_cost_per_mm2: 0.5,
            package_area_overhead: 1.2,
            hbm_cost_per_die: 240.0,
            cpo_cost_per_port: 500.0,
            ib_cost_per_port: 2_000.0,
            ocs_switch_latency: 0.1,
            link_latency: 1.0,
            launch_overhead: 5.0,
            compute_density: H100_TFLOPS / H100_AREA,
        }
    }
}

impl TechParams {
    /// Per-step collective latency in seconds.
    pub fn step_latency(&self) -> f64 {
        (self.link_latency + self.launch_overhead) * 1e-6
    }

    pub fn check(&self) -> Result<(), String> {
        let fields = [
            ("d2d_bw_density", self.d2d_bw_density),
            ("cpo_bw_density", self.cpo_bw_density),
            ("optical_link_bw", self.optical_link_bw),
            ("hbm_bw_per_die", self.hbm_bw_per_die),
            ("hbm_capacity_per_die", self.hbm_capacity_per_die),
            ("hbm_edge_width", self.hbm_edge_width),
            ("wafer_cost", self.wafer_cost),
            ("wafer_diameter", self.wafer_diameter),
            ("yield_alpha", self.yield_alpha),
            ("compute_density", self.compute_density),
            ("ocs_port_count", self.ocs_port_count as f64),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("tech.{name} must be positive"));
            }
        }
        let non_negative = [
            ("d2d_energy", self.d2d_energy),
            ("hbm_footprint", self.hbm_footprint),
            ("min_d2d_length", self.min_d2d_length),
            ("ocs_cost_per_port", self.ocs_cost_per_port),
            ("defect_density", self.defect_density),
            ("package_cost_per_mm2", self.package_cost_per_mm2),
            ("package_area_overhead", self.package_area_overhead),
            ("hbm_cost_per_die", self.hbm_cost_per_die),
            ("cpo_cost_per_port", self.cpo_cost_per_port),
            ("ib_cost_per_port", self.ib_cost_per_port),
            ("ocs_switch_latency", self.ocs_switch_latency),
            ("link_latency", self.link_latency),
            ("launch_overhead", self.launch_overhead),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("tech.{name} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Free architecture variables of one MCM design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmVars {
    /// MCM count.
    pub n: u64,
    pub x: u64,
    pub y: u64,
    /// Memory dies per logic die.
    pub m: u64,
    /// Optical links per peripheral logic-die edge.
    pub o: u64,
    /// Fraction of a peripheral die edge given to co-packaged optics.
    pub r: f64,
}

impl McmVars {
    pub fn dies_per_mcm(&self) -> u64 {
        self.x * self.y
    }

    pub fn total_dies(&self) -> u64 {
        self.n * self.x * self.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmArch {
    pub vars: McmVars,
    /// Cluster compute, TFLOPS.
    pub compute_total: f64,
    pub die_perf: f64,
    pub die_area: f64,
    pub die_edge: f64,
    /// Optical links per MCM.
    pub links: u64,
    /// Bandwidth of one NoP mesh link.
    pub b_p: f64,
    pub mem_bw_per_die: f64,
    pub mem_cap_per_die: f64,
    /// Largest `o` the CPO share of a die edge supports.
    pub o_max: u64,
}

impl McmArch {
    pub fn dies_per_mcm(&self) -> u64 {
        self.vars.dies_per_mcm()
    }

    pub fn total_dies(&self) -> u64 {
        self.vars.total_dies()
    }

    /// Per-die share of the mesh bisection, `2 * min(x, y) * B_p / (x * y)`.
    /// Zero for single-die packages, which have no NoP.
    pub fn nop_bw_per_die(&self) -> f64 {
        let (x, y) = (self.vars.x, self.vars.y);
        if x * y <= 1 {
            0.0
        } else {
            2.0 * x.min(y) as f64 * self.b_p / (x * y) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("invalid architecture variable: {0}")]
    InvalidVariable(String),
    #[error("edge budget exceeded on die ({die_x}, {die_y}): {detail}")]
    EdgeBudgetExceeded { die_x: u64, die_y: u64, detail: String },
    #[error("o = {o} exceeds the {max} optical links the CPO edge share supports")]
    OpticalPortOverflow { o: u64, max: u64 },
}

/// Edge consumption of the most constrained die.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub perimeter: f64,
    pub memory_mm: f64,
    /// CPO length on the die with the most outer edges.
    pub cpo_mm: f64,
    /// Shortest D2D length left on any facing edge (`None` without mesh links).
    pub d2d_per_facing_edge: Option<f64>,
    pub violation: bool,
    pub worst_die: (u64, u64),
}

fn largest_floor(v: f64) -> u64 {
    // Guard against 2.9999999 from products that are exact in decimal.
    (v + 1e-9).floor().max(0.0) as u64
}

/// Largest number of optical links per peripheral die edge.
pub fn optical_port_limit(die_edge: f64, r: f64, tech: &TechParams) -> u64 {
    largest_floor(die_edge * r * tech.cpo_bw_density / tech.optical_link_bw)
}

/// Edge layout rule: each peripheral die gives `r` of every outer edge to
/// CPO; memory interfaces fill the rest of the outer edges first and then
/// displace D2D length evenly from the facing edges. D2D fills whatever the
/// facing edges have left.
pub fn edge_budget_check(x: u64, y: u64, m: u64, r: f64, die_edge: f64, tech: &TechParams) -> EdgeReport {
    let memory = m as f64 * tech.hbm_edge_width;
    let mut report = EdgeReport {
        perimeter: 4.0 * die_edge,
        memory_mm: memory,
        cpo_mm: 0.0,
        d2d_per_facing_edge: None,
        violation: false,
        worst_die: (0, 0),
    };
    let mut worst = f64::INFINITY;
    for i in 0..x {
        for j in 0..y {
            let facing = [i > 0, i + 1 < x, j > 0, j + 1 < y].iter().filter(|&&b| b).count() as f64;
            let outer = 4.0 - facing;
            let cpo = r * die_edge * outer;
            report.cpo_mm = report.cpo_mm.max(cpo);
            let overflow = (memory - (outer * die_edge - cpo)).max(0.0);
            if facing == 0.0 {
                if overflow > 1e-12 {
                    report.violation = true;
                    report.worst_die = (i, j);
                }
                continue;
            }
            let per_edge = die_edge - overflow / facing;
            if per_edge < worst {
                worst = per_edge;
                report.worst_die = (i, j);
            }
        }
    }
    if worst.is_finite() {
        report.d2d_per_facing_edge = Some(worst.max(0.0));
        if worst < tech.min_d2d_length {
            report.violation = true;
        }
    }
    report
}

/// Fills the derived fields of a design point and rejects infeasible ones.
pub fn derive_mcm(compute_total: f64, vars: McmVars, tech: &TechParams) -> Result<McmArch, ArchError> {
    if !(compute_total > 0.0) {
        return Err(ArchError::InvalidVariable("C must be positive".into()));
    }
    for (name, v) in [
        ("N", vars.n),
        ("x", vars.x),
        ("y", vars.y),
        ("m", vars.m),
        ("o", vars.o),
    ] {
        if v == 0 {
            return Err(ArchError::InvalidVariable(format!("{name} must be >= 1")));
        }
    }
    if !(vars.r > 0.0 && vars.r <= 1.0) {
        return Err(ArchError::InvalidVariable("r must lie in (0, 1]".into()));
    }
    let die_perf = compute_total / vars.total_dies() as f64;
    let die_area = die_perf / tech.compute_density;
    let die_edge = die_area.sqrt();
    let o_max = optical_port_limit(die_edge, vars.r, tech);
    if vars.o > o_max {
        return Err(ArchError::OpticalPortOverflow { o: vars.o, max: o_max });
    }
    let report = edge_budget_check(vars.x, vars.y, vars.m, vars.r, die_edge, tech);
    if report.violation {
        return Err(ArchError::EdgeBudgetExceeded {
            die_x: report.worst_die.0,
            die_y: report.worst_die.1,
            detail: format!(
                "{:.2} mm of memory interface, {:.2} mm D2D left per facing edge (minimum {:.2})",
                report.memory_mm,
                report.d2d_per_facing_edge.unwrap_or(0.0),
                tech.min_d2d_length
            ),
        });
    }
    Ok(McmArch {
        vars,
        compute_total,
        die_perf,
        die_area,
        die_edge,
        links: 2 * (vars.x + vars.y) * vars.o,
        b_p: tech.d2d_bw_density * report.d2d_per_facing_edge.unwrap_or(0.0),
        mem_bw_per_die: vars.m as f64 * tech.hbm_bw_per_die,
        mem_cap_per_die: vars.m as f64 * tech.hbm_capacity_per_die,
        o_max,
    })
}

/// How the cluster is wired between packages, for costing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScaleOut {
    /// Optical links through `ocs` circuit switches.
    Optical { ocs: u64 },
    /// Electrical switched fabric with the given ports per logic die.
    Electrical { ports_per_die: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub logic_die_cost: f64,
    pub memory_cost: f64,
    pub package_cost: f64,
    pub cpo_cost: f64,
    pub ocs_cost: f64,
    pub link_cost: f64,
    pub total: f64,
}

/// Negative-binomial die yield, `(1 + A * D0 / alpha)^-alpha`.
pub fn die_yield(area: f64, tech: &TechParams) -> f64 {
    (1.0 + area * tech.defect_density / tech.yield_alpha).powf(-tech.yield_alpha)
}

/// Gross dies per wafer with the usual edge-loss correction.
pub fn dies_per_wafer(area: f64, tech: &TechParams) -> f64 {
    let d = tech.wafer_diameter;
    (PI * (d / 2.0).powi(2) / area - PI * d / (2.0 * area).sqrt()).max(1.0)
}

/// Cost of one known-good logic die.
pub fn good_die_cost(area: f64, tech: &TechParams) -> f64 {
    tech.wafer_cost / dies_per_wafer(area, tech) / die_yield(area, tech)
}

pub fn cost_model(arch: &McmArch, scale_out: ScaleOut, tech: &TechParams) -> CostBreakdown {
    let v = &arch.vars;
    let dies = v.total_dies() as f64;
    let logic_die_cost = dies * good_die_cost(arch.die_area, tech);
    let memory_cost = dies * v.m as f64 * tech.hbm_cost_per_die;
    let package_area =
        v.dies_per_mcm() as f64 * (arch.die_area + v.m as f64 * tech.hbm_footprint) * tech.package_area_overhead;
    let package_cost = v.n as f64 * package_area * tech.package_cost_per_mm2;
    let (cpo_cost, ocs_cost, link_cost) = match scale_out {
        ScaleOut::Optical { ocs } => (
            (v.n * arch.links) as f64 * tech.cpo_cost_per_port,
            (ocs * tech.ocs_port_count) as f64 * tech.ocs_cost_per_port,
            0.0,
        ),
        ScaleOut::Electrical { ports_per_die } => (0.0, 0.0, dies * ports_per_die as f64 * tech.ib_cost_per_port),
    };
    CostBreakdown {
        logic_die_cost,
        memory_cost,
        package_cost,
        cpo_cost,
        ocs_cost,
        link_cost,
        total: logic_die_cost + memory_cost + package_cost + cpo_cost + ocs_cost + link_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vars(n: u64, x: u64, y: u64, m: u64, o: u64, r: f64) -> McmVars {
        McmVars { n, x, y, m, o, r }
    }

    /// Tech where a die of `edge` mm results from the given die_perf.
    fn tech_for_edge(edge: f64) -> (TechParams, f64) {
        let tech = TechParams::default();
        let die_perf = edge * edge * tech.compute_density;
        (tech, die_perf)
    }

    #[test]
    fn link_count() {
        let tech = TechParams::default();
        let a = derive_mcm(8.0 * H100_TFLOPS, vars(2, 2, 2, 6, 4, 0.5), &tech).unwrap();
        assert_eq!(a.links, 32);
        assert!((a.die_perf - H100_TFLOPS).abs() < 1e-9);
        assert!((a.die_area - H100_AREA).abs() < 1e-9);
    }

    #[test]
    fn b_p_from_available_edge() {
        // 20 mm die, 2x2 grid, r = 0.5: outer free = 20 mm, memory 8 * 5 = 40 mm,
        // so 20 mm spills over two facing edges and 10 mm remains on each.
        let (mut tech, die_perf) = tech_for_edge(20.0);
        tech.hbm_edge_width = 5.0;
        let a = derive_mcm(4.0 * die_perf, vars(1, 2, 2, 8, 1, 0.5), &tech).unwrap();
        assert!((a.b_p - 6580.0).abs() < 1e-6, "{}", a.b_p);
    }

    #[test]
    fn optical_port_overflow() {
        let (tech, die_perf) = tech_for_edge(20.0);
        assert_eq!(optical_port_limit(20.0, 0.5, &tech), 3);
        assert!(derive_mcm(4.0 * die_perf, vars(1, 2, 2, 1, 3, 0.5), &tech).is_ok());
        assert_eq!(
            derive_mcm(4.0 * die_perf, vars(1, 2, 2, 1, 4, 0.5), &tech),
            Err(ArchError::OpticalPortOverflow { o: 4, max: 3 })
        );
    }

    #[test]
    fn no_memory_always_fits() {
        let tech = TechParams::default();
        for (x, y) in [(1, 1), (1, 2), (3, 3), (8, 8)] {
            assert!(!edge_budget_check(x, y, 0, 1.0, 5.0, &tech).violation);
        }
    }

    #[test]
    fn sixty_mm_of_memory_on_twenty_mm_die() {
        let mut tech = TechParams::default();
        tech.hbm_edge_width = 10.0;
        // 1x2 package, r = 0.25: each die has 3 outer edges (45 mm free after
        // 15 mm CPO) and one facing edge. 60 mm memory spills 15 mm -> 5 mm D2D.
        let rep = edge_budget_check(1, 2, 6, 0.25, 20.0, &tech);
        assert_eq!(rep.perimeter, 80.0);
        assert_eq!(rep.memory_mm, 60.0);
        assert_eq!(rep.d2d_per_facing_edge, Some(5.0));
        assert!(!rep.violation);
        // 2x2, r = 0.5: 20 mm free outer, 40 mm spill over two facing edges -> 0 mm.
        let rep = edge_budget_check(2, 2, 6, 0.5, 20.0, &tech);
        assert_eq!(rep.d2d_per_facing_edge, Some(0.0));
        assert!(rep.violation);
    }

    #[test]
    fn fourteen_memory_dies_on_small_die_rejected() {
        let (tech, die_perf) = tech_for_edge(15.0);
        let err = derive_mcm(16.0 * die_perf, vars(1, 4, 4, 14, 1, 0.5), &tech).unwrap_err();
        assert!(matches!(err, ArchError::EdgeBudgetExceeded { .. }));
    }

    #[test]
    fn zero_defects_means_raw_wafer_share() {
        let mut tech = TechParams::default();
        tech.defect_density = 0.0;
        assert_eq!(die_yield(800.0, &tech), 1.0);
        assert_eq!(
            good_die_cost(800.0, &tech),
            tech.wafer_cost / dies_per_wafer(800.0, &tech)
        );
    }

    #[test]
    fn doubling_area_more_than_doubles_die_cost() {
        let tech = TechParams::default();
        for a in [50.0, 200.0, 400.0] {
            assert!(good_die_cost(2.0 * a, &tech) > 2.0 * good_die_cost(a, &tech));
        }
    }

    #[test]
    fn breakdown_matches_spreadsheet() {
        let tech = TechParams::default();
        let arch = derive_mcm(64.0 * H100_TFLOPS, vars(8, 2, 4, 6, 4, 0.5), &tech).unwrap();
        let cost = cost_model(&arch, ScaleOut::Optical { ocs: 30 }, &tech);

        // Spreadsheet: one cell per line, all from raw coefficients.
        let area = 814.0;
        let dpw = std::f64::consts::PI * 150.0 * 150.0 / area - std::f64::consts::PI * 300.0 / (2.0 * area).sqrt();
        let yld = (1.0 + area * 0.001 / 3.0f64).powf(-3.0);
        let logic = 64.0 * 17_000.0 / dpw / yld;
        let mem = 64.0 * 6.0 * 240.0;
        let pkg = 8.0 * 8.0 * (area + 6.0 * 110.0) * 1.2 * 0.5;
        let cpo = 8.0 * 48.0 * 500.0;
        let ocs = 30.0 * 128.0 * 800.0;
        let total = logic + mem + pkg + cpo + ocs;
        for (got, want) in [
            (cost.logic_die_cost, logic),
            (cost.memory_cost, mem),
            (cost.package_cost, pkg),
            (cost.cpo_cost, cpo),
            (cost.ocs_cost, ocs),
            (cost.total, total),
        ] {
            assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
        }
        assert_eq!(cost.link_cost, 0.0);
    }

    proptest! {
        #[test]
        fn derived_fields_follow_formulas(n in 1u64..64, x in 1u64..5, y in 1u64..5, o in 1u64..4, r in 0.3f64..1.0) {
            let tech = TechParams::default();
            let c = (n * x * y) as f64 * 500.0;
            if let Ok(a) = derive_mcm(c, vars(n, x, y, 1, o, r), &tech) {
                prop_assert_eq!(a.links, 2 * (x + y) * o);
                prop_assert!((a.die_perf - c / (n * x * y) as f64).abs() <= 1e-9 * a.die_perf);
            }
        }

        #[test]
        fn b_p_non_increasing_in_m(x in 1u64..5, y in 2u64..5, edge in 10.0f64..40.0, r in 0.1f64..1.0) {
            let tech = TechParams::default();
            let mut last = f64::INFINITY;
            for m in 1..20 {
                let rep = edge_budget_check(x, y, m, r, edge, &tech);
                let d2d = rep.d2d_per_facing_edge.unwrap();
                prop_assert!(d2d <= last);
                last = d2d;
            }
        }

        #[test]
        fn yield_in_unit_interval(area in 1.0f64..5000.0, d0 in 0.0f64..0.01, alpha in 0.5f64..10.0) {
            let mut tech = TechParams::default();
            tech.defect_density = d0;
            tech.yield_alpha = alpha;
            let y = die_yield(area, &tech);
            prop_assert!(y > 0.0 && y <= 1.0);
            prop_assert!(good_die_cost(area, &tech).is_finite());
        }

        #[test]
        fn cost_increasing_in_m_and_ocs(m in 1u64..6, ocs in 0u64..500) {
            let tech = TechParams::default();
            let a = derive_mcm(8.0 * H100_TFLOPS, vars(2, 2, 2, m, 2, 0.5), &tech).unwrap();
            let b = derive_mcm(8.0 * H100_TFLOPS, vars(2, 2, 2, m + 1, 2, 0.5), &tech).unwrap();
            let so = ScaleOut::Optical { ocs };
            prop_assert!(cost_model(&b, so, &tech).total > cost_model(&a, so, &tech).total);
            let more = ScaleOut::Optical { ocs: ocs + 1 };
            prop_assert!(cost_model(&a, more, &tech).total > cost_model(&a, so, &tech).total);
        }
    }
}
