use super::DesignPoint;
use serde::{Deserialize, Serialize};

/// The two search objectives: maximise throughput, minimise cost.
pub trait Objectives {
    fn throughput(&self) -> f64;
    fn cost(&self) -> f64;
}

impl Objectives for DesignPoint {
    fn throughput(&self) -> f64 {
        self.result.throughput
    }
    fn cost(&self) -> f64 {
        self.cost.total
    }
}

impl Objectives for (f64, f64) {
    fn throughput(&self) -> f64 {
        self.0
    }
    fn cost(&self) -> f64 {
        self.1
    }
}

/// `a` is at least as good in both objectives and strictly better in one.
pub fn dominates<T: Objectives>(a: &T, b: &T) -> bool {
    let ge = a.throughput() >= b.throughput() && a.cost() <= b.cost();
    ge && (a.throughput() > b.throughput() || a.cost() < b.cost())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive<T> {
    /// Nondominated points in insertion order.
    pub points: Vec<T>,
    pub all_evaluated: Vec<T>,
}

impl<T> Default for ParetoArchive<T> {
    fn default() -> Self {
        ParetoArchive {
            points: Vec::new(),
            all_evaluated: Vec::new(),
        }
    }
}

impl<T: Objectives + Clone> ParetoArchive<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `point` and keeps it on the front iff nothing dominates it.
    pub fn update(&mut self, point: T) {
        if !self.points.iter().any(|p| dominates(p, &point)) {
            self.points.retain(|p| !dominates(&point, p));
            self.points.push(point.clone());
        }
        self.all_evaluated.push(point);
    }

    pub fn best_throughput(&self) -> Option<&T> {
        self.points.iter().fold(None, |best: Option<&T>, p| match best {
            Some(b) if b.throughput() >= p.throughput() => Some(b),
            _ => Some(p),
        })
    }
}

pub fn pareto_update<T: Objectives + Clone>(mut archive: ParetoArchive<T>, point: T) -> ParetoArchive<T> {
    archive.update(point);
    archive
}

/// Nondominated subset of `points`, in input order.
pub fn pareto_filter<T: Objectives + Clone>(points: &[T]) -> Vec<T> {
    points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, *p)))
        .cloned()
        .collect()
}
