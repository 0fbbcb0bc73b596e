use super::NetworkError;
use crate::workload::{ParallelStrategy, Parallelism};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Split of parallelism axes between the package (NoP) and the optical network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub intra: BTreeSet<Parallelism>,
    /// Axes with extent > 1 that cross packages.
    pub inter: BTreeSet<Parallelism>,
}

impl Mapping {
    pub fn intra_product(&self, s: &ParallelStrategy) -> u64 {
        self.intra.iter().map(|&p| s.axis_degree(p)).product()
    }

    /// The intra-MCM groups must tile the package exactly.
    pub fn check_fill(&self, s: &ParallelStrategy, dies: u64) -> Result<(), NetworkError> {
        let product = self.intra_product(s);
        if product == dies {
            Ok(())
        } else {
            Err(NetworkError::McmNotFilled { product, dies })
        }
    }

    pub fn is_intra(&self, p: Parallelism) -> bool {
        self.intra.contains(&p)
    }
}

/// TP always stays on the package. The highest-traffic remaining axis whose
/// extent times `tp` divides the package joins it; everything else with
/// extent > 1 goes inter-MCM.
pub fn map_parallelisms(
    s: &ParallelStrategy,
    mcm_dies: u64,
    volumes: &BTreeMap<Parallelism, f64>,
) -> Result<Mapping, NetworkError> {
    if s.tp > mcm_dies {
        return Err(NetworkError::TpExceedsMcm {
            tp: s.tp,
            dies: mcm_dies,
        });
    }
    let mut intra = BTreeSet::from([Parallelism::Tp]);
    let mut rest: Vec<Parallelism> = Parallelism::ALL[1..]
        .iter()
        .copied()
        .filter(|&p| s.axis_degree(p) > 1)
        .collect();
    // Stable sort keeps the fixed order among equal volumes.
    rest.sort_by(|a, b| {
        let va = volumes.get(a).copied().unwrap_or(0.0);
        let vb = volumes.get(b).copied().unwrap_or(0.0);
        vb.total_cmp(&va)
    });
    if let Some(&p) = rest.iter().find(|&&p| {
        let q = s.tp * s.axis_degree(p);
        q <= mcm_dies && mcm_dies % q == 0
    }) {
        intra.insert(p);
    }
    let inter = rest.into_iter().filter(|p| !intra.contains(p)).collect();
    Ok(Mapping { intra, inter })
}
