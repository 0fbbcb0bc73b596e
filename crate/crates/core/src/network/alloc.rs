use super::{floor_tol, order, NetworkError};
use crate::workload::Parallelism;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Two parallelisms time-sharing one set of links through OCS reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseGroup {
    pub pair: (Parallelism, Parallelism),
    pub links: u64,
}

/// Per-MCM split of the optical links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkAllocation {
    /// Exclusive links. Reuse members are absent here.
    pub links: BTreeMap<Parallelism, u64>,
    pub reuse: Option<ReuseGroup>,
}

impl LinkAllocation {
    pub fn total(&self) -> u64 {
        self.links.values().sum::<u64>() + self.reuse.map_or(0, |r| r.links)
    }

    /// Links a parallelism can use while it communicates.
    pub fn links_for(&self, p: Parallelism) -> u64 {
        match self.reuse {
            Some(r) if r.pair.0 == p || r.pair.1 == p => r.links,
            _ => self.links.get(&p).copied().unwrap_or(0),
        }
    }
}

struct Unit {
    members: Vec<Parallelism>,
    weight: f64,
    links: u64,
}

impl Unit {
    fn rank(&self) -> usize {
        self.members.iter().map(|&p| order(p)).min().unwrap_or(usize::MAX)
    }
}

/// Index of the heaviest unit by `key`, ties to the earliest in fixed order.
fn argmax_by<F: Fn(&Unit) -> f64>(units: &[Unit], key: F) -> usize {
    let mut best = 0;
    for i in 1..units.len() {
        let (a, b) = (key(&units[i]), key(&units[best]));
        if a > b || (a == b && units[i].rank() < units[best].rank()) {
            best = i;
        }
    }
    best
}

/// Splits `total_links` by traffic share, `l_p = floor(L * v_p / sum(v))`.
///
/// With a reuse pair `(p, p')`, the pair shares
/// `floor(L * max(v_p, v_p') / (sum(v_others) + max(v_p, v_p')))` links and the
/// remainder is split among the others by share. Links lost to flooring go to
/// the heaviest unit; a nonzero-volume unit that floored to zero takes one link
/// from the largest allocation.
pub fn allocate_links(
    total_links: u64,
    volumes: &BTreeMap<Parallelism, f64>,
    reuse_pair: Option<(Parallelism, Parallelism)>,
) -> Result<LinkAllocation, NetworkError> {
    let active = |p: &Parallelism| volumes.get(p).copied().unwrap_or(0.0) > 0.0;
    let reuse_pair = reuse_pair.filter(|(a, b)| a != b && active(a) && active(b));

    let mut units: Vec<Unit> = Vec::new();
    if let Some((a, b)) = reuse_pair {
        units.push(Unit {
            members: vec![a, b],
            weight: volumes[&a].max(volumes[&b]),
            links: 0,
        });
    }
    for (&p, &v) in volumes {
        let in_pair = reuse_pair.is_some_and(|(a, b)| a == p || b == p);
        if v > 0.0 && !in_pair {
            units.push(Unit {
                members: vec![p],
                weight: v,
                links: 0,
            });
        }
    }
    if units.len() as u64 > total_links {
        return Err(NetworkError::InsufficientLinks {
            links: total_links,
            needed: units.len() as u64,
        });
    }

    let l = total_links as f64;
    if reuse_pair.is_some() {
        let others: f64 = units[1..].iter().map(|u| u.weight).sum();
        units[0].links = floor_tol(l * units[0].weight / (others + units[0].weight));
        let remaining = (total_links - units[0].links) as f64;
        for u in units[1..].iter_mut() {
            u.links = floor_tol(remaining * u.weight / others);
        }
    } else {
        let sum: f64 = units.iter().map(|u| u.weight).sum();
        for u in units.iter_mut() {
            u.links = floor_tol(l * u.weight / sum);
        }
    }

    if !units.is_empty() {
        let assigned: u64 = units.iter().map(|u| u.links).sum();
        let heaviest = argmax_by(&units, |u| u.weight);
        units[heaviest].links += total_links.saturating_sub(assigned);
        for i in 0..units.len() {
            if units[i].links == 0 {
                let donor = argmax_by(&units, |u| u.links as f64);
                units[donor].links -= 1;
                units[i].links = 1;
            }
        }
    }

    let mut out = LinkAllocation {
        links: volumes.keys().map(|&p| (p, 0)).collect(),
        reuse: None,
    };
    for u in units {
        if u.members.len() == 2 {
            out.links.remove(&u.members[0]);
            out.links.remove(&u.members[1]);
            out.reuse = Some(ReuseGroup {
                pair: (u.members[0], u.members[1]),
                links: u.links,
            });
        } else {
            out.links.insert(u.members[0], u.links);
        }
    }
    Ok(out)
}
