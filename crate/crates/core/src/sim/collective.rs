use crate::network::Shape;
use crate::workload::CollectiveKind;

const GB: f64 = 1e9;

/// Link bandwidth after the memory clamp: every forwarded byte is read and
/// written once, so a die cannot push more than half its memory bandwidth.
pub fn effective_bw(link_bw: f64, mem_bw: f64) -> f64 {
    link_bw.min(mem_bw / 2.0)
}

/// Time of one collective over a group of `n` devices.
///
/// `volume` is the per-device payload in bytes: the gathered buffer for
/// all-gather and reduce-scatter, the full send buffer (including the local
/// chunk) for all-to-all, and the message for point-to-point. Bandwidths are
/// GB/s per device; for a fully-connected all-to-all `link_bw` is the
/// aggregate over all peers.
pub fn collective_time(
    kind: CollectiveKind,
    n: u64,
    volume: f64,
    link_bw: f64,
    alpha: f64,
    mem_bw: f64,
    shape: Shape,
) -> f64 {
    if n <= 1 || volume <= 0.0 {
        return 0.0;
    }
    let b = effective_bw(link_bw, mem_bw) * GB;
    let nf = n as f64;
    match kind {
        CollectiveKind::AllGather | CollectiveKind::ReduceScatter => (nf - 1.0) * (alpha + volume / nf / b),
        CollectiveKind::AllToAll => match shape {
            Shape::FullyConnected => alpha + volume * (nf - 1.0) / nf / b,
            // Step k forwards every chunk still k or more hops from home.
            Shape::Ring => (1..n).map(|k| alpha + (n - k) as f64 * volume / nf / b).sum(),
        },
        CollectiveKind::P2P => alpha + volume / b,
    }
}
