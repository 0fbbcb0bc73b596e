use super::{CollectiveKind, ModelConfig, ParallelStrategy, Parallelism, PhaseTag};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComputeOp {
    AttnNorm,
    QkvProj,
    Attention,
    OutProj,
    FfnNorm,
    Router,
    Ffn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerPhase {
    Compute(ComputeOp),
    Comm {
        parallelism: Parallelism,
        collective: CollectiveKind,
        phase: PhaseTag,
    },
}

impl LayerPhase {
    fn comm(parallelism: Parallelism, collective: CollectiveKind, phase: PhaseTag) -> Self {
        LayerPhase::Comm {
            parallelism,
            collective,
            phase,
        }
    }

    pub fn is_comm_of(&self, p: Parallelism) -> bool {
        matches!(self, LayerPhase::Comm { parallelism, .. } if *parallelism == p)
    }

    pub fn is_compute(&self) -> bool {
        matches!(self, LayerPhase::Compute(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PipelineOp {
    Forward(u64),
    Backward(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSend {
    pub from_stage: u64,
    pub to_stage: u64,
    pub microbatch: u64,
    pub backward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub layers_per_stage: u64,
    /// Phases of one layer in forward order.
    pub forward_layer: Vec<LayerPhase>,
    /// Phases of one layer in backward order.
    pub backward_layer: Vec<LayerPhase>,
    /// 1F1B op order per pipeline stage.
    pub stages: Vec<Vec<PipelineOp>>,
    /// Stage-boundary transfers of the whole iteration.
    pub p2p: Vec<PipelineSend>,
}

/// 1F1B order for every stage: `pp - s - 1` warmup forwards, alternating
/// forward/backward in steady state, then the remaining backwards.
pub fn one_f_one_b(pp: u64, microbatches: u64) -> Vec<Vec<PipelineOp>> {
    (0..pp)
        .map(|s| {
            let warmup = (pp - s - 1).min(microbatches);
            let mut ops = Vec::with_capacity(2 * microbatches as usize);
            let mut next_f = 0;
            let mut next_b = 0;
            while next_f < warmup {
                ops.push(PipelineOp::Forward(next_f));
                next_f += 1;
            }
            while next_f < microbatches {
                ops.push(PipelineOp::Forward(next_f));
                next_f += 1;
                ops.push(PipelineOp::Backward(next_b));
                next_b += 1;
            }
            while next_b < microbatches {
                ops.push(PipelineOp::Backward(next_b));
                next_b += 1;
            }
            ops
        })
        .collect()
}

/// Ordered compute and communication phases of one layer plus the pipeline
/// schedule. CP traffic stays inside attention and EP traffic inside the FFN
/// block, with compute phases between them.
pub fn phase_schedule(model: &ModelConfig, s: &ParallelStrategy) -> PhaseSchedule {
    use CollectiveKind::*;
    use ComputeOp::*;
    use PhaseTag::*;

    let tp = s.tp > 1;
    let cp = s.cp > 1;
    let ep = model.is_moe() && s.ep > 1;

    let mut fwd = vec![LayerPhase::Compute(AttnNorm)];
    if tp {
        fwd.push(LayerPhase::comm(Parallelism::Tp, AllGather, AttentionPhase));
    }
    fwd.push(LayerPhase::Compute(QkvProj));
    if cp {
        fwd.push(LayerPhase::comm(Parallelism::Cp, AllGather, AttentionPhase));
    }
    fwd.push(LayerPhase::Compute(Attention));
    fwd.push(LayerPhase::Compute(OutProj));
    if tp {
        fwd.push(LayerPhase::comm(Parallelism::Tp, ReduceScatter, AttentionPhase));
    }
    fwd.push(LayerPhase::Compute(FfnNorm));
    if tp {
        fwd.push(LayerPhase::comm(Parallelism::Tp, AllGather, FfnPhase));
    }
    if model.is_moe() {
        fwd.push(LayerPhase::Compute(Router));
    }
    if ep {
        fwd.push(LayerPhase::comm(Parallelism::Ep, AllToAll, FfnPhase));
    }
    fwd.push(LayerPhase::Compute(Ffn));
    if ep {
        fwd.push(LayerPhase::comm(Parallelism::Ep, AllToAll, FfnPhase));
    }
    if tp {
        fwd.push(LayerPhase::comm(Parallelism::Tp, ReduceScatter, FfnPhase));
    }
    let bwd: Vec<LayerPhase> = fwd.iter().rev().copied().collect();

    let stages = one_f_one_b(s.pp, s.num_microbatches);
    let mut p2p = Vec::new();
    for (stage, ops) in stages.iter().enumerate() {
        let stage = stage as u64;
        for op in ops {
            match *op {
                PipelineOp::Forward(mb) if stage + 1 < s.pp => p2p.push(PipelineSend {
                    from_stage: stage,
                    to_stage: stage + 1,
                    microbatch: mb,
                    backward: false,
                }),
                PipelineOp::Backward(mb) if stage > 0 => p2p.push(PipelineSend {
                    from_stage: stage,
                    to_stage: stage - 1,
                    microbatch: mb,
                    backward: true,
                }),
                _ => {}
            }
        }
    }

    PhaseSchedule {
        layers_per_stage: (model.num_layers / s.pp).max(1),
        forward_layer: fwd,
        backward_layer: bwd,
        stages,
        p2p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_has_no_all_to_all() {
        let m = ModelConfig::toy_dense(2, 16, 64, 8, 4);
        let sch = phase_schedule(&m, &ParallelStrategy::new(2, 2, 1, 1, 1));
        assert!(!sch.forward_layer.iter().any(|p| p.is_comm_of(Parallelism::Ep)));
    }

    #[test]
    fn moe_cp_then_ep_with_out_proj_between() {
        let m = ModelConfig::qwen3_235b_a22b();
        let sch = phase_schedule(&m, &ParallelStrategy::new(8, 4, 2, 16, 8));
        let f = &sch.forward_layer;
        let cp: Vec<usize> = (0..f.len()).filter(|&i| f[i].is_comm_of(Parallelism::Cp)).collect();
        let ep: Vec<usize> = (0..f.len()).filter(|&i| f[i].is_comm_of(Parallelism::Ep)).collect();
        assert_eq!(cp.len(), 1);
        assert_eq!(ep.len(), 2);
        assert!(cp[0] < ep[0]);
        assert!(f[cp[0]..ep[0]].contains(&LayerPhase::Compute(ComputeOp::OutProj)));
    }

    #[test]
    fn cp_and_ep_never_adjacent_across_layers() {
        let m = ModelConfig::qwen3_235b_a22b();
        let sch = phase_schedule(&m, &ParallelStrategy::new(1, 4, 2, 128, 8));
        // Two consecutive layers back to back.
        let seq: Vec<LayerPhase> = sch
            .forward_layer
            .iter()
            .chain(sch.forward_layer.iter())
            .copied()
            .collect();
        let marks: Vec<(usize, Parallelism)> = seq
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                LayerPhase::Comm { parallelism, .. } if matches!(parallelism, Parallelism::Cp | Parallelism::Ep) => {
                    Some((i, *parallelism))
                }
                _ => None,
            })
            .collect();
        for w in marks.windows(2) {
            if w[0].1 != w[1].1 {
                assert!(seq[w[0].0 + 1..w[1].0].iter().any(|p| p.is_compute()));
            }
        }
    }

    /// Clocked execution of the pipeline: each tick, every stage runs one op
    /// whose inputs have arrived (backward first). Counts stage-boundary sends.
    fn clocked_sends(pp: usize, mb: usize) -> usize {
        let mut fwd = vec![vec![false; mb]; pp];
        let mut bwd = vec![vec![false; mb]; pp];
        let (mut nf, mut nb) = (vec![0; pp], vec![0; pp]);
        let mut sends = 0;
        let mut remaining = 2 * pp * mb;
        while remaining > 0 {
            let (f_prev, b_prev) = (fwd.clone(), bwd.clone());
            let mut progressed = false;
            for s in 0..pp {
                let i = nb[s];
                if i < mb && f_prev[s][i] && (s + 1 == pp || b_prev[s + 1][i]) {
                    bwd[s][i] = true;
                    nb[s] += 1;
                    sends += usize::from(s > 0);
                } else if nf[s] < mb && (s == 0 || f_prev[s - 1][nf[s]]) {
                    fwd[s][nf[s]] = true;
                    nf[s] += 1;
                    sends += usize::from(s + 1 < pp);
                } else {
                    continue;
                }
                progressed = true;
                remaining -= 1;
            }
            assert!(progressed);
        }
        sends
    }

    #[test]
    fn p2p_count_matches_clocked_pipeline() {
        let m = ModelConfig::qwen3_235b_a22b();
        for (pp, mb) in [(2u64, 4u64), (2, 2), (4, 8), (1, 1)] {
            let mut s = ParallelStrategy::new(1, 1, pp, 1, 1).with_microbatches(mb);
            s.dp = 1;
            let sch = phase_schedule(&m, &s);
            assert_eq!(
                sch.p2p.len(),
                clocked_sends(pp as usize, mb as usize),
                "pp={pp} mb={mb}"
            );
        }
        let s = ParallelStrategy::new(1, 1, 2, 1, 1).with_microbatches(4);
        assert_eq!(phase_schedule(&m, &s).p2p.len(), 8);
    }

    #[test]
    fn one_f_one_b_respects_dependencies() {
        for (pp, mb) in [(2u64, 4u64), (4, 4), (4, 9), (3, 3)] {
            let stages = one_f_one_b(pp, mb);
            for ops in &stages {
                assert_eq!(ops.len(), 2 * mb as usize);
                for i in 0..mb {
                    let f = ops.iter().position(|o| *o == PipelineOp::Forward(i)).unwrap();
                    let b = ops.iter().position(|o| *o == PipelineOp::Backward(i)).unwrap();
                    assert!(f < b);
                }
            }
            // In-flight forwards on the first stage never exceed pp.
            let mut inflight = 0i64;
            let mut peak = 0;
            for op in &stages[0] {
                match op {
                    PipelineOp::Forward(_) => inflight += 1,
                    PipelineOp::Backward(_) => inflight -= 1,
                }
                peak = peak.max(inflight);
            }
            assert!(peak as u64 <= pp);
        }
    }
}
