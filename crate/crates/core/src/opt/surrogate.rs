use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small bagged regression forest used to rank unevaluated candidates.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Node>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 16,
            max_depth: 6,
            min_leaf: 2,
        }
    }
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len().max(1) as f64
}

fn sse(ys: &[f64]) -> f64 {
    let m = mean(ys);
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

fn grow(xs: &[&[f64]], ys: &[f64], depth: usize, p: &ForestParams, rng: &mut ChaCha8Rng) -> Node {
    if depth >= p.max_depth || ys.len() < 2 * p.min_leaf || sse(ys) <= 1e-12 {
        return Node::Leaf(mean(ys));
    }
    let dims = xs[0].len();
    let mut features: Vec<usize> = (0..dims).collect();
    features.shuffle(rng);
    features.truncate(dims.div_ceil(2).max(1));
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in &features {
        let mut values: Vec<f64> = xs.iter().map(|x| x[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<f64>, Vec<f64>) = {
                let mut l = Vec::new();
                let mut r = Vec::new();
                for (x, &y) in xs.iter().zip(ys) {
                    if x[f] <= t {
                        l.push(y)
                    } else {
                        r.push(y)
                    }
                }
                (l, r)
            };
            if l.len() < p.min_leaf || r.len() < p.min_leaf {
                continue;
            }
            let score = sse(&l) + sse(&r);
            if best.is_none_or(|b| score < b.0) {
                best = Some((score, f, t));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return Node::Leaf(mean(ys));
    };
    let (mut lx, mut ly, mut rx, mut ry) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (x, &y) in xs.iter().zip(ys) {
        if x[feature] <= threshold {
            lx.push(*x);
            ly.push(y);
        } else {
            rx.push(*x);
            ry.push(y);
        }
    }
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(&lx, &ly, depth + 1, p, rng)),
        right: Box::new(grow(&rx, &ry, depth + 1, p, rng)),
    }
}

impl Forest {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], params: ForestParams, seed: u64) -> Forest {
        assert_eq!(xs.len(), ys.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.trees)
            .map(|_| {
                let idx: Vec<usize> = (0..xs.len()).map(|_| rng.gen_range(0..xs.len())).collect();
                let bx: Vec<&[f64]> = idx.iter().map(|&i| xs[i].as_slice()).collect();
                let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
                grow(&bx, &by, 0, &params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len().max(1) as f64
    }
}
