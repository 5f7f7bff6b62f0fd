//! Second-order gradient boosting on logistic loss with exact greedy splits.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::config::ClassifierConfig;
use crate::error::{Error, Result};

const MIN_GAIN: f64 = 1e-6;
/// Slack for a split whose gain is zero up to rounding.
const ZERO_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] < threshold { left } else { right },
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub kind: String,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Initial margin (log-odds) shared by every row.
    pub base_score: f64,
    pub seed: u64,
    pub trees: Vec<Tree>,
    /// Mean training log-loss after each round (index 0: before any tree).
    pub train_loss: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss from margins, computed stably.
fn log_loss(margin: &[f64], y: &[u8]) -> f64 {
    margin
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
            softplus - t as f64 * z
        })
        .sum::<f64>()
        / margin.len() as f64
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    cfg: &'a ClassifierConfig,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf(&self, g: f64, h: f64) -> Node {
        Node::Leaf {
            weight: -self.cfg.learning_rate * g / (h + self.cfg.lambda),
        }
    }

    /// `sorted[f]` lists this node's rows ordered by feature f.
    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let id = self.nodes.len();
        self.nodes.push(self.leaf(g, h));
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(&sorted, g, h) else {
            return id;
        };
        let goes_left: Vec<bool> = {
            let mut v = vec![false; self.x.nrows()];
            for &r in rows {
                v[r as usize] = self.x[[r as usize, best.feature]] < best.threshold;
            }
            v
        };
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&r| goes_left[r as usize]);
            left.push(l);
            right.push(r);
        }
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&self, sorted: &[Vec<u32>], g: f64, h: f64) -> Option<BestSplit> {
        let lambda = self.cfg.lambda;
        let parent = g * g / (h + lambda);
        let mut best: Option<BestSplit> = None;
        for (f, list) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in 0..list.len() - 1 {
                let r = list[w] as usize;
                gl += self.grad[r];
                hl += self.hess[r];
                let (a, b) = (self.x[[r, f]], self.x[[list[w + 1] as usize, f]]);
                if a == b {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = a + (b - a) / 2.0;
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: if mid > a { mid } else { b },
                    });
                }
            }
        }
        // A zero-gain split is still taken in an impure node: interactions such
        // as XOR show no first-order gain until the second split.
        let rows = &sorted[0];
        let g0 = self.grad[rows[0] as usize];
        let impure = rows.iter().any(|&r| self.grad[r as usize] != g0);
        best.filter(|b| b.gain > MIN_GAIN || (impure && b.gain > -ZERO_GAIN))
    }
}

/// Fit a boosted ensemble on rows of `x` with binary targets `y`.
pub fn train_gbt(
    x: ArrayView2<f64>,
    y: &[u8],
    feature_names: &[String],
    cfg: &ClassifierConfig,
    kind: &str,
    seed: u64,
) -> Result<GbtModel> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::invalid(format!("{n} rows but {} labels", y.len())));
    }
    if feature_names.len() != d {
        return Err(Error::invalid("feature names do not match column count"));
    }
    if !y.iter().any(|&v| v == 0) || !y.iter().any(|&v| v == 1) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training features contain non-finite values"));
    }
    if d == 0 {
        return Err(Error::invalid("no feature columns"));
    }
    let presorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[[a as usize, f]].total_cmp(&x[[b as usize, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let base_score = 0.0;
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let mut train_loss = vec![log_loss(&margin, y)];
    for _ in 0..cfg.n_estimators {
        let (grad, hess): (Vec<f64>, Vec<f64>) = margin
            .iter()
            .zip(y)
            .map(|(&z, &t)| {
                let p = sigmoid(z);
                (p - t as f64, (p * (1.0 - p)).max(1e-16))
            })
            .unzip();
        let mut b = Builder {
            x,
            grad,
            hess,
            cfg,
            nodes: Vec::new(),
        };
        b.build(presorted.clone(), 0);
        let tree = Tree { nodes: b.nodes };
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(&x.row(i).to_vec());
        }
        trees.push(tree);
        train_loss.push(log_loss(&margin, y));
    }
    Ok(GbtModel {
        kind: kind.to_string(),
        n_features: d,
        feature_names: feature_names.to_vec(),
        n_estimators: cfg.n_estimators,
        max_depth: cfg.max_depth,
        learning_rate: cfg.learning_rate,
        lambda: cfg.lambda,
        min_child_weight: cfg.min_child_weight,
        base_score,
        seed,
        trees,
        train_loss,
    })
}

impl GbtModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

/// P(class 1) for each row.
pub fn predict_gbt(model: &GbtModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::invalid(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.ncols()
        )));
    }
    Ok(x
        .outer_iter()
        .map(|r| sigmoid(model.margin(&r.to_vec())).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
        .collect())
}
