//! Gradient-boosted regression trees over one-hot cell encodings.
//!
//! Plain squared-error boosting: each round fits a depth-limited regression
//! tree to the residuals with exact greedy splits, then adds it with a
//! shrinkage factor. Training is deterministic; randomness (bootstrapping)
//! belongs to callers that want ensembles.

use serde::{Deserialize, Serialize};

use crate::space::{CellEncoding, NUM_EDGES, NUM_OPS};

/// Input dimensionality: 6 edges, one-hot over 5 ops.
pub const ONE_HOT_DIM: usize = NUM_EDGES * NUM_OPS;

/// One-hot encoding of a cell (30-dim, 0/1 values).
pub fn one_hot_encoding(enc: &CellEncoding) -> [f64; ONE_HOT_DIM] {
    let mut out = [0.0f64; ONE_HOT_DIM];
    for (edge, op) in enc.ops.iter().enumerate() {
        out[edge * NUM_OPS + op.code() as usize] = 1.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Conventional surrogate training-set size at full scale.
    pub default_train_size: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            rounds: 200,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 2,
            default_train_size: 900,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err("rounds must be >= 1".to_string());
        }
        if self.max_depth == 0 {
            return Err("max_depth must be >= 1".to_string());
        }
        if !(0.0 < self.shrinkage && self.shrinkage <= 1.0) {
            return Err("shrinkage must be in (0, 1]".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf(value) => return value,
                Node::Split { feature, left, right } => {
                    at = if x[feature] < 0.5 { left } else { right };
                }
            }
        }
    }
}

/// The fitted surrogate: base value plus shrunk tree outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtSurrogate {
    base: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
    /// Training RMSE after each round (monotone non-increasing).
    pub train_rmse: Vec<f64>,
}

impl GbtSurrogate {
    pub fn predict_features(&self, x: &[f64]) -> f64 {
        let mut out = self.base;
        for tree in &self.trees {
            out += self.shrinkage * tree.predict(x);
        }
        out
    }

    pub fn predict(&self, enc: &CellEncoding) -> f64 {
        self.predict_features(&one_hot_encoding(enc))
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }
}

struct TreeBuilder<'a> {
    features: &'a [[f64; ONE_HOT_DIM]],
    residuals: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&r| self.residuals[r]).sum::<f64>() / rows.len() as f64
    }

    fn sse(&self, rows: &[usize], mean: f64) -> f64 {
        rows.iter()
            .map(|&r| {
                let d = self.residuals[r] - mean;
                d * d
            })
            .sum()
    }

    /// Greedy best split by squared-error reduction; features are binary so
    /// the only candidate threshold is 0.5. Ties resolve to the lowest
    /// feature index.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, Vec<usize>, Vec<usize>)> {
        let parent_mean = self.mean(rows);
        let parent_sse = self.sse(rows, parent_mean);
        let mut best: Option<(f64, usize)> = None;
        for feature in 0..ONE_HOT_DIM {
            let mut left_sum = 0.0f64;
            let mut left_n = 0usize;
            let mut right_sum = 0.0f64;
            let mut right_n = 0usize;
            for &r in rows {
                if self.features[r][feature] < 0.5 {
                    left_sum += self.residuals[r];
                    left_n += 1;
                } else {
                    right_sum += self.residuals[r];
                    right_n += 1;
                }
            }
            if left_n < self.min_leaf || right_n < self.min_leaf {
                continue;
            }
            // SSE reduction of a binary split with leaf means.
            let gain = left_sum * left_sum / left_n as f64
                + right_sum * right_sum / right_n as f64
                - (left_sum + right_sum) * (left_sum + right_sum) / rows.len() as f64;
            if gain > 1e-12 && best.map_or(true, |(g, _)| gain > g) {
                best = Some((gain, feature));
            }
        }
        let (_, feature) = best?;
        let _ = parent_sse;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &r in rows {
            if self.features[r][feature] < 0.5 {
                left.push(r);
            } else {
                right.push(r);
            }
        }
        Some((feature, left, right))
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        if depth < self.max_depth {
            if let Some((feature, left_rows, right_rows)) = self.best_split(&rows) {
                let slot = self.nodes.len();
                self.nodes.push(Node::Leaf(0.0)); // placeholder
                let left = self.build(left_rows, depth + 1);
                let right = self.build(right_rows, depth + 1);
                self.nodes[slot] = Node::Split { feature, left, right };
                return slot;
            }
        }
        let value = self.mean(&rows);
        self.nodes.push(Node::Leaf(value));
        self.nodes.len() - 1
    }
}

/// Fits the surrogate by squared-error boosting. Deterministic. Training
/// RMSE is recorded per round and never increases (shrinkage <= 1 and leaf
/// values are least-squares optimal per leaf). All-identical targets yield
/// a constant model.
pub fn fit_gbt(train: &[(CellEncoding, f64)], cfg: &GbtConfig) -> Result<GbtSurrogate, String> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err("need at least 2 training points".to_string());
    }
    let features: Vec<[f64; ONE_HOT_DIM]> =
        train.iter().map(|(enc, _)| one_hot_encoding(enc)).collect();
    let targets: Vec<f64> = train.iter().map(|(_, y)| *y).collect();
    let base = targets.iter().sum::<f64>() / targets.len() as f64;

    let mut predictions = vec![base; targets.len()];
    let mut trees = Vec::new();
    let mut train_rmse = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let residuals: Vec<f64> = targets
            .iter()
            .zip(predictions.iter())
            .map(|(y, p)| y - p)
            .collect();
        let mut builder = TreeBuilder {
            features: &features,
            residuals: &residuals,
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_leaf,
            nodes: Vec::new(),
        };
        let root = builder.build((0..targets.len()).collect(), 0);
        debug_assert_eq!(root, 0);
        let tree = Tree { nodes: builder.nodes };
        for (i, pred) in predictions.iter_mut().enumerate() {
            *pred += cfg.shrinkage * tree.predict(&features[i]);
        }
        trees.push(tree);
        let mse = targets
            .iter()
            .zip(predictions.iter())
            .map(|(y, p)| (y - p) * (y - p))
            .sum::<f64>()
            / targets.len() as f64;
        train_rmse.push(mse.sqrt());
    }
    Ok(GbtSurrogate {
        base,
        shrinkage: cfg.shrinkage,
        trees,
        train_rmse,
    })
}
