//! Path-predictor ensemble search: small feed-forward regressors over
//! binary path-indicator encodings, candidates generated by mutating the
//! best architectures found so far, and independent Thompson sampling
//! across the ensemble as the acquisition.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{EvalSource, SearchError};
use super::strategies::{mutate_within, shuffled, Run, SearchBudget, SearchResult};
use crate::rng::stream_rng;
use crate::space::{extract_paths, ArchIndex, CellEncoding, OpKind};

/// Ops that can appear on a path (zeroize severs and never does).
const PATH_OPS: [OpKind; 4] = [OpKind::Skip, OpKind::Conv3x3, OpKind::Conv1x1, OpKind::AvgPool];

/// Number of distinct possible paths: 4 of length 1, 16 of length 2,
/// 64 of length 3.
pub const PATH_FEATURES: usize = 4 + 16 + 64;

fn path_op_slot(op: OpKind) -> usize {
    PATH_OPS.iter().position(|&p| p == op).expect("path op")
}

/// Binary indicator vector over all possible paths; multiplicity collapses
/// to presence.
pub fn path_indicator_features(enc: &CellEncoding) -> [f64; PATH_FEATURES] {
    let mut out = [0.0f64; PATH_FEATURES];
    for path in extract_paths(enc) {
        let ops = &path.0;
        let idx = match ops.len() {
            1 => path_op_slot(ops[0]),
            2 => 4 + path_op_slot(ops[0]) * 4 + path_op_slot(ops[1]),
            3 => {
                4 + 16
                    + path_op_slot(ops[0]) * 16
                    + path_op_slot(ops[1]) * 4
                    + path_op_slot(ops[2])
            }
            _ => unreachable!("paths have length 1..=3"),
        };
        out[idx] = 1.0;
    }
    out
}

/// One hidden-layer regressor trained with full-batch momentum SGD.
struct PathMlp {
    w1: Vec<f64>, // hidden x input
    b1: Vec<f64>,
    w2: Vec<f64>, // hidden
    b2: f64,
    hidden: usize,
}

impl PathMlp {
    fn new(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let std1 = (2.0 / PATH_FEATURES as f64).sqrt();
        let std2 = (1.0 / hidden as f64).sqrt();
        PathMlp {
            w1: (0..hidden * PATH_FEATURES)
                .map(|_| rng.gen_range(-1.0..1.0) * std1)
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.gen_range(-1.0..1.0) * std2).collect(),
            b2: 0.0,
            hidden,
        }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut h = vec![0.0f64; self.hidden];
        for j in 0..self.hidden {
            let row = &self.w1[j * PATH_FEATURES..(j + 1) * PATH_FEATURES];
            let mut acc = self.b1[j];
            for (w, xv) in row.iter().zip(x.iter()) {
                acc += w * xv;
            }
            h[j] = acc.max(0.0);
        }
        let mut y = self.b2;
        for (w, hv) in self.w2.iter().zip(h.iter()) {
            y += w * hv;
        }
        (h, y)
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).1
    }

    /// Full-batch gradient descent with momentum on mean squared error.
    fn fit(&mut self, xs: &[[f64; PATH_FEATURES]], ys: &[f64], iters: usize, lr: f64) {
        let n = xs.len() as f64;
        let momentum = 0.9;
        let mut vw1 = vec![0.0f64; self.w1.len()];
        let mut vb1 = vec![0.0f64; self.b1.len()];
        let mut vw2 = vec![0.0f64; self.w2.len()];
        let mut vb2 = 0.0f64;
        for _ in 0..iters {
            let mut gw1 = vec![0.0f64; self.w1.len()];
            let mut gb1 = vec![0.0f64; self.b1.len()];
            let mut gw2 = vec![0.0f64; self.w2.len()];
            let mut gb2 = 0.0f64;
            for (x, &y) in xs.iter().zip(ys.iter()) {
                let (h, pred) = self.forward(x);
                let dy = 2.0 * (pred - y) / n;
                gb2 += dy;
                for j in 0..self.hidden {
                    gw2[j] += dy * h[j];
                    if h[j] > 0.0 {
                        let dh = dy * self.w2[j];
                        gb1[j] += dh;
                        let row = &mut gw1[j * PATH_FEATURES..(j + 1) * PATH_FEATURES];
                        for (g, xv) in row.iter_mut().zip(x.iter()) {
                            *g += dh * xv;
                        }
                    }
                }
            }
            for (w, (g, v)) in self.w1.iter_mut().zip(gw1.iter().zip(vw1.iter_mut())) {
                *v = momentum * *v - lr * g;
                *w += *v;
            }
            for (b, (g, v)) in self.b1.iter_mut().zip(gb1.iter().zip(vb1.iter_mut())) {
                *v = momentum * *v - lr * g;
                *b += *v;
            }
            for (w, (g, v)) in self.w2.iter_mut().zip(gw2.iter().zip(vw2.iter_mut())) {
                *v = momentum * *v - lr * g;
                *w += *v;
            }
            vb2 = momentum * vb2 - lr * gb2;
            self.b2 += vb2;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BananasConfig {
    pub init_queries: usize,
    pub ensemble: usize,
    pub hidden: usize,
    pub train_iters: usize,
    pub lr: f64,
    /// Top archive entries mutated each iteration.
    pub parents: usize,
    pub children_per_parent: usize,
}

impl Default for BananasConfig {
    fn default() -> Self {
        BananasConfig {
            init_queries: 10,
            ensemble: 3,
            hidden: 16,
            train_iters: 250,
            lr: 0.05,
            parents: 8,
            children_per_parent: 8,
        }
    }
}

/// Predictor-ensemble search with path encodings and Thompson-sampling
/// acquisition: each candidate is scored by one uniformly drawn ensemble
/// member.
pub fn bananas_style_search(
    source: &mut dyn EvalSource,
    budget: SearchBudget,
    cfg: &BananasConfig,
) -> Result<SearchResult, SearchError> {
    if cfg.ensemble == 0 || cfg.parents == 0 || cfg.children_per_parent == 0 {
        return Err(SearchError::InvalidConfig(
            "ensemble, parents, children_per_parent must be >= 1".into(),
        ));
    }
    if budget.max_queries <= cfg.init_queries {
        return Err(SearchError::InvalidConfig(format!(
            "budget {} must exceed the initial design size {}",
            budget.max_queries, cfg.init_queries
        )));
    }
    let mut run = Run::new(source, budget)?;
    let mut rng = stream_rng(budget.seed, "bananas", 0);
    let all: Vec<u32> = run.candidates().to_vec();
    let domain: HashSet<u32> = all.iter().copied().collect();

    for index in shuffled(&all, &mut rng) {
        if run.queries_used() >= cfg.init_queries || run.exhausted() {
            break;
        }
        run.eval(index)?;
    }

    while !run.exhausted() {
        // Train the ensemble on the archive.
        let mut xs: Vec<[f64; PATH_FEATURES]> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut archive: Vec<(u32, f64)> = Vec::new();
        for (&i, d) in run.evaluated() {
            let enc = CellEncoding::from_index(ArchIndex(i)).expect("valid index");
            xs.push(path_indicator_features(&enc));
            ys.push(d.value);
            archive.push((i, d.value));
        }
        // Standardize targets so the fixed learning rate behaves.
        let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
        let std_y = (ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum::<f64>()
            / ys.len() as f64)
            .sqrt()
            .max(1e-9);
        let norm_ys: Vec<f64> = ys.iter().map(|y| (y - mean_y) / std_y).collect();
        let mut members = Vec::with_capacity(cfg.ensemble);
        for m in 0..cfg.ensemble {
            let mut member_rng = stream_rng(budget.seed, "bananas-member", m as u64);
            let mut mlp = PathMlp::new(cfg.hidden, &mut member_rng);
            mlp.fit(&xs, &norm_ys, cfg.train_iters, cfg.lr);
            members.push(mlp);
        }

        // Candidates: mutations of the current best archive entries.
        archive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut candidates = Vec::new();
        let mut seen = HashSet::new();
        for &(parent_index, _) in archive.iter().take(cfg.parents) {
            let parent = CellEncoding::from_index(ArchIndex(parent_index)).expect("valid");
            for _ in 0..cfg.children_per_parent {
                let child = mutate_within(&parent, &domain, &all, &mut rng);
                let index = child.to_index().0;
                if run.known(index).is_none() && seen.insert(index) {
                    candidates.push(child);
                }
            }
        }
        if candidates.is_empty() {
            // Archive neighborhood exhausted; fall back to a random pick.
            match shuffled(&all, &mut rng)
                .into_iter()
                .find(|i| run.known(*i).is_none())
            {
                Some(index) => {
                    run.eval(index)?;
                    continue;
                }
                None => break,
            }
        }

        // Independent Thompson sampling: each candidate is judged by one
        // randomly drawn member.
        let mut best: Option<(u32, f64)> = None;
        for cand in &candidates {
            let member = &members[rng.gen_range(0..members.len())];
            let score = member.predict(&path_indicator_features(cand));
            let index = cand.to_index().0;
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((index, score));
            }
        }
        run.eval(best.expect("non-empty candidates").0)?;
    }
    run.finish("bananas")
}
