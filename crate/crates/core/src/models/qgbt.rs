//! Histogram-based gradient-boosted trees for the pinball loss.
//!
//! Splits maximise `G_L^2/n_L + G_R^2/n_R - G^2/n` over pinball gradients.
//! Leaves take the pinball-optimal residual quantile, then the L1 and L2
//! penalties, then the learning rate.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_quantiles, val_aql, ModelError, QuantileRegressor, TrainReport};
use crate::numeric::{mix_seed, percentile_sorted, pinball_minimizer, pinball_residual, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgbtConfig {
    pub n_estimators: usize,
    /// Root-only trees when 0.
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_by_tree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
}

fn default_min_leaf() -> usize {
    5
}

fn default_bins() -> usize {
    256
}

impl Default for QgbtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.05,
            subsample: 1.0,
            colsample_by_tree: 1.0,
            reg_alpha: 0.0,
            reg_lambda: 0.0,
            min_samples_leaf: default_min_leaf(),
            n_bins: default_bins(),
        }
    }
}

impl QgbtConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_estimators < 1 {
            return bad("n_estimators must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must lie in (0, 1], got {}", self.learning_rate));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample must lie in (0, 1], got {}", self.subsample));
        }
        if !(self.colsample_by_tree > 0.0 && self.colsample_by_tree <= 1.0) {
            return bad(format!("colsample_by_tree must lie in (0, 1], got {}", self.colsample_by_tree));
        }
        if !(self.reg_alpha >= 0.0) || !(self.reg_lambda >= 0.0) {
            return bad("reg_alpha and reg_lambda must be non-negative".into());
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1".into());
        }
        if !(2..=256).contains(&self.n_bins) {
            return bad(format!("n_bins must lie in [2, 256], got {}", self.n_bins));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, bin: u8, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    fn predict_binned(&self, binned: &[Vec<u8>], row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, bin, left, right, .. } => {
                    i = if binned[*feature][row] <= *bin { *left } else { *right }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(nodes, *left).max(d(nodes, *right)),
            }
        }
        d(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEnsemble {
    pub tau: f64,
    pub base: f64,
    pub trees: Vec<Tree>,
    /// Mean training pinball loss after each round.
    pub train_loss: Vec<f64>,
}

impl QuantileEnsemble {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        self.trees.iter().fold(self.base, |acc, t| acc + t.predict_row(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgbtModel {
    pub config: QgbtConfig,
    pub quantiles: Vec<f64>,
    pub ensembles: Vec<QuantileEnsemble>,
}

/// Split candidates for one column: at most `n_bins - 1` ascending thresholds.
pub fn bin_edges(col: ArrayView1<f64>, n_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut unique = sorted.clone();
    unique.dedup();
    let mut edges: Vec<f64> = if unique.len() <= n_bins {
        unique.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
    } else {
        (1..n_bins).map(|i| percentile_sorted(&sorted, i as f64 / n_bins as f64)).collect()
    };
    let max = *unique.last().unwrap_or(&0.0);
    edges.retain(|e| *e < max);
    edges.dedup();
    edges
}

fn bin_column(col: ArrayView1<f64>, edges: &[f64]) -> Vec<u8> {
    col.iter().map(|v| edges.partition_point(|e| e < v) as u8).collect()
}

struct Grower<'a> {
    cfg: &'a QgbtConfig,
    binned: &'a [Vec<u8>],
    edges: &'a [Vec<f64>],
    features: Vec<usize>,
    grad: Vec<f64>,
    resid: Vec<f64>,
    tau: f64,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let mut r: Vec<f64> = rows.iter().map(|&i| self.resid[i]).collect();
        let q = pinball_minimizer(&mut r, self.tau);
        let shrunk = if q > self.cfg.reg_alpha {
            q - self.cfg.reg_alpha
        } else if q < -self.cfg.reg_alpha {
            q + self.cfg.reg_alpha
        } else {
            0.0
        };
        let n = rows.len() as f64;
        shrunk * n / (n + self.cfg.reg_lambda) * self.cfg.learning_rate
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, u8)> {
        let min_leaf = self.cfg.min_samples_leaf;
        let n = rows.len();
        let g_total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let parent = g_total * g_total / n as f64;
        let mut best: Option<(f64, usize, u8)> = None;
        let mut hist_g = [0.0f64; 256];
        let mut hist_n = [0usize; 256];
        for &f in &self.features {
            let nb = self.edges[f].len() + 1;
            if nb < 2 {
                continue;
            }
            hist_g[..nb].fill(0.0);
            hist_n[..nb].fill(0);
            let col = &self.binned[f];
            for &i in rows {
                let b = col[i] as usize;
                hist_g[b] += self.grad[i];
                hist_n[b] += 1;
            }
            let (mut gl, mut nl) = (0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hist_g[b];
                nl += hist_n[b];
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let gr = g_total - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, b as u8));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.cfg.max_depth && rows.len() >= 2 * self.cfg.min_samples_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let value = self.leaf_value(&rows);
                self.nodes[idx] = Node::Leaf { value };
            }
            Some((f, b)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.binned[f][i] <= b);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[idx] = Node::Split { feature: f, threshold: self.edges[f][b as usize], bin: b, left, right };
            }
        }
        idx
    }
}

fn mean_pinball(y: ArrayView1<f64>, f: &[f64], tau: f64) -> f64 {
    let s: CompensatedSum = y.iter().zip(f).map(|(a, p)| pinball_residual(a - p, tau)).collect();
    s.value() / y.len() as f64
}

fn fit_one(cfg: &QgbtConfig, x: ArrayView2<f64>, y: ArrayView1<f64>, binned: &[Vec<u8>], edges: &[Vec<f64>], tau: f64, seed: u64) -> QuantileEnsemble {
    let n = y.len();
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys = y.to_vec();
    let base = pinball_minimizer(&mut ys, tau);
    let mut f = vec![base; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let mut train_loss = Vec::with_capacity(cfg.n_estimators);
    let n_rows = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((cfg.colsample_by_tree * d as f64).ceil() as usize).clamp(d.min(1), d);
    for _ in 0..cfg.n_estimators {
        let rows: Vec<usize> = if n_rows < n {
            let mut r = sample(&mut rng, n, n_rows).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if n_cols < d {
            let mut c = sample(&mut rng, d, n_cols).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..d).collect()
        };
        let resid: Vec<f64> = y.iter().zip(&f).map(|(a, p)| a - p).collect();
        let grad: Vec<f64> = resid.iter().map(|r| if *r >= 0.0 { -tau } else { 1.0 - tau }).collect();
        let mut g = Grower { cfg, binned, edges, features, grad, resid, tau, nodes: Vec::new() };
        g.grow(rows, 0);
        let tree = Tree { nodes: g.nodes };
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += tree.predict_binned(binned, i);
        }
        train_loss.push(mean_pinball(y, &f, tau));
        trees.push(tree);
    }
    QuantileEnsemble { tau, base, trees, train_loss }
}

impl QuantileRegressor for QgbtModel {
    type Config = QgbtConfig;

    fn fit(
        cfg: &QgbtConfig,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        check_quantiles(quantiles)?;
        cfg.validate()?;
        let (x, y) = train;
        if y.is_empty() {
            return Err(ModelError::Empty);
        }
        let edges: Vec<Vec<f64>> = x.columns().into_iter().map(|c| bin_edges(c, cfg.n_bins)).collect();
        let binned: Vec<Vec<u8>> = x.columns().into_iter().zip(&edges).map(|(c, e)| bin_column(c, e)).collect();
        let ensembles: Vec<QuantileEnsemble> = quantiles
            .par_iter()
            .enumerate()
            .map(|(k, &tau)| fit_one(cfg, x, y, &binned, &edges, tau, mix_seed(seed, k as u64)))
            .collect();
        let rounds = cfg.n_estimators;
        let train_loss =
            (0..rounds).map(|r| ensembles.iter().map(|e| e.train_loss[r]).sum::<f64>() / ensembles.len() as f64).collect();
        let model = Self { config: cfg.clone(), quantiles: quantiles.to_vec(), ensembles };
        let report = TrainReport {
            train_loss,
            val_aql: vec![val_aql(val.1, &model.predict(val.0), quantiles)],
            early_stop_epoch: None,
            wall_time_secs: 0.0,
        };
        Ok((model, report))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.ensembles.len()));
        for (i, row) in x.rows().into_iter().enumerate() {
            for (j, e) in self.ensembles.iter().enumerate() {
                out[[i, j]] = e.predict_row(row);
            }
        }
        out
    }

    fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }
}
