//! Sparse feature selection with L1-penalised quantile regression.

mod solver;
mod standardize;

use std::collections::BTreeSet;
use std::io::Write;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use solver::{fit_l1_lqr, fit_l1_lqr_warm, l1_quantile_objective, L1QuantileFit, SolverConfig};
pub use standardize::{standardize, Standardizer};

use crate::dataset::TrainVal;
use crate::features::{FeatureKey, Family, Window};
use crate::market_data::Side;
use crate::numeric::{pinball_residual, CompensatedSum};

pub const ZERO_THRESHOLD: f64 = 1e-6;
pub const ALPHA_MIN: f64 = 1e-8;
pub const ALPHA_MAX: f64 = 1.0;
pub const DEFAULT_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Error, PartialEq)]
pub enum SelectorError {
    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("alpha must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("alpha grid value {0} lies outside [1e-8, 1]")]
    GridOutOfRange(f64),
    #[error("shape mismatch: {rows} rows against {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("no rows to fit")]
    Empty,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("fits disagree on the feature universe")]
    UniverseMismatch,
    #[error("importance is zero everywhere; nothing to normalise")]
    ZeroImportance,
    #[error("`{0}` is not a canonical feature name")]
    UnknownFeature(String),
    #[error("quantile {0} is not part of the selection")]
    UnknownTau(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown feature set `{0}`; expected topN, full, naive1 or naive2")]
    UnknownFeatureSet(String),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(ALPHA_MIN, ALPHA_MAX, 50)
}

/// Mean pinball loss of a fit on held-out data.
pub fn validation_loss(fit: &L1QuantileFit, x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let pred = fit.predict(x);
    let s: CompensatedSum = y.iter().zip(pred.iter()).map(|(a, p)| pinball_residual(a - p, fit.tau)).collect();
    s.value() / y.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuning {
    pub tau: f64,
    pub best_alpha: f64,
    pub best: L1QuantileFit,
    /// `(alpha, validation loss)` in grid order as evaluated (descending alpha).
    pub val_losses: Vec<(f64, f64)>,
    pub fits: Vec<L1QuantileFit>,
}

/// Fits every grid value, warm-starting from larger to smaller alpha, and keeps
/// the one with the lowest validation loss. Ties go to the larger alpha.
pub fn tune_alpha(
    train: (ArrayView2<f64>, ArrayView1<f64>),
    val: (ArrayView2<f64>, ArrayView1<f64>),
    tau: f64,
    alpha_grid: &[f64],
    solver: &SolverConfig,
) -> Result<AlphaTuning, SelectorError> {
    tune_alpha_path(train, val, tau, alpha_grid, solver, None)
}

/// As [`tune_alpha`], but with `patience = Some(p)` the descending path stops once
/// `p` consecutive alphas fail to improve the best validation loss. The small
/// penalties at the end of the path are the slowest to fit and rarely win.
pub fn tune_alpha_path(
    train: (ArrayView2<f64>, ArrayView1<f64>),
    val: (ArrayView2<f64>, ArrayView1<f64>),
    tau: f64,
    alpha_grid: &[f64],
    solver: &SolverConfig,
    patience: Option<usize>,
) -> Result<AlphaTuning, SelectorError> {
    if alpha_grid.is_empty() {
        return Err(SelectorError::EmptyGrid);
    }
    if let Some(a) = alpha_grid.iter().find(|a| !(**a >= ALPHA_MIN * (1.0 - 1e-12) && **a <= ALPHA_MAX)) {
        return Err(SelectorError::GridOutOfRange(*a));
    }
    if val.0.nrows() == 0 {
        return Err(SelectorError::Empty);
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let mut fits = Vec::with_capacity(grid.len());
    let mut val_losses = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut warm: Option<Vec<f64>> = None;
    for (i, &alpha) in grid.iter().enumerate() {
        let fit = fit_l1_lqr_warm(train.0, train.1, tau, alpha, solver, warm.as_deref())?;
        let loss = validation_loss(&fit, val.0, val.1);
        if best.map_or(true, |(_, l)| loss < l) {
            best = Some((i, loss));
        }
        warm = Some(fit.beta.clone());
        val_losses.push((alpha, loss));
        fits.push(fit);
        if let (Some(p), Some((bi, _))) = (patience, best) {
            if i - bi >= p.max(1) {
                break;
            }
        }
    }
    let (bi, _) = best.expect("grid is nonempty");
    Ok(AlphaTuning { tau, best_alpha: grid[bi], best: fits[bi].clone(), val_losses, fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCoefficient {
    pub name: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSelection {
    pub tau: f64,
    pub alpha: f64,
    /// Retained features in canonical order.
    pub selected: Vec<NamedCoefficient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub per_tau: Vec<QuantileSelection>,
    /// Union of the per-tau sets, in universe order.
    pub union: Vec<String>,
    /// Sum over quantiles of absolute standardized coefficients, for features in the union.
    pub importance: Vec<NamedCoefficient>,
    pub zero_threshold: f64,
}

impl SelectionResult {
    pub fn quantile(&self, tau: f64) -> Option<&QuantileSelection> {
        self.per_tau.iter().find(|q| (q.tau - tau).abs() < 1e-12)
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }
}

/// Keeps coefficients whose magnitude exceeds `zero_threshold`; `names` is the shared universe.
pub fn select_features(fits: &[L1QuantileFit], names: &[String], zero_threshold: f64) -> Result<SelectionResult, SelectorError> {
    if fits.iter().any(|f| f.beta.len() != names.len()) {
        return Err(SelectorError::UniverseMismatch);
    }
    let mut importance = vec![0.0; names.len()];
    let mut in_union = vec![false; names.len()];
    let per_tau = fits
        .iter()
        .map(|f| {
            let selected = f
                .beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() > zero_threshold)
                .map(|(j, b)| {
                    importance[j] += b.abs();
                    in_union[j] = true;
                    NamedCoefficient { name: names[j].clone(), coefficient: *b }
                })
                .collect();
            QuantileSelection { tau: f.tau, alpha: f.alpha, selected }
        })
        .collect();
    let union = names.iter().zip(&in_union).filter(|(_, u)| **u).map(|(n, _)| n.clone()).collect();
    let importance = names
        .iter()
        .zip(&importance)
        .zip(&in_union)
        .filter(|(_, u)| **u)
        .map(|((n, v), _)| NamedCoefficient { name: n.clone(), coefficient: *v })
        .collect();
    Ok(SelectionResult { per_tau, union, importance, zero_threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceBreakdown {
    pub by_family: Vec<GroupShare>,
    pub by_window: Vec<GroupShare>,
    pub by_side: Vec<GroupShare>,
}

/// Normalised importance totals per family, window and side, in canonical group order.
pub fn importance_breakdown(result: &SelectionResult) -> Result<ImportanceBreakdown, SelectorError> {
    let mut fam = [0.0; 20];
    let mut win = [0.0; 6];
    let mut side = [0.0; 2];
    let mut total = CompensatedSum::new();
    for item in &result.importance {
        let key = FeatureKey::from_str(&item.name).map_err(|_| SelectorError::UnknownFeature(item.name.clone()))?;
        let v = item.coefficient.abs();
        fam[Family::ALL.iter().position(|f| *f == key.family).expect("family")] += v;
        win[Window::ALL.iter().position(|w| *w == key.window).expect("window")] += v;
        side[Side::BOTH.iter().position(|s| *s == key.side).expect("side")] += v;
        total.add(v);
    }
    let total = total.value();
    if !(total > 0.0) {
        return Err(SelectorError::ZeroImportance);
    }
    let shares = |labels: Vec<&str>, sums: &[f64]| {
        labels.into_iter().zip(sums).map(|(g, s)| GroupShare { group: g.to_string(), share: s / total }).collect()
    };
    Ok(ImportanceBreakdown {
        by_family: shares(Family::ALL.iter().map(|f| f.label()).collect(), &fam),
        by_window: shares(Window::ALL.iter().map(|w| w.label()).collect(), &win),
        by_side: shares(Side::BOTH.iter().map(|s| s.label()).collect(), &side),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub tau: f64,
    pub features: Vec<NamedCoefficient>,
    /// Fewer than `k` features were selected.
    pub short_list: bool,
}

/// The `k` selected features at `tau` with the largest magnitude; ties keep canonical order.
pub fn top_k(result: &SelectionResult, tau: f64, k: usize) -> Result<TopK, SelectorError> {
    if k == 0 {
        return Err(SelectorError::InvalidK);
    }
    let q = result.quantile(tau).ok_or(SelectorError::UnknownTau(tau))?;
    let mut ranked = q.selected.clone();
    // Stable sort: equal magnitudes stay in canonical order.
    ranked.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()));
    let short_list = ranked.len() < k;
    ranked.truncate(k);
    Ok(TopK { tau, features: ranked, short_list })
}

/// Named feature subsets used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSet {
    /// Union over quantiles of each quantile's top `k`.
    Top(usize),
    /// Union of every selected feature.
    Full,
    /// 15-minute VWAP on both sides.
    Naive1,
    /// Last traded price on both sides.
    Naive2,
}

impl FeatureSet {
    pub fn names(&self, selection: Option<&SelectionResult>) -> Result<Vec<String>, SelectorError> {
        let fixed = |family: Family, window: Window| {
            Side::BOTH.iter().map(|s| FeatureKey { family, side: *s, window, percentile: None }.name()).collect()
        };
        match self {
            FeatureSet::Naive1 => Ok(fixed(Family::Vwap, Window::Min15)),
            FeatureSet::Naive2 => Ok(fixed(Family::LastPrice, Window::Full)),
            FeatureSet::Full => Ok(selection.map(|s| s.union.clone()).unwrap_or_default()),
            FeatureSet::Top(k) => {
                let Some(sel) = selection else { return Ok(Vec::new()) };
                let mut chosen = BTreeSet::new();
                for q in &sel.per_tau {
                    for f in top_k(sel, q.tau, *k)?.features {
                        chosen.insert(f.name);
                    }
                }
                Ok(sel.union.iter().filter(|n| chosen.contains(*n)).cloned().collect())
            }
        }
    }

    pub fn needs_selection(&self) -> bool {
        matches!(self, FeatureSet::Top(_) | FeatureSet::Full)
    }
}

impl FromStr for FeatureSet {
    type Err = SelectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(FeatureSet::Full),
            "naive1" => Ok(FeatureSet::Naive1),
            "naive2" => Ok(FeatureSet::Naive2),
            _ => s
                .strip_prefix("top")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|k| *k >= 1)
                .map(FeatureSet::Top)
                .ok_or_else(|| SelectorError::UnknownFeatureSet(s.to_string())),
        }
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureSet::Top(k) => write!(f, "top{k}"),
            FeatureSet::Full => f.write_str("full"),
            FeatureSet::Naive1 => f.write_str("naive1"),
            FeatureSet::Naive2 => f.write_str("naive2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub quantiles: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Skips tuning and fits this penalty at every quantile.
    pub fixed_alpha: Option<f64>,
    pub zero_threshold: f64,
    pub solver: SolverConfig,
    /// Early stop of the alpha path; `None` walks the whole grid.
    #[serde(default)]
    pub path_patience: Option<usize>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            quantiles: DEFAULT_QUANTILES.to_vec(),
            alpha_grid: default_alpha_grid(),
            fixed_alpha: None,
            zero_threshold: ZERO_THRESHOLD,
            solver: SolverConfig::default(),
            path_patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauDiagnostics {
    pub tau: f64,
    pub alpha: f64,
    pub val_loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub val_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub result: SelectionResult,
    /// Absent when nothing was selected.
    pub breakdown: Option<ImportanceBreakdown>,
    pub diagnostics: Vec<TauDiagnostics>,
    pub standardizer: Standardizer,
    pub names: Vec<String>,
}

/// Standardizes on train, tunes alpha per quantile on validation, and selects.
pub fn run_selection(data: TrainVal<'_>, cfg: &SelectorConfig) -> Result<SelectionReport, SelectorError> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(SelectorError::Empty);
    }
    if data.train.names != data.val.names {
        return Err(SelectorError::UniverseMismatch);
    }
    let (xt, others, st) = standardize(data.train.x.view(), &[data.val.x.view()]);
    let xv = &others[0];
    let tuned: Vec<(L1QuantileFit, TauDiagnostics)> = cfg
        .quantiles
        .par_iter()
        .map(|&tau| -> Result<_, SelectorError> {
            if let Some(alpha) = cfg.fixed_alpha {
                let fit = fit_l1_lqr(xt.view(), data.train.y.view(), tau, alpha, &cfg.solver)?;
                let loss = validation_loss(&fit, xv.view(), data.val.y.view());
                let diag = TauDiagnostics {
                    tau,
                    alpha,
                    val_loss: loss,
                    converged: fit.converged,
                    iterations: fit.iterations,
                    val_curve: vec![(alpha, loss)],
                };
                return Ok((fit, diag));
            }
            let t = tune_alpha_path(
                (xt.view(), data.train.y.view()),
                (xv.view(), data.val.y.view()),
                tau,
                &cfg.alpha_grid,
                &cfg.solver,
                cfg.path_patience,
            )?;
            let val_loss = t.val_losses.iter().find(|(a, _)| *a == t.best_alpha).map(|p| p.1).unwrap_or(f64::NAN);
            let diag = TauDiagnostics {
                tau,
                alpha: t.best_alpha,
                val_loss,
                converged: t.best.converged,
                iterations: t.best.iterations,
                val_curve: t.val_losses,
            };
            Ok((t.best, diag))
        })
        .collect::<Result<_, _>>()?;
    let (fits, diagnostics): (Vec<_>, Vec<_>) = tuned.into_iter().unzip();
    let result = select_features(&fits, &data.train.names, cfg.zero_threshold)?;
    let breakdown = importance_breakdown(&result).ok();
    Ok(SelectionReport { result, breakdown, diagnostics, standardizer: st, names: data.train.names.clone() })
}

/// CSV of the top `k` features per quantile: `tau,rank,feature,coefficient`.
pub fn write_top_k_csv<W: Write>(sink: W, result: &SelectionResult, k: usize) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["tau", "rank", "feature", "coefficient"])?;
    for q in &result.per_tau {
        for (rank, f) in top_k(result, q.tau, k)?.features.iter().enumerate() {
            w.write_record([q.tau.to_string(), (rank + 1).to_string(), f.name.clone(), f.coefficient.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
