//! L1-penalised linear quantile regression.
//!
//! Minimises `(1/N) sum pinball_tau(y - X beta - b) + alpha ||beta||_1` with an
//! unpenalised intercept `b`. The pinball kink is replaced by a quadratic of
//! half-width `kappa` and the smoothed problem is solved by monotone FISTA with
//! backtracking and soft-thresholding. `kappa` is reduced tenfold per stage,
//! ending at the configured value. The target is rescaled to unit spread before
//! solving; the pinball loss is positively homogeneous, so the rescaled problem
//! has the same minimiser up to that scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::SelectorError;
use crate::numeric::{pinball_minimizer, pinball_residual, population_std, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Final smoothing half-width, in units of the target's standard deviation.
    pub kappa: f64,
    /// Continuation stages; stage `k` uses `kappa * 10^(stages - 1 - k)`.
    pub stages: usize,
    pub max_iter: usize,
    /// Stop a stage when an accepted step improves the objective by less than this (relative).
    pub rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kappa: 1e-4, stages: 3, max_iter: 10_000, rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1QuantileFit {
    pub tau: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Exact (unsmoothed) objective at the returned coefficients.
    pub objective: f64,
    /// Smoothed objective after each accepted step, across all stages.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl L1QuantileFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let beta = ArrayView1::from(self.beta.as_slice());
        x.dot(&beta) + self.intercept
    }
}

/// Exact objective: mean pinball loss plus `alpha * ||beta||_1`.
pub fn l1_quantile_objective(x: ArrayView2<f64>, y: ArrayView1<f64>, beta: &[f64], intercept: f64, tau: f64, alpha: f64) -> f64 {
    let pred = x.dot(&ArrayView1::from(beta));
    let loss: CompensatedSum = y.iter().zip(pred.iter()).map(|(yi, p)| pinball_residual(yi - p - intercept, tau)).collect();
    loss.value() / y.len() as f64 + alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
}

#[inline]
fn smooth_value(r: f64, tau: f64, kappa: f64) -> f64 {
    if r.abs() >= kappa {
        pinball_residual(r, tau)
    } else {
        (tau - 0.5) * r + r * r / (4.0 * kappa) + kappa / 4.0
    }
}

#[inline]
fn smooth_slope(r: f64, tau: f64, kappa: f64) -> f64 {
    if r >= kappa {
        tau
    } else if r <= -kappa {
        tau - 1.0
    } else {
        (tau - 0.5) + r / (2.0 * kappa)
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    /// Contiguous transpose; one row per feature.
    xt: Array2<f64>,
    y: Array1<f64>,
    tau: f64,
    alpha: f64,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// `X v`, skipping zero coefficients when `v` is sparse.
    fn x_dot(&self, v: &Array1<f64>) -> Array1<f64> {
        let nnz = v.iter().filter(|c| **c != 0.0).count();
        if nnz * 2 > v.len() {
            return self.x.dot(v);
        }
        let mut out = Array1::zeros(self.x.nrows());
        for (j, &c) in v.iter().enumerate() {
            if c != 0.0 {
                out.scaled_add(c, &self.xt.row(j));
            }
        }
        out
    }

    /// `X^T s`.
    fn xt_dot(&self, s: &Array1<f64>) -> Array1<f64> {
        self.xt.dot(s)
    }

    fn smooth_loss(&self, xb: &Array1<f64>, b: f64, kappa: f64) -> f64 {
        let s: CompensatedSum = self.y.iter().zip(xb.iter()).map(|(yi, p)| smooth_value(yi - p - b, self.tau, kappa)).collect();
        s.value() / self.n()
    }

    /// Largest squared singular value of `[X, 1] / sqrt(N)`, by power iteration.
    fn curvature_bound(&self) -> f64 {
        let d = self.x.ncols();
        let mut v = Array1::from_elem(d, 1.0);
        let mut vb = 1.0f64;
        let mut sigma2 = 1.0;
        for _ in 0..50 {
            let norm = (v.dot(&v) + vb * vb).sqrt();
            if norm == 0.0 {
                break;
            }
            v /= norm;
            vb /= norm;
            let av = self.x.dot(&v) + vb;
            let atav = self.xt_dot(&av) / self.n();
            let atav_b = av.sum() / self.n();
            sigma2 = (atav.dot(&atav) + atav_b * atav_b).sqrt();
            v = atav;
            vb = atav_b;
        }
        sigma2.max(1e-12)
    }
}

struct StageResult {
    converged: bool,
    iterations: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    p: &Problem<'_>,
    kappa: f64,
    cfg: &SolverConfig,
    beta: &mut Array1<f64>,
    b: &mut f64,
    step: &mut f64,
    trace: &mut Vec<f64>,
) -> StageResult {
    let l1 = |v: &Array1<f64>| v.iter().map(|c| c.abs()).sum::<f64>();
    let mut xb_x = p.x_dot(beta);
    let mut fx = p.smooth_loss(&xb_x, *b, kappa) + p.alpha * l1(beta);
    trace.push(fx);

    let mut beta_y = beta.clone();
    let mut b_y = *b;
    let mut xb_y = xb_x.clone();
    let mut t = 1.0f64;
    let n = p.n();

    for it in 0..cfg.max_iter {
        let slopes: Array1<f64> =
            p.y.iter().zip(xb_y.iter()).map(|(yi, q)| smooth_slope(yi - q - b_y, p.tau, kappa)).collect();
        let f_y = p.smooth_loss(&xb_y, b_y, kappa);
        let grad_beta = p.xt_dot(&slopes) / (-n);
        let grad_b = -slopes.sum() / n;

        let (z_beta, z_b, xb_z, f_z) = loop {
            let z_beta: Array1<f64> = beta_y
                .iter()
                .zip(grad_beta.iter())
                .map(|(v, g)| soft_threshold(v - *step * g, *step * p.alpha))
                .collect();
            let z_b = b_y - *step * grad_b;
            let xb_z = p.x_dot(&z_beta);
            let f_z = p.smooth_loss(&xb_z, z_b, kappa);
            let d_beta = &z_beta - &beta_y;
            let d_b = z_b - b_y;
            let model = f_y + grad_beta.dot(&d_beta) + grad_b * d_b + (d_beta.dot(&d_beta) + d_b * d_b) / (2.0 * *step);
            if f_z <= model + 1e-14 * f_y.abs().max(1.0) || *step < 1e-300 {
                break (z_beta, z_b, xb_z, f_z);
            }
            *step *= 0.5;
        };

        let obj_z = f_z + p.alpha * l1(&z_beta);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if obj_z <= fx {
            let rel = (fx - obj_z) / fx.abs().max(1e-300);
            let momentum = (t - 1.0) / t_next;
            beta_y = &z_beta + &((&z_beta - &*beta) * momentum);
            b_y = z_b + momentum * (z_b - *b);
            xb_y = &xb_z + &((&xb_z - &xb_x) * momentum);
            *beta = z_beta;
            *b = z_b;
            xb_x = xb_z;
            fx = obj_z;
            trace.push(fx);
            t = t_next;
            *step *= 1.1;
            if rel < cfg.rel_tol {
                return StageResult { converged: true, iterations: it + 1 };
            }
        } else {
            // Momentum overshot: restart from the current iterate.
            beta_y = beta.clone();
            b_y = *b;
            xb_y = xb_x.clone();
            t = 1.0;
        }
    }
    StageResult { converged: false, iterations: cfg.max_iter }
}

/// Solves the L1-penalised quantile regression from a zero start.
pub fn fit_l1_lqr(x: ArrayView2<f64>, y: ArrayView1<f64>, tau: f64, alpha: f64, cfg: &SolverConfig) -> Result<L1QuantileFit, SelectorError> {
    fit_l1_lqr_warm(x, y, tau, alpha, cfg, None)
}

/// As [`fit_l1_lqr`], starting from `warm` coefficients when given.
pub fn fit_l1_lqr_warm(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    tau: f64,
    alpha: f64,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<L1QuantileFit, SelectorError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SelectorError::InvalidTau(tau));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(SelectorError::InvalidAlpha(alpha));
    }
    if x.nrows() != y.len() {
        return Err(SelectorError::Shape { rows: x.nrows(), targets: y.len() });
    }
    if y.is_empty() {
        return Err(SelectorError::Empty);
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(SelectorError::NonFinite);
    }
    if let Some(w) = warm {
        if w.len() != x.ncols() {
            return Err(SelectorError::Shape { rows: w.len(), targets: x.ncols() });
        }
    }

    let ys = y.to_vec();
    let mut scale = population_std(&ys);
    if !(scale > 1e-12) {
        scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    }
    let problem = Problem { x, xt: x.t().as_standard_layout().into_owned(), y: y.mapv(|v| v / scale), tau, alpha };

    let mut beta = match warm {
        Some(w) => Array1::from_iter(w.iter().map(|v| v / scale)),
        None => Array1::zeros(x.ncols()),
    };
    let mut b = exact_intercept(&problem, &beta);
    let mut trace = Vec::new();
    let mut converged = true;
    let mut iterations = 0;
    let stages = cfg.stages.max(1);
    let curvature = problem.curvature_bound();

    for k in 0..stages {
        let kappa = cfg.kappa * 10f64.powi((stages - 1 - k) as i32);
        let mut step = 2.0 * kappa / curvature;
        let out = run_stage(&problem, kappa, cfg, &mut beta, &mut b, &mut step, &mut trace);
        converged &= out.converged;
        iterations += out.iterations;
    }
    let mut beta: Vec<f64> = beta.iter().map(|v| v * scale).collect();
    // Polished in original units so the intercept is an actual residual order statistic.
    let xb = x.dot(&ArrayView1::from(beta.as_slice()));
    let mut resid: Vec<f64> = y.iter().zip(xb.iter()).map(|(yi, q)| yi - q).collect();
    let mut intercept = pinball_minimizer(&mut resid, tau);
    let mut objective = l1_quantile_objective(x, y, &beta, intercept, tau, alpha);
    // The smoothed optimum can sit a hair above the exact intercept-only optimum.
    let mut ys = ys;
    let b0 = pinball_minimizer(&mut ys, tau);
    let zero = vec![0.0; beta.len()];
    let obj0 = l1_quantile_objective(x, y, &zero, b0, tau, alpha);
    if obj0 <= objective && beta.iter().any(|v| *v != 0.0) {
        beta = zero;
        intercept = b0;
        objective = obj0;
    }
    Ok(L1QuantileFit {
        tau,
        alpha,
        beta,
        intercept,
        objective,
        objective_trace: trace.into_iter().map(|v| v * scale).collect(),
        converged,
        iterations,
    })
}

/// Optimal intercept for fixed coefficients: the pinball-minimising order statistic of the residuals.
fn exact_intercept(p: &Problem<'_>, beta: &Array1<f64>) -> f64 {
    let xb = p.x_dot(beta);
    let mut r: Vec<f64> = p.y.iter().zip(xb.iter()).map(|(yi, q)| yi - q).collect();
    pinball_minimizer(&mut r, p.tau)
}
