//! Multi-quantile feed-forward network: shared ReLU trunk, one linear head per level.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_quantiles, val_aql, ModelError, QuantileRegressor, TrainReport};
use crate::numeric::{mean, population_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmlpConfig {
    pub hidden_size: usize,
    /// Hidden layers in the trunk.
    pub n_layers: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_max_epochs() -> usize {
    500
}

fn default_patience() -> usize {
    10
}

impl Default for QmlpConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            n_layers: 2,
            dropout_rate: 0.1,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }
}

impl QmlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden_size == 0 || self.n_layers == 0 {
            return bad("hidden_size and n_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `n_in x n_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn uniform_fan_in(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((n_in, n_out), |_| rng.gen_range(-bound..bound)),
            b: Array1::from_shape_fn(n_out, |_| rng.gen_range(-bound..bound)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }
}

/// Hidden layers use ReLU; the last layer is linear with one unit per quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: usize, n_hidden: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(n_hidden + 1);
        let mut fan_in = n_in;
        for _ in 0..n_hidden {
            layers.push(Dense::uniform_fan_in(fan_in, hidden, rng));
            fan_in = hidden;
        }
        layers.push(Dense::uniform_fan_in(fan_in, n_out, rng));
        Self { layers }
    }

    /// Inference pass (dropout disabled).
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.w) + &layer.b;
            if l < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    /// Mean pinball loss over rows and heads, and its gradient.
    ///
    /// `masks[l]` multiplies hidden layer `l`'s activations (inverted dropout).
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView1<f64>, taus: &[f64], masks: Option<&[Array2<f64>]>) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.w) + &layer.b;
            inputs.push(std::mem::replace(&mut a, Array2::zeros((0, 0))));
            if l < last {
                let mut h = z.mapv(|v| v.max(0.0));
                if let Some(m) = masks {
                    h *= &m[l];
                }
                pre.push(z);
                a = h;
            } else {
                a = z;
            }
        }
        let out = a;
        let scale = 1.0 / (out.nrows() * taus.len()) as f64;
        let mut loss = 0.0;
        let mut d = Array2::zeros(out.raw_dim());
        for ((i, q), o) in out.indexed_iter() {
            let r = y[i] - o;
            let tau = taus[q];
            if r >= 0.0 {
                loss += tau * r;
                d[[i, q]] = -tau * scale;
            } else {
                loss += (tau - 1.0) * r;
                d[[i, q]] = (1.0 - tau) * scale;
            }
        }
        loss *= scale;

        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for l in (0..=last).rev() {
            grads[l].w = inputs[l].t().dot(&d);
            grads[l].b = d.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut da = d.dot(&self.layers[l].w.t());
            if let Some(m) = masks {
                da *= &m[l - 1];
            }
            ndarray::Zip::from(&mut da).and(&pre[l - 1]).for_each(|g, z| {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            });
            d = da;
        }
        (loss, grads)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("parameter vector too short");
            }
        }
    }

    pub fn flatten(grads: &[Dense]) -> Vec<f64> {
        grads.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp, lr: f64) -> Self {
        let z: Vec<Dense> = net.layers.iter().map(Dense::zeros_like).collect();
        Self { m: z.clone(), v: z, t: 0, lr }
    }

    fn step(&mut self, net: &mut Mlp, grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, g, m, v| update(p, *g, m, v));
            ndarray::Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, g, m, v| update(p, *g, m, v));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmlpModel {
    pub config: QmlpConfig,
    pub quantiles: Vec<f64>,
    pub net: Mlp,
    /// Targets are modelled as `(y - y_mean) / y_scale`.
    pub y_mean: f64,
    pub y_scale: f64,
}

impl QuantileRegressor for QmlpModel {
    type Config = QmlpConfig;

    fn fit(
        cfg: &QmlpConfig,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        check_quantiles(quantiles)?;
        cfg.validate()?;
        let (x, y) = train;
        let n = y.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        let ys = y.to_vec();
        let y_mean = mean(&ys);
        let sd = population_std(&ys);
        let y_scale = if sd > 1e-12 { sd } else { 1.0 };
        let yt = y.mapv(|v| (v - y_mean) / y_scale);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(x.ncols(), cfg.hidden_size, cfg.n_layers, quantiles.len(), &mut rng);
        let mut model = Self { config: cfg.clone(), quantiles: quantiles.to_vec(), net, y_mean, y_scale };
        let mut adam = Adam::new(&model.net, cfg.learning_rate);
        let keep = 1.0 - cfg.dropout_rate;
        let batch = cfg.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();

        let mut train_loss = Vec::new();
        let mut val_trace = Vec::new();
        let mut best = (f64::INFINITY, 0usize, model.net.clone());
        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let xb = x.select(Axis(0), chunk);
                let yb = yt.select(Axis(0), chunk);
                let masks: Option<Vec<Array2<f64>>> = (cfg.dropout_rate > 0.0).then(|| {
                    model.net.layers[..cfg.n_layers]
                        .iter()
                        .map(|l| {
                            Array2::from_shape_fn((chunk.len(), l.b.len()), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        })
                        .collect()
                });
                let (loss, grads) = model.net.loss_and_grad(xb.view(), yb.view(), quantiles, masks.as_deref());
                if !loss.is_finite() || grads.iter().any(|g| g.w.iter().chain(g.b.iter()).any(|v| !v.is_finite())) {
                    return Err(ModelError::NonFinite {
                        epoch,
                        detail: format!("batch loss {loss} with learning_rate {}", cfg.learning_rate),
                    });
                }
                adam.step(&mut model.net, &grads);
                epoch_loss += loss * chunk.len() as f64;
            }
            train_loss.push(epoch_loss / n as f64 * y_scale);
            let monitored = if val.1.is_empty() {
                *train_loss.last().expect("pushed")
            } else {
                val_aql(val.1, &model.predict(val.0), quantiles)
            };
            if !monitored.is_finite() {
                return Err(ModelError::NonFinite { epoch, detail: "validation loss is not finite".into() });
            }
            val_trace.push(monitored);
            if monitored < best.0 {
                best = (monitored, epoch, model.net.clone());
            } else if epoch - best.1 >= cfg.patience {
                break;
            }
        }
        model.net = best.2;
        let report = TrainReport { train_loss, val_aql: val_trace, early_stop_epoch: Some(best.1), wall_time_secs: 0.0 };
        Ok((model, report))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(x).mapv(|v| v * self.y_scale + self.y_mean)
    }

    fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, n: usize, d: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_iter(x.rows().into_iter().map(|r| 2.0 * r[0] - r[1] + rng.gen_range(-0.3..0.3)));
        (x, y)
    }

    #[test]
    fn output_has_one_column_per_quantile() {
        let (x, y) = toy(1, 50, 3);
        let cfg = QmlpConfig { max_epochs: 3, hidden_size: 8, ..Default::default() };
        let (m, r) = QmlpModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.1, 0.5, 0.9], 0).unwrap();
        assert_eq!(m.predict(x.view()).dim(), (50, 3));
        assert!(r.early_stop_epoch.unwrap() < 3);
        assert!(!r.train_loss.is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = toy(2, 10, 4);
        let taus = [0.1, 0.5, 0.9];
        let mut net = Mlp::new(4, 6, 2, 3, &mut rng);
        let (_, g) = net.loss_and_grad(x.view(), y.view(), &taus, None);
        let analytic = Mlp::flatten(&g);
        let p0 = net.params();
        // The loss is piecewise linear, so a wide step stays exact away from kinks.
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            net.set_params(&p);
            let up = net.loss_and_grad(x.view(), y.view(), &taus, None).0;
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let down = net.loss_and_grad(x.view(), y.view(), &taus, None).0;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[k]).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: analytic {} numeric {numeric}", analytic[k]);
        }
    }

    #[test]
    fn constant_target_converges() {
        let (x, _) = toy(4, 64, 2);
        let y = Array1::from_elem(64, 42.0);
        let cfg = QmlpConfig { dropout_rate: 0.0, hidden_size: 16, batch_size: 64, learning_rate: 1e-2, ..Default::default() };
        let (m, _) = QmlpModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.1, 0.5, 0.9], 7).unwrap();
        assert!(m.predict(x.view()).iter().all(|p| (p - 42.0).abs() < 1e-2));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (x, y) = toy(5, 80, 3);
        let cfg = QmlpConfig { max_epochs: 5, hidden_size: 8, ..Default::default() };
        let a = QmlpModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.5], 11).unwrap().0;
        let b = QmlpModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.5], 11).unwrap().0;
        assert_eq!(a.predict(x.view()), b.predict(x.view()));
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let (x, y) = toy(6, 20, 2);
        let y = y.mapv(|v| v * 1e300);
        let cfg = QmlpConfig { learning_rate: 1e308, max_epochs: 5, ..Default::default() };
        assert!(matches!(
            QmlpModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.5], 0),
            Err(ModelError::NonFinite { .. })
        ));
    }
}
