use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_quantiles, val_aql, ModelError, QuantileRegressor, TrainReport};
use crate::numeric::percentile_sorted;

/// Offset keeping inverse-distance weights finite for exact matches.
pub const DISTANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QknnConfig {
    pub n_neighbors: usize,
    pub metric: Metric,
    pub weights: Weighting,
}

impl Default for QknnConfig {
    fn default() -> Self {
        Self { n_neighbors: 20, metric: Metric::Euclidean, weights: Weighting::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QknnModel {
    pub config: QknnConfig,
    pub quantiles: Vec<f64>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl QknnModel {
    /// Indices of the `k` nearest training rows, ordered by (distance, index).
    pub fn neighbors(&self, q: ArrayView1<f64>) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> =
            self.x.rows().into_iter().enumerate().map(|(i, r)| (self.config.metric.distance(q, r), i)).collect();
        let k = self.config.n_neighbors;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    }

    fn predict_row(&self, q: ArrayView1<f64>) -> Vec<f64> {
        let nb = self.neighbors(q);
        match self.config.weights {
            Weighting::Uniform => {
                let mut t: Vec<f64> = nb.iter().map(|(_, i)| self.y[*i]).collect();
                t.sort_by(f64::total_cmp);
                self.quantiles.iter().map(|tau| percentile_sorted(&t, *tau)).collect()
            }
            Weighting::Distance => {
                let mut wy: Vec<(f64, f64, usize)> =
                    nb.iter().map(|(d, i)| (self.y[*i], 1.0 / (d + DISTANCE_EPSILON), *i)).collect();
                wy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
                let total: f64 = wy.iter().map(|v| v.1).sum();
                self.quantiles
                    .iter()
                    .map(|tau| {
                        let mut cum = 0.0;
                        for (y, w, _) in &wy {
                            cum += w;
                            if cum / total >= *tau {
                                return *y;
                            }
                        }
                        wy.last().map(|v| v.0).unwrap_or(f64::NAN)
                    })
                    .collect()
            }
        }
    }
}

impl QuantileRegressor for QknnModel {
    type Config = QknnConfig;

    fn fit(
        cfg: &QknnConfig,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        _seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        check_quantiles(quantiles)?;
        if cfg.n_neighbors == 0 {
            return Err(ModelError::Config("n_neighbors must be at least 1".into()));
        }
        if cfg.n_neighbors > train.0.nrows() {
            return Err(ModelError::Config(format!(
                "n_neighbors = {} exceeds the {} training rows",
                cfg.n_neighbors,
                train.0.nrows()
            )));
        }
        let model = Self { config: cfg.clone(), quantiles: quantiles.to_vec(), x: train.0.to_owned(), y: train.1.to_owned() };
        let report = TrainReport {
            train_loss: vec![],
            val_aql: vec![val_aql(val.1, &model.predict(val.0), quantiles)],
            early_stop_epoch: None,
            wall_time_secs: 0.0,
        };
        Ok((model, report))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = (0..x.nrows()).into_par_iter().map(|i| self.predict_row(x.row(i))).collect();
        let mut out = Array2::zeros((x.nrows(), self.quantiles.len()));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from(r));
        }
        out
    }

    fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fit(k: usize, weights: Weighting, x: &Array2<f64>, y: &Array1<f64>, q: &[f64]) -> QknnModel {
        let cfg = QknnConfig { n_neighbors: k, metric: Metric::Euclidean, weights };
        QknnModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), q, 0).unwrap().0
    }

    #[test]
    fn uniform_median_of_neighbors() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        let y = array![1.0, 2.0, 9.0, 100.0];
        let m = fit(3, Weighting::Uniform, &x, &y, &[0.5]);
        assert_eq!(m.predict(array![[1.0]].view())[[0, 0]], 2.0);
    }

    #[test]
    fn exact_match_dominates_distance_weighting() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![5.0, 7.0, 9.0];
        let m = fit(3, Weighting::Distance, &x, &y, &[0.1, 0.5, 0.9]);
        assert_eq!(m.predict(array![[1.0]].view()).row(0).to_vec(), vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn k_equals_n_is_global_median() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let y = array![3.0, 1.0, 4.0, 1.0, 5.0];
        let m = fit(5, Weighting::Uniform, &x, &y, &[0.5]);
        for q in [-100.0, 2.5, 100.0] {
            assert_eq!(m.predict(array![[q]].view())[[0, 0]], 3.0);
        }
    }

    #[test]
    fn too_many_neighbors_is_an_error() {
        let x = array![[0.0], [1.0]];
        let y = array![0.0, 1.0];
        let cfg = QknnConfig { n_neighbors: 3, ..Default::default() };
        assert!(QknnModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.5], 0).is_err());
    }

    #[test]
    fn manhattan_distance() {
        assert_eq!(Metric::Manhattan.distance(array![0.0, 0.0].view(), array![3.0, -4.0].view()), 7.0);
        assert_eq!(Metric::Euclidean.distance(array![0.0, 0.0].view(), array![3.0, -4.0].view()), 5.0);
    }
}
