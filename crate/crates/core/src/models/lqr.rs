use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{check_quantiles, val_aql, ModelError, QuantileRegressor, TrainReport};
use crate::selector::{fit_l1_lqr, L1QuantileFit, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrConfig {
    pub l1_weight: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self { l1_weight: 1e-4, solver: SolverConfig::default() }
    }
}

/// One linear quantile model per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrModel {
    pub quantiles: Vec<f64>,
    pub fits: Vec<L1QuantileFit>,
}

impl QuantileRegressor for LqrModel {
    type Config = LqrConfig;

    fn fit(
        cfg: &LqrConfig,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        _seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        check_quantiles(quantiles)?;
        if !(cfg.l1_weight >= 0.0 && cfg.l1_weight.is_finite()) {
            return Err(ModelError::Config(format!("l1_weight must be non-negative, got {}", cfg.l1_weight)));
        }
        let fits = quantiles
            .iter()
            .map(|&tau| fit_l1_lqr(train.0, train.1, tau, cfg.l1_weight, &cfg.solver))
            .collect::<Result<Vec<_>, _>>()?;
        let model = Self { quantiles: quantiles.to_vec(), fits };
        let report = TrainReport {
            train_loss: vec![val_aql(train.1, &model.predict(train.0), quantiles)],
            val_aql: vec![val_aql(val.1, &model.predict(val.0), quantiles)],
            early_stop_epoch: None,
            wall_time_secs: 0.0,
        };
        Ok((model, report))
    }

    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.fits.len()));
        for (j, f) in self.fits.iter().enumerate() {
            out.column_mut(j).assign(&f.predict(x));
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
    use ndarray::{Array1, Array2};

    #[test]
    fn exact_linear_target() {
        let x = Array2::from_shape_fn((30, 1), |(i, _)| (i as f64 - 15.0) / 5.0);
        let y = x.column(0).mapv(|v| 3.0 * v);
        let cfg = LqrConfig { l1_weight: 0.0, ..Default::default() };
        let (m, _) = LqrModel::fit(&cfg, (x.view(), y.view()), (x.view(), y.view()), &[0.1, 0.5, 0.9], 0).unwrap();
        let p = m.predict(x.view());
        assert_eq!(p.ncols(), 3);
        for row in 0..30 {
            for j in 0..3 {
                assert!((p[[row, j]] - y[row]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn intercept_only_gives_empirical_quantiles() {
        let x = Array2::<f64>::zeros((10, 0));
        let y = Array1::from_iter((1..=10).map(|v| v as f64));
        let (m, _) = LqrModel::fit(&LqrConfig::default(), (x.view(), y.view()), (x.view(), y.view()), &[0.1, 0.5, 0.9], 0).unwrap();
        let p = m.predict(x.view());
        assert_eq!(p.row(0).to_vec(), vec![1.0, 5.0, 9.0]);
    }
}
