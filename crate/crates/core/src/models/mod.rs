//! Quantile predictors behind one fit/predict contract.

pub mod checkpoint;
pub mod lqr;
pub mod qgbt;
pub mod qknn;
pub mod qmlp;

use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, TrainVal};
use crate::metrics::aql;
use crate::selector::{SelectorError, Standardizer};

pub use lqr::{LqrConfig, LqrModel};
pub use qgbt::{QgbtConfig, QgbtModel};
pub use qknn::{Metric, QknnConfig, QknnModel, Weighting};
pub use qmlp::{Mlp, QmlpConfig, QmlpModel};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("quantile levels must be ascending and inside (0, 1)")]
    Quantiles,
    #[error("training data is empty")]
    Empty,
    #[error("expected {expected} feature columns, got {got}")]
    Columns { expected: usize, got: usize },
    #[error("non-finite training loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Pinball loss of prediction `yhat` for outcome `y` at level `tau`.
pub fn pinball(y: f64, yhat: f64, tau: f64) -> f64 {
    crate::numeric::pinball_residual(y - yhat, tau)
}

pub(crate) fn check_quantiles(q: &[f64]) -> Result<(), ModelError> {
    if q.is_empty() || q.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || q.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::Quantiles);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Lqr,
    Qknn,
    Qgbt,
    Qmlp,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Lqr, ModelFamily::Qknn, ModelFamily::Qgbt, ModelFamily::Qmlp];

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Lqr => "LQR",
            ModelFamily::Qknn => "QKNN",
            ModelFamily::Qgbt => "QGBT",
            ModelFamily::Qmlp => "QMLP",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lqr" => Ok(ModelFamily::Lqr),
            "qknn" => Ok(ModelFamily::Qknn),
            "qgbt" | "qlgbm" | "qxgb" => Ok(ModelFamily::Qgbt),
            "qmlp" => Ok(ModelFamily::Qmlp),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Lqr(LqrConfig),
    Qknn(QknnConfig),
    Qgbt(QgbtConfig),
    Qmlp(QmlpConfig),
}

impl ModelConfig {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelConfig::Lqr(_) => ModelFamily::Lqr,
            ModelConfig::Qknn(_) => ModelFamily::Qknn,
            ModelConfig::Qgbt(_) => ModelFamily::Qgbt,
            ModelConfig::Qmlp(_) => ModelFamily::Qmlp,
        }
    }

    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Lqr => ModelConfig::Lqr(LqrConfig::default()),
            ModelFamily::Qknn => ModelConfig::Qknn(QknnConfig::default()),
            ModelFamily::Qgbt => ModelConfig::Qgbt(QgbtConfig::default()),
            ModelFamily::Qmlp => ModelConfig::Qmlp(QmlpConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training loss per epoch or boosting round (one entry for closed-form fits).
    pub train_loss: Vec<f64>,
    pub val_aql: Vec<f64>,
    /// Epoch whose weights were kept, for iterative families.
    pub early_stop_epoch: Option<usize>,
    pub wall_time_secs: f64,
}

/// Common contract of every family. Inputs are already standardized.
pub trait QuantileRegressor: Sized {
    type Config;

    fn fit(
        cfg: &Self::Config,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        seed: u64,
    ) -> Result<(Self, TrainReport), ModelError>;

    /// `N x |Q|` predictions, columns in ascending tau.
    fn predict(&self, x: ArrayView2<f64>) -> Array2<f64>;

    fn quantiles(&self) -> &[f64];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FittedModel {
    Lqr(LqrModel),
    Qknn(QknnModel),
    Qgbt(QgbtModel),
    Qmlp(QmlpModel),
}

impl FittedModel {
    pub fn fit(
        cfg: &ModelConfig,
        train: (ArrayView2<f64>, ArrayView1<f64>),
        val: (ArrayView2<f64>, ArrayView1<f64>),
        quantiles: &[f64],
        seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        Ok(match cfg {
            ModelConfig::Lqr(c) => {
                let (m, r) = LqrModel::fit(c, train, val, quantiles, seed)?;
                (FittedModel::Lqr(m), r)
            }
            ModelConfig::Qknn(c) => {
                let (m, r) = QknnModel::fit(c, train, val, quantiles, seed)?;
                (FittedModel::Qknn(m), r)
            }
            ModelConfig::Qgbt(c) => {
                let (m, r) = QgbtModel::fit(c, train, val, quantiles, seed)?;
                (FittedModel::Qgbt(m), r)
            }
            ModelConfig::Qmlp(c) => {
                let (m, r) = QmlpModel::fit(c, train, val, quantiles, seed)?;
                (FittedModel::Qmlp(m), r)
            }
        })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            FittedModel::Lqr(m) => m.predict(x),
            FittedModel::Qknn(m) => m.predict(x),
            FittedModel::Qgbt(m) => m.predict(x),
            FittedModel::Qmlp(m) => m.predict(x),
        }
    }

    pub fn quantiles(&self) -> &[f64] {
        match self {
            FittedModel::Lqr(m) => m.quantiles(),
            FittedModel::Qknn(m) => m.quantiles(),
            FittedModel::Qgbt(m) => m.quantiles(),
            FittedModel::Qmlp(m) => m.quantiles(),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            FittedModel::Lqr(_) => ModelFamily::Lqr,
            FittedModel::Qknn(_) => ModelFamily::Qknn,
            FittedModel::Qgbt(_) => ModelFamily::Qgbt,
            FittedModel::Qmlp(_) => ModelFamily::Qmlp,
        }
    }
}

/// A fitted model bundled with its feature list and preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub config: ModelConfig,
    pub seed: u64,
    pub model: FittedModel,
}

impl Pipeline {
    /// Projects onto `features`, standardizes with training statistics and fits.
    pub fn fit(
        cfg: &ModelConfig,
        features: &[String],
        data: TrainVal<'_>,
        quantiles: &[f64],
        seed: u64,
    ) -> Result<(Self, TrainReport), ModelError> {
        check_quantiles(quantiles)?;
        if data.train.is_empty() {
            return Err(ModelError::Empty);
        }
        let train = data.train.project(features)?;
        let val = data.val.project(features)?;
        let standardizer = Standardizer::fit(train.x.view());
        let xt = standardizer.transform(train.x.view());
        let xv = standardizer.transform(val.x.view());
        let start = Instant::now();
        let (model, mut report) = FittedModel::fit(cfg, (xt.view(), train.y.view()), (xv.view(), val.y.view()), quantiles, seed)?;
        report.wall_time_secs = start.elapsed().as_secs_f64();
        Ok((Self { feature_names: features.to_vec(), standardizer, config: cfg.clone(), seed, model }, report))
    }

    /// Predictions for any dataset containing the pipeline's features.
    pub fn predict(&self, data: &Dataset) -> Result<Array2<f64>, ModelError> {
        let projected = data.project(&self.feature_names)?;
        Ok(self.model.predict(self.standardizer.transform(projected.x.view()).view()))
    }

    pub fn quantiles(&self) -> &[f64] {
        self.model.quantiles()
    }
}

/// AQL of predictions in original units; shared by the iterative families.
pub(crate) fn val_aql(y: ArrayView1<f64>, pred: &Array2<f64>, quantiles: &[f64]) -> f64 {
    if y.is_empty() {
        return f64::NAN;
    }
    aql(y, pred.view(), quantiles).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(10.0, 6.0, 0.5), 2.0);
        assert!((pinball(10.0, 6.0, 0.9) - 3.6).abs() < 1e-12);
        assert_eq!(pinball(4.0, 4.0, 0.3), 0.0);
        assert!((pinball(6.0, 10.0, 0.9) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("QLGBM".parse::<ModelFamily>().unwrap(), ModelFamily::Qgbt);
        assert!("qkan".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn quantile_validation() {
        assert!(check_quantiles(&[0.1, 0.5, 0.9]).is_ok());
        assert!(check_quantiles(&[0.5, 0.1]).is_err());
        assert!(check_quantiles(&[0.0]).is_err());
        assert!(check_quantiles(&[]).is_err());
    }
}
