//! Labelled feature matrices with named columns.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::feature_names;
use crate::market_data::{DatasetSplit, Sample, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("feature `{0}` is not part of the dataset's feature universe")]
    MissingFeature(String),
    #[error("cannot concatenate datasets with different feature columns")]
    ColumnMismatch,
    #[error("sample at {0} has no target")]
    Unlabeled(String),
    #[error("row count mismatch: x has {x} rows, y has {y}")]
    Shape { x: usize, y: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Trades in each sample's ID3 window.
    pub matched_trades: Vec<usize>,
    pub delivery: Vec<Timestamp>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Array2<f64>, y: Array1<f64>) -> Result<Self, DatasetError> {
        if x.nrows() != y.len() {
            return Err(DatasetError::Shape { x: x.nrows(), y: y.len() });
        }
        let n = y.len();
        Ok(Self { names, x, y, matched_trades: vec![0; n], delivery: Vec::new() })
    }

    /// Full 384-column matrix over labelled samples.
    pub fn from_samples(samples: &[Sample]) -> Result<Self, DatasetError> {
        let names = feature_names().to_vec();
        let mut x = Array2::zeros((samples.len(), names.len()));
        let mut y = Array1::zeros(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let target = s
                .target_id3
                .ok_or_else(|| DatasetError::Unlabeled(crate::market_data::format_timestamp(s.delivery_time)))?;
            y[i] = target;
            x.row_mut(i).assign(&ndarray::ArrayView1::from(s.features.as_slice()));
        }
        Ok(Self {
            names,
            x,
            y,
            matched_trades: samples.iter().map(|s| s.matched_trade_count).collect(),
            delivery: samples.iter().map(|s| s.delivery_time).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Dataset, DatasetError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| DatasetError::MissingFeature(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            names: names.to_vec(),
            x: self.x.select(Axis(1), &idx),
            y: self.y.clone(),
            matched_trades: self.matched_trades.clone(),
            delivery: self.delivery.clone(),
        })
    }

    /// Row-wise concatenation without reweighting.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DatasetError> {
        if self.names != other.names {
            return Err(DatasetError::ColumnMismatch);
        }
        Ok(Dataset {
            names: self.names.clone(),
            x: concatenate![Axis(0), self.x, other.x],
            y: concatenate![Axis(0), self.y, other.y],
            matched_trades: self.matched_trades.iter().chain(&other.matched_trades).copied().collect(),
            delivery: self.delivery.iter().chain(&other.delivery).copied().collect(),
        })
    }

    /// Mean matched-trade count per sample; `None` when empty.
    pub fn avg_matched_trades(&self) -> Option<f64> {
        if self.matched_trades.is_empty() {
            return None;
        }
        Some(self.matched_trades.iter().map(|&c| c as f64).sum::<f64>() / self.matched_trades.len() as f64)
    }
}

/// Train and validation data handed to fitting and search. Test data is never part of it.
#[derive(Debug, Clone, Copy)]
pub struct TrainVal<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitData {
    pub fn from_split(split: &DatasetSplit) -> Result<Self, DatasetError> {
        Ok(Self {
            train: Dataset::from_samples(&split.train)?,
            val: Dataset::from_samples(&split.val)?,
            test: Dataset::from_samples(&split.test)?,
        })
    }

    pub fn train_val(&self) -> TrainVal<'_> {
        TrainVal { train: &self.train, val: &self.val }
    }

    pub fn project(&self, names: &[String]) -> Result<SplitData, DatasetError> {
        Ok(Self { train: self.train.project(names)?, val: self.val.project(names)?, test: self.test.project(names)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        Dataset::new(vec!["a".into(), "b".into(), "c".into()], array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], array![1.0, 2.0])
            .unwrap()
    }

    #[test]
    fn projection_reorders_columns() {
        let p = toy().project(&["c".into(), "a".into()]).unwrap();
        assert_eq!(p.x, array![[3.0, 1.0], [6.0, 4.0]]);
        assert_eq!(toy().project(&["z".into()]), Err(DatasetError::MissingFeature("z".into())));
    }

    #[test]
    fn concat_requires_matching_columns() {
        let d = toy();
        let both = d.concat(&d).unwrap();
        assert_eq!(both.len(), 4);
        let other = d.project(&["a".into()]).unwrap();
        assert_eq!(d.concat(&other), Err(DatasetError::ColumnMismatch));
    }
}
