//! Probabilistic and pointwise forecast metrics.

use std::io::Write;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{pinball_residual, CompensatedSum};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("quantile crossing needs at least two quantile levels")]
    TooFewQuantiles,
    #[error("quantile levels must be strictly ascending")]
    UnsortedQuantiles,
    #[error("R2 is undefined for a constant target")]
    ConstantTarget,
    #[error("pointwise metrics need a 0.5 quantile head")]
    MissingMedian,
}

fn check_quantiles(quantiles: &[f64]) -> Result<(), MetricError> {
    if quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::UnsortedQuantiles);
    }
    Ok(())
}

/// Average quantile loss over samples and quantile levels.
pub fn aql(y: ArrayView1<f64>, yhat: ArrayView2<f64>, quantiles: &[f64]) -> Result<f64, MetricError> {
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    if yhat.nrows() != y.len() || yhat.ncols() != quantiles.len() {
        return Err(MetricError::Shape(format!(
            "y has {} rows, predictions are {}x{}, {} quantiles",
            y.len(),
            yhat.nrows(),
            yhat.ncols(),
            quantiles.len()
        )));
    }
    let mut acc = CompensatedSum::new();
    for (yi, row) in y.iter().zip(yhat.rows()) {
        for (pred, tau) in row.iter().zip(quantiles) {
            acc.add(pinball_residual(yi - pred, *tau));
        }
    }
    Ok(acc.value() / (y.len() * quantiles.len()) as f64)
}

/// Fraction of (sample, ordered quantile pair) events where the lower level's
/// prediction exceeds the higher level's.
pub fn aqcr(yhat: ArrayView2<f64>, quantiles: &[f64]) -> Result<f64, MetricError> {
    if quantiles.len() < 2 {
        return Err(MetricError::TooFewQuantiles);
    }
    check_quantiles(quantiles)?;
    if yhat.nrows() == 0 {
        return Err(MetricError::Empty);
    }
    if yhat.ncols() != quantiles.len() {
        return Err(MetricError::Shape(format!("{} columns for {} quantiles", yhat.ncols(), quantiles.len())));
    }
    let q = quantiles.len();
    let pairs = q * (q - 1) / 2;
    let mut crossed = 0usize;
    for row in yhat.rows() {
        for l in 0..q {
            for u in (l + 1)..q {
                if row[l] > row[u] {
                    crossed += 1;
                }
            }
        }
    }
    Ok(crossed as f64 / (yhat.nrows() * pairs) as f64)
}

fn check_point(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<(), MetricError> {
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    if y.len() != yhat.len() {
        return Err(MetricError::Shape(format!("{} targets, {} predictions", y.len(), yhat.len())));
    }
    Ok(())
}

pub fn rmse(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64, MetricError> {
    check_point(y, yhat)?;
    let ss: CompensatedSum = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok((ss.value() / y.len() as f64).sqrt())
}

pub fn mae(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64, MetricError> {
    check_point(y, yhat)?;
    let s: CompensatedSum = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).collect();
    Ok(s.value() / y.len() as f64)
}

pub fn r2(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64, MetricError> {
    check_point(y, yhat)?;
    let mean = y.iter().copied().collect::<CompensatedSum>().value() / y.len() as f64;
    let ss_res: CompensatedSum = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect();
    let ss_tot: CompensatedSum = y.iter().map(|a| (a - mean) * (a - mean)).collect();
    if ss_tot.value() == 0.0 {
        return Err(MetricError::ConstantTarget);
    }
    Ok(1.0 - ss_res.value() / ss_tot.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aql: f64,
    /// Fraction in [0, 1]; absent for a single quantile level.
    pub aqcr: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub n_samples: usize,
    pub quantiles: Vec<f64>,
}

/// Index of the 0.5 head.
pub fn median_column(quantiles: &[f64]) -> Option<usize> {
    quantiles.iter().position(|t| (t - 0.5).abs() < 1e-12)
}

/// Full report; pointwise metrics use the 0.5 head.
pub fn evaluate(y: ArrayView1<f64>, yhat: ArrayView2<f64>, quantiles: &[f64]) -> Result<MetricReport, MetricError> {
    check_quantiles(quantiles)?;
    let aql = aql(y, yhat, quantiles)?;
    let aqcr = if quantiles.len() >= 2 { Some(aqcr(yhat, quantiles)?) } else { None };
    let median = yhat.column(median_column(quantiles).ok_or(MetricError::MissingMedian)?);
    Ok(MetricReport {
        aql,
        aqcr,
        rmse: rmse(y, median)?,
        mae: mae(y, median)?,
        r2: r2(y, median)?,
        n_samples: y.len(),
        quantiles: quantiles.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Self {
        Self { mean: crate::numeric::mean(values), std: crate::numeric::population_std(values) }
    }

    pub fn format(&self, scale: f64) -> String {
        format!("{:.2}±{:.2}", self.mean * scale, self.std * scale)
    }
}

/// Mean and spread of each metric over independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub aql: MeanStd,
    pub aqcr: Option<MeanStd>,
    pub rmse: MeanStd,
    pub mae: MeanStd,
    pub r2: MeanStd,
}

impl MetricSummary {
    pub fn from_reports(reports: &[MetricReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let col = |f: fn(&MetricReport) -> f64| MeanStd::from_values(&reports.iter().map(f).collect::<Vec<_>>());
        let aqcr = reports.iter().map(|r| r.aqcr).collect::<Option<Vec<_>>>().map(|v| MeanStd::from_values(&v));
        Some(Self {
            runs: reports.len(),
            aql: col(|r| r.aql),
            aqcr,
            rmse: col(|r| r.rmse),
            mae: col(|r| r.mae),
            r2: col(|r| r.r2),
        })
    }
}

/// Writes rows `label,AQL,AQCR,RMSE,MAE,R2` as `mean±std`; AQCR is printed in percent.
pub fn write_summary_table<W: Write>(sink: W, label_header: &str, rows: &[(String, MetricSummary)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([label_header, "AQL", "AQCR(%)", "RMSE", "MAE", "R2"])?;
    for (label, s) in rows {
        w.write_record([
            label.clone(),
            s.aql.format(1.0),
            s.aqcr.map(|m| m.format(100.0)).unwrap_or_else(|| "n/a".into()),
            s.rmse.format(1.0),
            s.mae.format(1.0),
            s.r2.format(1.0),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn aql_zero_for_perfect_predictions() {
        let y = array![1.0, 2.0];
        let p = array![[1.0, 1.0], [2.0, 2.0]];
        assert_eq!(aql(y.view(), p.view(), &[0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn aql_hand_example() {
        let y = array![10.0];
        let p = array![[6.0, 6.0]];
        assert!((aql(y.view(), p.view(), &[0.1, 0.9]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn aql_median_is_half_mae() {
        let y = array![1.0, -3.0, 7.5];
        let p = array![[2.0], [0.0], [7.0]];
        let a = aql(y.view(), p.view(), &[0.5]).unwrap();
        let m = mae(y.view(), p.column(0)).unwrap();
        assert_eq!(a, m / 2.0);
    }

    #[test]
    fn aql_rejects_empty() {
        let y = ndarray::Array1::<f64>::zeros(0);
        let p = Array2::<f64>::zeros((0, 1));
        assert_eq!(aql(y.view(), p.view(), &[0.5]), Err(MetricError::Empty));
    }

    #[test]
    fn aqcr_enumerates_pairs() {
        let q = [0.1, 0.5, 0.9];
        assert_eq!(aqcr(array![[5.0, 4.0, 6.0]].view(), &q).unwrap(), 1.0 / 3.0);
        assert_eq!(aqcr(array![[1.0, 2.0, 3.0], [1.0, 1.0, 1.0]].view(), &q).unwrap(), 0.0);
        assert_eq!(aqcr(array![[3.0, 2.0, 1.0]].view(), &q).unwrap(), 1.0);
        assert_eq!(aqcr(array![[1.0]].view(), &[0.5]), Err(MetricError::TooFewQuantiles));
    }

    #[test]
    fn point_metrics_hand_example() {
        let y = array![0.0, 2.0];
        let p = array![1.0, 1.0];
        assert_eq!(rmse(y.view(), p.view()).unwrap(), 1.0);
        assert_eq!(mae(y.view(), p.view()).unwrap(), 1.0);
        assert_eq!(r2(y.view(), p.view()).unwrap(), 0.0);
        assert_eq!(r2(y.view(), y.view()).unwrap(), 1.0);
        assert_eq!(r2(array![3.0, 3.0].view(), p.view()), Err(MetricError::ConstantTarget));
    }

    #[test]
    fn evaluate_uses_median_head() {
        let y = array![0.0, 2.0, 4.0];
        let p = array![[-1.0, 0.0, 1.0], [1.0, 2.0, 3.0], [3.0, 5.0, 4.0]];
        let r = evaluate(y.view(), p.view(), &[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(r.mae, 1.0 / 3.0);
        assert_eq!(r.aqcr, Some(1.0 / 9.0));
        assert_eq!(evaluate(y.view(), p.view(), &[0.1, 0.4, 0.9]), Err(MetricError::MissingMedian));
    }

    #[test]
    fn summary_formats_percent_aqcr() {
        let mk = |aql| MetricReport { aql, aqcr: Some(0.001), rmse: 1.0, mae: 1.0, r2: 0.5, n_samples: 1, quantiles: vec![0.1, 0.5, 0.9] };
        let s = MetricSummary::from_reports(&[mk(3.0), mk(5.0)]).unwrap();
        assert_eq!(s.aql, MeanStd { mean: 4.0, std: 1.0 });
        let mut out = Vec::new();
        write_summary_table(&mut out, "model", &[("LQR".into(), s)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("LQR,4.00±1.00,0.10±0.00,1.00±0.00"), "{text}");
    }
}
