use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Column-wise z-scoring with statistics taken from the training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, or 1 for zero-variance columns.
    pub scale: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl Standardizer {
    /// # Panics
    /// If `train` has no rows.
    pub fn fit(train: ArrayView2<f64>) -> Self {
        assert!(train.nrows() > 0, "cannot standardize an empty matrix");
        let n = train.nrows() as f64;
        let mut mean = Vec::with_capacity(train.ncols());
        let mut scale = Vec::with_capacity(train.ncols());
        let mut zero_variance = Vec::with_capacity(train.ncols());
        for col in train.axis_iter(Axis(1)) {
            let m = col.iter().copied().collect::<crate::numeric::CompensatedSum>().value() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).collect::<crate::numeric::CompensatedSum>().value() / n;
            let sd = var.max(0.0).sqrt();
            let degenerate = sd <= 1e-12 * (1.0 + m.abs());
            mean.push(m);
            scale.push(if degenerate { 1.0 } else { sd });
            zero_variance.push(degenerate);
        }
        Self { mean, scale, zero_variance }
    }

    pub fn identity(n_features: usize) -> Self {
        Self { mean: vec![0.0; n_features], scale: vec![1.0; n_features], zero_variance: vec![false; n_features] }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.mean.len(), "column count differs from fitted statistics");
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// Standardizes `train` and transforms every matrix in `others` with the training statistics.
pub fn standardize(train: ArrayView2<f64>, others: &[ArrayView2<f64>]) -> (Array2<f64>, Vec<Array2<f64>>, Standardizer) {
    let st = Standardizer::fit(train);
    let t = st.transform(train);
    let o = others.iter().map(|x| st.transform(*x)).collect();
    (t, o, st)
}
