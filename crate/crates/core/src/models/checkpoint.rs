//! Versioned JSON container for fitted pipelines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelFamily, Pipeline};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format {found} (expected {CHECKPOINT_FORMAT})")]
    Format { found: u32 },
    #[error("checkpoint family tag {tag:?} disagrees with its model ({model:?})")]
    FamilyMismatch { tag: ModelFamily, model: ModelFamily },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub family: ModelFamily,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    pub pipeline: Pipeline,
}

impl Checkpoint {
    pub fn new(pipeline: Pipeline) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            family: pipeline.model.family(),
            seed: pipeline.seed,
            quantiles: pipeline.quantiles().to_vec(),
            pipeline,
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format { found: c.format });
        }
        if c.family != c.pipeline.model.family() {
            return Err(CheckpointError::FamilyMismatch { tag: c.family, model: c.pipeline.model.family() });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, TrainVal};
    use crate::models::{ModelConfig, QgbtConfig, QknnConfig, QmlpConfig};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};

    fn data() -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((60, 2), |_| rng.gen_range(-5.0..5.0));
        let y = Array1::from_iter(x.rows().into_iter().map(|r| r[0] * 1.3 - r[1] + rng.gen_range(-1.0..1.0)));
        Dataset::new(vec!["a".into(), "b".into()], x, y).unwrap()
    }

    #[test]
    fn round_trip_reproduces_predictions() {
        let d = data();
        let names = d.names.clone();
        for cfg in [
            ModelConfig::default_for(ModelFamily::Lqr),
            ModelConfig::Qknn(QknnConfig { n_neighbors: 7, ..Default::default() }),
            ModelConfig::Qgbt(QgbtConfig { n_estimators: 20, ..Default::default() }),
            ModelConfig::Qmlp(QmlpConfig { max_epochs: 5, hidden_size: 8, ..Default::default() }),
        ] {
            let (p, _) = Pipeline::fit(&cfg, &names, TrainVal { train: &d, val: &d }, &[0.1, 0.5, 0.9], 3).unwrap();
            let before = p.predict(&d).unwrap();
            let c = Checkpoint::from_json(&Checkpoint::new(p).to_json().unwrap()).unwrap();
            let after = c.pipeline.predict(&d).unwrap();
            assert_eq!(before, after, "{:?}", cfg.family());
        }
    }

    #[test]
    fn rejects_unknown_format() {
        let d = data();
        let (p, _) = Pipeline::fit(&ModelConfig::default_for(ModelFamily::Lqr), &d.names, TrainVal { train: &d, val: &d }, &[0.5], 0).unwrap();
        let mut c = Checkpoint::new(p);
        c.format = 99;
        assert!(matches!(Checkpoint::from_json(&c.to_json().unwrap()), Err(CheckpointError::Format { found: 99 })));
    }
}
