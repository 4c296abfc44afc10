//! Budgeted hyperparameter search selecting on validation AQL.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::TrainVal;
use crate::metrics::aql;
use crate::models::{ModelConfig, ModelFamily, Pipeline, TrainReport};
use crate::numeric::mix_seed;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search budget must be at least 1")]
    Budget,
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("all {} trials failed: {}", .0.len(), .0.join("; "))]
    AllFailed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamRange {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Inclusive.
    Int { lo: i64, hi: i64 },
    Choice { options: Vec<String> },
}

impl ParamRange {
    pub fn sample(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            ParamRange::Uniform { lo, hi } => ParamValue::Float(if lo == hi { *lo } else { rng.gen_range(*lo..=*hi) }),
            ParamRange::LogUniform { lo, hi } => {
                let v = if lo == hi { *lo } else { rng.gen_range(lo.ln()..=hi.ln()).exp() };
                ParamValue::Float(v.clamp(*lo, *hi))
            }
            ParamRange::Int { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamRange::Choice { options } => ParamValue::Choice(options[rng.gen_range(0..options.len())].clone()),
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (ParamRange::Uniform { lo, hi } | ParamRange::LogUniform { lo, hi }, ParamValue::Float(x)) => x >= lo && x <= hi,
            (ParamRange::Int { lo, hi }, ParamValue::Int(x)) => x >= lo && x <= hi,
            (ParamRange::Choice { options }, ParamValue::Choice(c)) => options.contains(c),
            _ => false,
        }
    }

    /// True when every value of `self` also lies in `outer`.
    pub fn within(&self, outer: &ParamRange) -> bool {
        match (self, outer) {
            (
                ParamRange::Uniform { lo, hi } | ParamRange::LogUniform { lo, hi },
                ParamRange::Uniform { lo: a, hi: b } | ParamRange::LogUniform { lo: a, hi: b },
            ) => lo >= a && hi <= b && lo <= hi,
            (ParamRange::Int { lo, hi }, ParamRange::Int { lo: a, hi: b }) => lo >= a && hi <= b && lo <= hi,
            (ParamRange::Choice { options }, ParamRange::Choice { options: o }) => {
                !options.is_empty() && options.iter().all(|x| o.contains(x))
            }
            _ => false,
        }
    }

    fn validate(&self, name: &str) -> Result<(), SearchError> {
        let ok = match self {
            ParamRange::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamRange::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo <= hi,
            ParamRange::Int { lo, hi } => lo <= hi,
            ParamRange::Choice { options } => !options.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(SearchError::Space(format!("parameter `{name}` has an empty or invalid range")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Choice(String),
}

impl ParamValue {
    fn to_json(&self) -> Value {
        match self {
            ParamValue::Int(v) => Value::from(*v),
            ParamValue::Float(v) => Value::from(*v),
            ParamValue::Choice(s) => Value::from(s.clone()),
        }
    }
}

pub type ParamSet = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: ModelFamily,
    pub params: BTreeMap<String, ParamRange>,
}

impl SearchSpace {
    /// Reference ranges for each family. Learning rates and the L1 weight are log-uniform.
    pub fn table(family: ModelFamily) -> Self {
        use ParamRange::*;
        let choice = |o: &[&str]| Choice { options: o.iter().map(|s| s.to_string()).collect() };
        let params: Vec<(&str, ParamRange)> = match family {
            ModelFamily::Lqr => vec![("l1_weight", LogUniform { lo: 1e-8, hi: 1.0 })],
            ModelFamily::Qknn => vec![
                ("n_neighbors", Int { lo: 5, hi: 100 }),
                ("metric", choice(&["euclidean", "manhattan"])),
                ("weights", choice(&["uniform", "distance"])),
            ],
            ModelFamily::Qgbt => vec![
                ("n_estimators", Int { lo: 50, hi: 500 }),
                ("max_depth", Int { lo: 3, hi: 12 }),
                ("learning_rate", LogUniform { lo: 1e-3, hi: 1e-1 }),
                ("subsample", Uniform { lo: 0.5, hi: 1.0 }),
                ("colsample_by_tree", Uniform { lo: 0.5, hi: 1.0 }),
                ("reg_alpha", Uniform { lo: 0.0, hi: 5.0 }),
                ("reg_lambda", Uniform { lo: 0.0, hi: 10.0 }),
            ],
            ModelFamily::Qmlp => vec![
                ("hidden_size", Int { lo: 32, hi: 1024 }),
                ("n_layers", Int { lo: 2, hi: 6 }),
                ("dropout_rate", Uniform { lo: 0.0, hi: 0.5 }),
                ("learning_rate", LogUniform { lo: 1e-5, hi: 1e-1 }),
                ("batch_size", Int { lo: 64, hi: 1024 }),
            ],
        };
        Self { family, params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    /// Replaces one range, which must stay inside the reference range.
    pub fn narrow(mut self, name: &str, range: ParamRange) -> Result<Self, SearchError> {
        let reference = Self::table(self.family);
        let outer = reference
            .params
            .get(name)
            .ok_or_else(|| SearchError::Space(format!("`{name}` is not a {} parameter", self.family.label())))?;
        range.validate(name)?;
        if !range.within(outer) {
            return Err(SearchError::Space(format!("range for `{name}` leaves the reference range")));
        }
        self.params.insert(name.to_string(), range);
        Ok(self)
    }

    pub fn contains(&self, p: &ParamSet) -> bool {
        self.params.iter().all(|(k, r)| p.get(k).is_some_and(|v| r.contains(v)))
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let reference = Self::table(self.family);
        for (k, r) in &self.params {
            r.validate(k)?;
            match reference.params.get(k) {
                Some(outer) if r.within(outer) => {}
                Some(_) => return Err(SearchError::Space(format!("range for `{k}` leaves the reference range"))),
                None => return Err(SearchError::Space(format!("`{k}` is not a {} parameter", self.family.label()))),
            }
        }
        Ok(())
    }
}

/// Applies sampled values on top of `base`. Parameter names are config field names.
pub fn build_config(base: &ModelConfig, params: &ParamSet) -> Result<ModelConfig, String> {
    let mut v = serde_json::to_value(base).map_err(|e| e.to_string())?;
    let obj = v.as_object_mut().ok_or("model config is not an object")?;
    for (k, p) in params {
        if !obj.contains_key(k) {
            return Err(format!("unknown parameter `{k}` for {}", base.family().label()));
        }
        obj.insert(k.clone(), p.to_json());
    }
    serde_json::from_value(v).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub seed: u64,
    pub params: ParamSet,
    pub config: ModelConfig,
    pub val_aql: Option<f64>,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub report: Option<TrainReport>,
    pub duration_secs: f64,
}

/// Proposes configurations.
pub trait Sampler: Send + Sync {
    fn propose(&self, space: &SearchSpace, trial_id: usize, history: &[Trial]) -> ParamSet;

    /// Proposals ignore `history`, so all trials can be drawn up front and run in parallel.
    fn history_independent(&self) -> bool;
}

/// Seeded uniform / log-uniform random search. Each trial draws from its own stream.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    pub seed: u64,
}

impl Sampler for RandomSampler {
    fn propose(&self, space: &SearchSpace, trial_id: usize, _history: &[Trial]) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, trial_id as u64));
        space.params.iter().map(|(k, r)| (k.clone(), r.sample(&mut rng))).collect()
    }

    fn history_independent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct SearchRequest<'a> {
    pub space: &'a SearchSpace,
    /// Fields not in the space keep these values.
    pub base: &'a ModelConfig,
    pub budget: usize,
    pub seed: u64,
    pub features: &'a [String],
    pub quantiles: &'a [f64],
}

pub struct SearchOutcome {
    pub best: Trial,
    pub best_pipeline: Pipeline,
    pub trials: Vec<Trial>,
}

fn run_trial(req: &SearchRequest<'_>, data: TrainVal<'_>, id: usize, params: ParamSet) -> (Trial, Option<Pipeline>) {
    let seed = mix_seed(req.seed ^ 0x5EA5_C4, id as u64);
    let start = Instant::now();
    let config = build_config(req.base, &params);
    let result = config.clone().and_then(|cfg| {
        let (p, report) = Pipeline::fit(&cfg, req.features, data, req.quantiles, seed).map_err(|e| e.to_string())?;
        let pred = p.predict(data.val).map_err(|e| e.to_string())?;
        let loss = aql(data.val.y.view(), pred.view(), req.quantiles).map_err(|e| e.to_string())?;
        if !loss.is_finite() {
            return Err(format!("validation AQL is {loss}"));
        }
        Ok((p, report, loss))
    });
    let duration_secs = start.elapsed().as_secs_f64();
    let config = config.unwrap_or_else(|_| req.base.clone());
    match result {
        Ok((p, report, loss)) => (
            Trial { id, seed, params, config, val_aql: Some(loss), status: TrialStatus::Ok, report: Some(report), duration_secs },
            Some(p),
        ),
        Err(error) => {
            log::warn!("trial {id} failed: {error}");
            (
                Trial { id, seed, params, config, val_aql: None, status: TrialStatus::Failed { error }, report: None, duration_secs },
                None,
            )
        }
    }
}

type Best = Option<(f64, usize, Pipeline)>;

fn offer(best: &mut Best, loss: f64, id: usize, p: Pipeline) {
    let better = match best {
        None => true,
        Some((l, i, _)) => loss < *l || (loss == *l && id < *i),
    };
    if better {
        *best = Some((loss, id, p));
    }
}

/// Runs `budget` trials and keeps the lowest validation AQL; ties go to the earlier trial.
///
/// Only train and validation data are visible here.
pub fn run_search(req: &SearchRequest<'_>, sampler: &dyn Sampler, data: TrainVal<'_>) -> Result<SearchOutcome, SearchError> {
    if req.budget == 0 {
        return Err(SearchError::Budget);
    }
    if req.space.family != req.base.family() {
        return Err(SearchError::Space("search space and base config name different families".into()));
    }
    req.space.validate()?;

    let mut trials = Vec::with_capacity(req.budget);
    let mut best: Best = None;
    if sampler.history_independent() {
        let proposals: Vec<ParamSet> = (0..req.budget).map(|id| sampler.propose(req.space, id, &[])).collect();
        let shared = Mutex::new(None);
        let mut done: Vec<Trial> = proposals
            .into_par_iter()
            .enumerate()
            .map(|(id, params)| {
                let (t, p) = run_trial(req, data, id, params);
                if let (Some(p), Some(loss)) = (p, t.val_aql) {
                    offer(&mut shared.lock().expect("search lock"), loss, id, p);
                }
                t
            })
            .collect();
        done.sort_by_key(|t| t.id);
        trials = done;
        best = shared.into_inner().expect("search lock");
    } else {
        for id in 0..req.budget {
            let params = sampler.propose(req.space, id, &trials);
            let (t, p) = run_trial(req, data, id, params);
            if let (Some(p), Some(loss)) = (p, t.val_aql) {
                offer(&mut best, loss, id, p);
            }
            trials.push(t);
        }
    }
    match best {
        Some((_, id, best_pipeline)) => Ok(SearchOutcome { best: trials[id].clone(), best_pipeline, trials }),
        None => Err(SearchError::AllFailed(
            trials
                .iter()
                .map(|t| match &t.status {
                    TrialStatus::Failed { error } => format!("trial {}: {error}", t.id),
                    TrialStatus::Ok => format!("trial {}: no result", t.id),
                })
                .collect(),
        )),
    }
}

#[derive(Serialize)]
struct TrialLine<'a> {
    id: usize,
    seed: u64,
    config: &'a ParamSet,
    val_aql: Option<f64>,
    duration_secs: f64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// One JSON object per line: id, seed, sampled config, validation AQL, duration, status.
pub fn write_trial_log<W: Write>(mut sink: W, trials: &[Trial]) -> std::io::Result<()> {
    for t in trials {
        let (status, error) = match &t.status {
            TrialStatus::Ok => ("ok", None),
            TrialStatus::Failed { error } => ("failed", Some(error.as_str())),
        };
        let line = TrialLine { id: t.id, seed: t.seed, config: &t.params, val_aql: t.val_aql, duration_secs: t.duration_secs, status, error };
        serde_json::to_writer(&mut sink, &line)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}
