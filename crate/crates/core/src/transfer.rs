//! Cross-domain generalization: train on a source domain, test on a target.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, SplitData, TrainVal};
use crate::features::feature_names;
use crate::metrics::{evaluate, MetricError, MetricReport, MetricSummary};
use crate::models::ModelConfig;
use crate::search::{run_search, RandomSampler, SearchError, SearchRequest, SearchSpace};
use crate::selector::{run_selection, FeatureSet, SelectionResult, SelectorConfig, SelectorError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("domain `{0}` has no matched trades in its test split")]
    NoLiquidity(String),
    #[error("feature `{feature}` is missing from domain `{domain}`")]
    UnknownFeature { domain: String, feature: String },
    #[error("domain `{0}` selected no features")]
    EmptySelection(String),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("asymmetry sweep needs at least two domain pairs")]
    TooFewPairs,
    #[error("baseline AQL is not positive")]
    Baseline,
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "A→A")]
    Native,
    #[serde(rename = "B→A")]
    Transfer,
    #[serde(rename = "A+B→A")]
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Native, Strategy::Transfer, Strategy::Joint];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Native => "A→A",
            Strategy::Transfer => "B→A",
            Strategy::Joint => "A+B→A",
        }
    }

    /// ASCII form for file names.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::Native => "a_to_a",
            Strategy::Transfer => "b_to_a",
            Strategy::Joint => "ab_to_a",
        }
    }
}

/// A market and product type with labelled splits and its own selected features.
#[derive(Debug, Clone)]
pub struct Domain {
    pub name: String,
    pub data: SplitData,
    pub selection: Option<SelectionResult>,
    pub selected_features: Vec<String>,
    /// Mean matched-trade count over test samples.
    pub avg_matched_trades: f64,
}

impl Domain {
    /// Runs selection on the domain's train and validation splits.
    pub fn select(name: &str, data: SplitData, cfg: &SelectorConfig, set: FeatureSet) -> Result<Self, TransferError> {
        let selection = if set.needs_selection() { Some(run_selection(data.train_val(), cfg)?.result) } else { None };
        let features = set.names(selection.as_ref())?;
        let mut d = Self::with_features(name, data, features)?;
        d.selection = selection;
        Ok(d)
    }

    pub fn with_features(name: &str, data: SplitData, features: Vec<String>) -> Result<Self, TransferError> {
        if features.is_empty() {
            return Err(TransferError::EmptySelection(name.to_string()));
        }
        for f in &features {
            if data.train.column_index(f).is_none() {
                return Err(TransferError::UnknownFeature { domain: name.to_string(), feature: f.clone() });
            }
        }
        let avg = data.test.avg_matched_trades().filter(|n| *n > 0.0).ok_or_else(|| TransferError::NoLiquidity(name.to_string()))?;
        Ok(Self { name: name.to_string(), data, selection: None, selected_features: features, avg_matched_trades: avg })
    }
}

/// `C = N_B / N_A`.
pub fn trade_count_ratio(a: &Domain, b: &Domain) -> Result<f64, TransferError> {
    if !(a.avg_matched_trades > 0.0) {
        return Err(TransferError::NoLiquidity(a.name.clone()));
    }
    if !(b.avg_matched_trades > 0.0) {
        return Err(TransferError::NoLiquidity(b.name.clone()));
    }
    Ok(b.avg_matched_trades / a.avg_matched_trades)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub base: ModelConfig,
    pub space: SearchSpace,
    pub budget: usize,
    pub quantiles: Vec<f64>,
    /// One search and fit per seed; seeds do not depend on the strategy.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub features: Vec<String>,
    pub per_seed: Vec<MetricReport>,
    pub mean_aql: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub strategy: Strategy,
    pub target: String,
    pub source: String,
    pub features: Vec<String>,
    pub per_seed: Vec<MetricReport>,
    pub summary: MetricSummary,
    pub loss_ratio: f64,
    pub trade_count_ratio: f64,
}

fn union(a: &[String], b: &[String]) -> Vec<String> {
    let chosen: std::collections::BTreeSet<&String> = a.iter().chain(b).collect();
    feature_names().iter().filter(|n| chosen.contains(n)).cloned().collect::<Vec<_>>()
}

fn check_universe(domain: &Domain, features: &[String]) -> Result<(), TransferError> {
    for f in features {
        if domain.data.test.column_index(f).is_none() || domain.data.train.column_index(f).is_none() {
            return Err(TransferError::UnknownFeature { domain: domain.name.clone(), feature: f.clone() });
        }
    }
    Ok(())
}

/// Searches, fits and tests one strategy for every seed. Only the source domains'
/// train and validation splits are touched before testing on `a`.
pub fn run_strategy(strategy: Strategy, a: &Domain, b: &Domain, cfg: &TransferConfig) -> Result<StrategyRun, TransferError> {
    if cfg.seeds.is_empty() {
        return Err(TransferError::NoSeeds);
    }
    let joint_train;
    let joint_val;
    let (features, source): (Vec<String>, TrainVal<'_>) = match strategy {
        Strategy::Native => (a.selected_features.clone(), a.data.train_val()),
        Strategy::Transfer => (b.selected_features.clone(), b.data.train_val()),
        Strategy::Joint => {
            joint_train = a.data.train.concat(&b.data.train)?;
            joint_val = a.data.val.concat(&b.data.val)?;
            (union(&a.selected_features, &b.selected_features), TrainVal { train: &joint_train, val: &joint_val })
        }
    };
    check_universe(a, &features)?;
    check_universe(b, &features)?;
    let test: &Dataset = &a.data.test;
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<MetricReport, TransferError> {
            let req = SearchRequest {
                space: &cfg.space,
                base: &cfg.base,
                budget: cfg.budget,
                seed,
                features: &features,
                quantiles: &cfg.quantiles,
            };
            let outcome = run_search(&req, &RandomSampler { seed }, source)?;
            let pred = outcome.best_pipeline.predict(test)?;
            Ok(evaluate(test.y.view(), pred.view(), &cfg.quantiles)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean_aql = per_seed.iter().map(|r| r.aql).sum::<f64>() / per_seed.len() as f64;
    Ok(StrategyRun { strategy, features, per_seed, mean_aql })
}

/// Attaches `L = AQL(run) / AQL(A→A)` and `C`.
pub fn make_report(run: StrategyRun, baseline: &StrategyRun, a: &Domain, b: &Domain) -> Result<TransferReport, TransferError> {
    if !(baseline.mean_aql > 0.0) {
        return Err(TransferError::Baseline);
    }
    let (loss_ratio, c, source) = match run.strategy {
        Strategy::Native => (1.0, 1.0, a.name.clone()),
        Strategy::Transfer => (run.mean_aql / baseline.mean_aql, trade_count_ratio(a, b)?, b.name.clone()),
        Strategy::Joint => (run.mean_aql / baseline.mean_aql, trade_count_ratio(a, b)?, format!("{}+{}", a.name, b.name)),
    };
    let summary = MetricSummary::from_reports(&run.per_seed).ok_or(TransferError::NoSeeds)?;
    Ok(TransferReport {
        strategy: run.strategy,
        target: a.name.clone(),
        source,
        features: run.features,
        per_seed: run.per_seed,
        summary,
        loss_ratio,
        trade_count_ratio: c,
    })
}

/// Runs the requested strategies for target `a` and source `b`. The native
/// baseline is always computed since every ratio depends on it.
pub fn run_transfer(a: &Domain, b: &Domain, strategies: &[Strategy], cfg: &TransferConfig) -> Result<Vec<TransferReport>, TransferError> {
    let baseline = run_strategy(Strategy::Native, a, b, cfg)?;
    let mut out = Vec::with_capacity(strategies.len());
    for &s in strategies {
        let run = if s == Strategy::Native { baseline.clone() } else { run_strategy(s, a, b, cfg)? };
        out.push(make_report(run, &baseline, a, b)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub target: String,
    pub source: String,
    pub trade_count_ratio: f64,
    pub loss_ratio: f64,
}

/// One `(C, L)` point per ordered pair `(target, source)` under the B→A strategy.
pub fn asymmetry_sweep(pairs: &[(&Domain, &Domain)], cfg: &TransferConfig) -> Result<Vec<SweepPoint>, TransferError> {
    if pairs.len() < 2 {
        return Err(TransferError::TooFewPairs);
    }
    pairs
        .iter()
        .map(|(a, b)| {
            let r = run_transfer(a, b, &[Strategy::Transfer], cfg)?.remove(0);
            Ok(SweepPoint { target: a.name.clone(), source: b.name.clone(), trade_count_ratio: r.trade_count_ratio, loss_ratio: r.loss_ratio })
        })
        .collect()
}

/// `strategy,target,source,C,L,AQL,AQCR,RMSE,MAE,R2`, metrics as `mean±std`.
pub fn write_report_table<W: Write>(sink: W, reports: &[TransferReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["strategy", "target", "source", "C", "L", "AQL", "AQCR", "RMSE", "MAE", "R2"])?;
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.strategy.label().to_string(),
            r.target.clone(),
            r.source.clone(),
            format!("{:.6}", r.trade_count_ratio),
            format!("{:.6}", r.loss_ratio),
            s.aql.format(1.0),
            s.aqcr.map(|m| m.format(100.0)).unwrap_or_default(),
            s.rmse.format(1.0),
            s.mae.format(1.0),
            s.r2.format(1.0),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `target,source,C,L` with full precision.
pub fn write_scatter<W: Write>(sink: W, points: &[SweepPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["target", "source", "C", "L"])?;
    for p in points {
        w.write_record([p.target.clone(), p.source.clone(), p.trade_count_ratio.to_string(), p.loss_ratio.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LqrConfig, ModelFamily};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};

    fn dataset(n: usize, seed: u64, liquidity: usize, shift: f64) -> Dataset {
        let names = feature_names().to_vec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, names.len()), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_iter(x.rows().into_iter().map(|r| 2.0 * r[0] + shift + rng.gen_range(-0.3..0.3)));
        let mut d = Dataset::new(names, x, y).unwrap();
        d.matched_trades = vec![liquidity; n];
        d
    }

    fn domain(name: &str, seed: u64, liquidity: usize, shift: f64) -> Domain {
        let data = SplitData {
            train: dataset(60, seed, liquidity, shift),
            val: dataset(30, seed + 1, liquidity, shift),
            test: dataset(30, seed + 2, liquidity, shift),
        };
        let features = vec![feature_names()[0].clone(), feature_names()[1].clone()];
        Domain::with_features(name, data, features).unwrap()
    }

    fn cfg() -> TransferConfig {
        TransferConfig {
            base: ModelConfig::Lqr(LqrConfig::default()),
            space: SearchSpace::table(ModelFamily::Lqr),
            budget: 2,
            quantiles: vec![0.1, 0.5, 0.9],
            seeds: vec![1, 2],
        }
    }

    #[test]
    fn count_ratio_examples() {
        let a = domain("a", 1, 50, 0.0);
        let b = domain("b", 1, 100, 0.0);
        assert_eq!(trade_count_ratio(&a, &a).unwrap(), 1.0);
        assert_eq!(trade_count_ratio(&a, &b).unwrap(), 2.0);
        assert_eq!(trade_count_ratio(&a, &b).unwrap() * trade_count_ratio(&b, &a).unwrap(), 1.0);
    }

    #[test]
    fn self_transfer_is_identity() {
        let a = domain("a", 1, 50, 0.0);
        let reports = run_transfer(&a, &a, &Strategy::ALL, &cfg()).unwrap();
        assert_eq!(reports[0].loss_ratio, 1.0);
        assert_eq!(reports[0].per_seed, reports[1].per_seed);
        assert_eq!(reports[1].loss_ratio, 1.0);
    }

    #[test]
    fn shifted_source_hurts() {
        let a = domain("a", 1, 50, 0.0);
        let b = domain("b", 10, 50, 5.0);
        let r = run_transfer(&a, &b, &[Strategy::Transfer, Strategy::Joint], &cfg()).unwrap();
        assert!(r[0].loss_ratio > 2.0, "{}", r[0].loss_ratio);
        assert!(r[1].features.len() >= 2);
    }

    #[test]
    fn joint_features_are_a_union() {
        let mut a = domain("a", 1, 50, 0.0);
        let b = domain("b", 2, 50, 0.0);
        a.selected_features = vec![feature_names()[0].clone(), feature_names()[5].clone()];
        let run = run_strategy(Strategy::Joint, &a, &b, &cfg()).unwrap();
        for f in a.selected_features.iter().chain(&b.selected_features) {
            assert!(run.features.contains(f));
        }
    }

    #[test]
    fn rejects_features_outside_universe() {
        let a = domain("a", 1, 50, 0.0);
        let mut b = domain("b", 2, 50, 0.0);
        b.selected_features.push("bogus".into());
        assert!(matches!(run_strategy(Strategy::Transfer, &a, &b, &cfg()), Err(TransferError::UnknownFeature { .. })));
    }

    #[test]
    fn zero_liquidity_is_rejected() {
        let data = SplitData { train: dataset(10, 1, 0, 0.0), val: dataset(10, 2, 0, 0.0), test: dataset(10, 3, 0, 0.0) };
        assert!(matches!(Domain::with_features("z", data, vec![feature_names()[0].clone()]), Err(TransferError::NoLiquidity(_))));
    }

    #[test]
    fn sweep_gives_reciprocal_ratios() {
        let a = domain("a", 1, 20, 0.0);
        let b = domain("b", 4, 200, 0.0);
        let pts = asymmetry_sweep(&[(&a, &b), (&b, &a)], &cfg()).unwrap();
        assert!((pts[0].trade_count_ratio * pts[1].trade_count_ratio - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_scatter(&mut buf, &pts).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
