//! One function per subcommand. Each reads the previous stage's files from the workspace.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use obq_core::dataset::SplitData;
use obq_core::market_data::{
    build_samples, format_timestamp, parse_trades, read_samples, split_dataset, write_samples, write_trades, ProductSpec,
    Sample, SampleSet, Trade,
};
use obq_core::metrics::{evaluate as score, MetricReport, MetricSummary};
use obq_core::models::checkpoint::Checkpoint;
use obq_core::search::{run_search, RandomSampler, SearchRequest, Trial, TrialStatus};
use obq_core::selector::{run_selection, top_k, write_top_k_csv, SelectionReport, SelectionResult};
use obq_core::synth::{generate, SynthConfig};
use obq_core::transfer::{run_transfer, write_report_table, write_scatter, Domain, Strategy, SweepPoint, TransferConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_spec, parse_strategy, resolve_path, Resolved};
use crate::output::{stage_dir, stage_path, write_csv, write_json, write_timings, Stage};
use crate::CliError;

fn missing(field: &str, path: &Path, hint: &str) -> CliError {
    CliError::Config(format!("{field}: {} does not exist ({hint})", path.display()))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn synth_trades(cfg: &SynthConfig, spec: &ProductSpec, r: &Resolved) -> Result<Vec<Trade>, CliError> {
    Ok(generate(cfg, spec, r.horizon).map_err(CliError::runtime)?.trades())
}

pub fn synth(r: &Resolved) -> Result<(), CliError> {
    let cfg = r.raw.synth.as_ref().ok_or_else(|| CliError::Config("synth: section missing from the config".into()))?;
    let trades = synth_trades(cfg, &r.spec, r)?;
    write_csv(r, &r.keys.synth, &r.trades, |buf| write_trades(buf, &trades))?;
    log::info!("wrote {} trades to {}", trades.len(), r.trades.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ExtractSummary {
    trades: usize,
    rejected_rows: usize,
    candidate_products: usize,
    samples: usize,
    supervised: usize,
    dropped: usize,
    split: SplitCounts,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
    unlabeled: usize,
    beyond_test: usize,
}

fn load_trades(path: &Path, field: &str, r: &Resolved) -> Result<(Vec<Trade>, usize), CliError> {
    if !path.is_file() {
        return Err(missing(field, path, "give an existing trade CSV or run `obq synth`"));
    }
    let f = File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let parsed = parse_trades(BufReader::new(f), r.tz).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for rej in &parsed.rejected {
        log::warn!("{}:{}: {}", path.display(), rej.line, rej.reason);
    }
    Ok((parsed.trades, parsed.rejected.len()))
}

pub fn extract(r: &Resolved) -> Result<(), CliError> {
    let (trades, rejected) = load_trades(&r.trades, "trades", r)?;
    let set = build_samples(&trades, &r.spec, r.horizon);
    let dir = stage_dir(r, Stage::Features)?;
    let key = Stage::Features.key(r);
    write_csv(r, key, &dir.join("samples.csv"), |buf| write_samples(buf, &set.samples))?;
    write_csv(r, key, &dir.join("drops.csv"), |buf| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["delivery_time", "empty_side", "has_target"])?;
        for d in &set.dropped {
            w.write_record([format_timestamp(d.delivery_time), d.empty_side.label().to_string(), d.has_target.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let summary = summarize(&set, trades.len(), rejected, r);
    write_json(r, Stage::Features, &dir.join("extract.json"), &summary)?;
    log::info!("{} samples, {} dropped", set.samples.len(), set.dropped.len());
    Ok(())
}

fn summarize(set: &SampleSet, trades: usize, rejected: usize, r: &Resolved) -> ExtractSummary {
    let split = split_dataset(set.samples.clone(), r.split);
    ExtractSummary {
        trades,
        rejected_rows: rejected,
        candidate_products: set.samples.len() + set.dropped.len(),
        samples: set.samples.len(),
        supervised: set.supervised().count(),
        dropped: set.dropped.len(),
        split: SplitCounts {
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
            unlabeled: split.unlabeled,
            beyond_test: split.beyond_test,
        },
        warnings: split.warnings,
    }
}

fn load_samples(r: &Resolved) -> Result<Vec<Sample>, CliError> {
    let path = stage_path(r, Stage::Features).join("samples.csv");
    if !path.is_file() {
        return Err(missing("features", &path, "run `obq extract` first"));
    }
    let f = File::open(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    read_samples(BufReader::new(f)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn split_data(samples: Vec<Sample>, r: &Resolved) -> Result<SplitData, CliError> {
    SplitData::from_split(&split_dataset(samples, r.split)).map_err(CliError::runtime)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    top_k: usize,
    report: SelectionReport,
}

pub fn select(r: &Resolved) -> Result<(), CliError> {
    let data = split_data(load_samples(r)?, r)?;
    let report = run_selection(data.train_val(), &r.selector).map_err(CliError::runtime)?;
    if report.result.is_empty() {
        return Err(CliError::Runtime(
            "selection is empty: every coefficient was shrunk to zero; lower selector.fixed_alpha or let validation tune it".into(),
        ));
    }
    let dir = stage_dir(r, Stage::Selection)?;
    write_csv(r, Stage::Selection.key(r), &dir.join("top_k.csv"), |buf| write_top_k_csv(buf, &report.result, r.top_k))?;
    for q in &report.result.per_tau {
        let t = top_k(&report.result, q.tau, r.top_k).map_err(CliError::runtime)?;
        log::info!("tau {}: {} selected, top {:?}", q.tau, q.selected.len(), t.features.iter().map(|f| &f.name).collect::<Vec<_>>());
    }
    write_json(r, Stage::Selection, &dir.join("selection.json"), &SelectionFile { top_k: r.top_k, report })?;
    Ok(())
}

fn load_selection(r: &Resolved) -> Result<SelectionResult, CliError> {
    let path = stage_path(r, Stage::Selection).join("selection.json");
    if !path.is_file() {
        return Err(missing("selection", &path, "run `obq select` first"));
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let f: SelectionFile = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(f.report.result)
}

fn training_features(r: &Resolved) -> Result<Vec<String>, CliError> {
    let selection = if r.feature_set.needs_selection() { Some(load_selection(r)?) } else { None };
    let names = r.feature_set.names(selection.as_ref()).map_err(CliError::runtime)?;
    if names.is_empty() {
        return Err(CliError::Runtime(format!("feature set {} is empty", r.feature_set)));
    }
    Ok(names)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Trial record without wall-clock time.
#[derive(Serialize)]
struct TrialLine<'a> {
    id: usize,
    seed: u64,
    params: &'a obq_core::search::ParamSet,
    val_aql: Option<f64>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

fn trial_lines(trials: &[Trial]) -> Result<String, CliError> {
    let mut out = String::new();
    for t in trials {
        let (status, error) = match &t.status {
            TrialStatus::Ok => ("ok", None),
            TrialStatus::Failed { error } => ("failed", Some(error.as_str())),
        };
        let line = TrialLine { id: t.id, seed: t.seed, params: &t.params, val_aql: t.val_aql, status, error };
        out.push_str(&serde_json::to_string(&line).map_err(CliError::runtime)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    checkpoint: Checkpoint,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    family: &'static str,
    feature_set: String,
    features: &'a [String],
    budget: usize,
    seeds: Vec<SeedBest<'a>>,
}

#[derive(Serialize)]
struct SeedBest<'a> {
    seed: u64,
    best_trial: usize,
    val_aql: Option<f64>,
    params: &'a obq_core::search::ParamSet,
}

fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.json"))
}

pub fn train(r: &Resolved) -> Result<(), CliError> {
    let data = split_data(load_samples(r)?, r)?;
    let features = training_features(r)?;
    let seeds = &r.raw.model.seeds;
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let req = SearchRequest {
                space: &r.space,
                base: &r.base,
                budget: r.raw.model.budget,
                seed,
                features: &features,
                quantiles: &r.selector.quantiles,
            };
            run_search(&req, &RandomSampler { seed }, data.train_val()).map_err(CliError::runtime)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dir = stage_dir(r, Stage::Models)?;
    let mut timings = Vec::new();
    let mut best = Vec::new();
    for (seed, o) in seeds.iter().zip(&outcomes) {
        write_json(r, Stage::Models, &checkpoint_path(&dir, *seed), &CheckpointFile { checkpoint: Checkpoint::new(o.best_pipeline.clone()) })?;
        let log_path = dir.join(format!("trials_seed_{seed}.jsonl"));
        fs::write(&log_path, trial_lines(&o.trials)?).map_err(|e| CliError::Runtime(format!("{}: {e}", log_path.display())))?;
        for t in &o.trials {
            timings.push((format!("seed_{seed}/trial_{}", t.id), t.duration_secs));
        }
        best.push(SeedBest { seed: *seed, best_trial: o.best.id, val_aql: o.best.val_aql, params: &o.best.params });
    }
    let summary = TrainSummary {
        family: r.family.label(),
        feature_set: r.feature_set.to_string(),
        features: &features,
        budget: r.raw.model.budget,
        seeds: best,
    };
    write_json(r, Stage::Models, &dir.join("train.json"), &summary)?;
    write_timings(r, Stage::Models, &dir, &timings)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SeedMetrics {
    seed: u64,
    report: MetricReport,
}

#[derive(Serialize)]
struct MetricsFile {
    family: &'static str,
    feature_set: String,
    per_seed: Vec<SeedMetrics>,
    summary: MetricSummary,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let inner = v.get("checkpoint").ok_or_else(|| CliError::Runtime(format!("{}: no checkpoint field", path.display())))?;
    Checkpoint::from_json(&inner.to_string()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn evaluate(r: &Resolved) -> Result<(), CliError> {
    let model_dir = stage_path(r, Stage::Models);
    let seeds = &r.raw.model.seeds;
    // Checked before any data is read: a missing checkpoint is a configuration problem.
    for s in seeds {
        let p = checkpoint_path(&model_dir, *s);
        if !p.is_file() {
            return Err(missing("model.seeds", &p, "run `obq train` first"));
        }
    }
    let data = split_data(load_samples(r)?, r)?;
    if data.test.is_empty() {
        return Err(CliError::Runtime("test split is empty".into()));
    }
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let ck = load_checkpoint(&checkpoint_path(&model_dir, seed))?;
            let pred = ck.pipeline.predict(&data.test).map_err(CliError::runtime)?;
            let report = score(data.test.y.view(), pred.view(), ck.pipeline.quantiles()).map_err(CliError::runtime)?;
            Ok(SeedMetrics { seed, report })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let reports: Vec<MetricReport> = per_seed.iter().map(|s| s.report.clone()).collect();
    let summary = MetricSummary::from_reports(&reports).ok_or_else(|| CliError::Runtime("no seeds to summarize".into()))?;
    let dir = stage_dir(r, Stage::Metrics)?;
    let label = format!("{} {}", r.family.label(), r.feature_set);
    write_csv(r, Stage::Metrics.key(r), &dir.join("metrics.csv"), |buf| {
        obq_core::metrics::write_summary_table(buf, "model", &[(label, summary.clone())])
    })?;
    let file = MetricsFile { family: r.family.label(), feature_set: r.feature_set.to_string(), per_seed, summary };
    write_json(r, Stage::Metrics, &dir.join("metrics.json"), &file)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

fn build_domain(d: &crate::config::DomainSection, r: &Resolved) -> Result<Domain, CliError> {
    let spec = match (&d.market, &d.product_type) {
        (None, None) => r.spec,
        (m, p) => parse_spec(
            m.as_deref().unwrap_or(&r.raw.spec.market),
            p.as_deref().unwrap_or(&r.raw.spec.product_type),
            &format!("transfer.domains.{}", d.name),
        )?,
    };
    let trades = match (&d.trades, &d.synth) {
        (Some(p), _) => load_trades(&resolve_path(&r.config_dir, p), &format!("transfer.domains.{}.trades", d.name), r)?.0,
        (None, Some(cfg)) => synth_trades(cfg, &spec, r)?,
        (None, None) => unreachable!("checked when the config was resolved"),
    };
    let samples = build_samples(&trades, &spec, r.horizon).samples;
    let data = split_data(samples, r)?;
    Domain::select(&d.name, data, &r.selector, r.feature_set).map_err(|e| CliError::Runtime(format!("domain {}: {e}", d.name)))
}

pub fn transfer(r: &Resolved) -> Result<(), CliError> {
    let t = r.raw.transfer.as_ref().ok_or_else(|| CliError::Config("transfer: section missing from the config".into()))?;
    let strategies = t.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<Vec<Strategy>, _>>()?;
    let started = Instant::now();
    let domains = t.domains.par_iter().map(|d| build_domain(d, r)).collect::<Result<Vec<_>, _>>()?;
    let mut timings = vec![("domains".to_string(), started.elapsed().as_secs_f64())];
    let find = |name: &str| domains.iter().find(|d| d.name == name).expect("pair names are checked");
    let cfg = TransferConfig {
        base: r.base.clone(),
        space: r.space.clone(),
        budget: r.raw.model.budget,
        quantiles: r.selector.quantiles.clone(),
        seeds: r.raw.model.seeds.clone(),
    };

    let dir = stage_dir(r, Stage::Transfer)?;
    let mut all = Vec::new();
    let mut scatter = Vec::new();
    for [target, source] in &t.pairs {
        let clock = Instant::now();
        let (a, b) = (find(target), find(source));
        let mut reports = run_transfer(a, b, &strategies, &cfg).map_err(|e| CliError::Runtime(format!("{target}<-{source}: {e}")))?;
        let point = match reports.iter().find(|x| x.strategy == Strategy::Transfer) {
            Some(x) => x.clone(),
            None => run_transfer(a, b, &[Strategy::Transfer], &cfg).map_err(CliError::runtime)?.remove(0),
        };
        scatter.push(SweepPoint {
            target: target.clone(),
            source: source.clone(),
            trade_count_ratio: point.trade_count_ratio,
            loss_ratio: point.loss_ratio,
        });
        for rep in &reports {
            let name = format!("{target}__{source}__{}.json", rep.strategy.slug());
            write_json(r, Stage::Transfer, &dir.join(name), rep)?;
        }
        timings.push((format!("{target}__{source}"), clock.elapsed().as_secs_f64()));
        all.append(&mut reports);
    }
    let key = Stage::Transfer.key(r);
    write_csv(r, key, &dir.join("table.csv"), |buf| write_report_table(buf, &all))?;
    write_csv(r, key, &dir.join("scatter.csv"), |buf| write_scatter(buf, &scatter))?;
    write_timings(r, Stage::Transfer, &dir, &timings)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub fn run_all(r: &Resolved) -> Result<(), CliError> {
    if r.raw.synth.is_some() {
        synth(r)?;
    }
    extract(r)?;
    if r.feature_set.needs_selection() {
        select(r)?;
    }
    train(r)?;
    evaluate(r)?;
    if r.raw.transfer.is_some() {
        transfer(r)?;
    }
    Ok(())
}
