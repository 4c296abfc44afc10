//! Declarative run configuration, flag overrides and the config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use obq_core::market_data::{parse_timestamp, Interval, Market, ProductSpec, ProductType, SplitBoundaries, Timestamp};
use obq_core::models::{ModelConfig, ModelFamily};
use obq_core::search::{ParamRange, SearchSpace};
use obq_core::selector::{log_grid, FeatureSet, SelectorConfig, SolverConfig, ALPHA_MAX, ALPHA_MIN, ZERO_THRESHOLD};
use obq_core::synth::SynthConfig;
use obq_core::transfer::Strategy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecSection {
    pub market: String,
    pub product_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_end: String,
    pub val_end: String,
    pub test_end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub top_k: usize,
    pub fixed_alpha: Option<f64>,
    pub alpha_grid_points: usize,
    pub path_patience: Option<usize>,
    pub zero_threshold: f64,
    pub solver: SolverConfig,
}

impl Default for SelectorSection {
    fn default() -> Self {
        Self {
            top_k: 5,
            fixed_alpha: None,
            alpha_grid_points: 50,
            path_patience: None,
            zero_threshold: ZERO_THRESHOLD,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: String,
    pub feature_set: String,
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Overrides of the family's default hyperparameters, by field name.
    pub base: BTreeMap<String, serde_json::Value>,
    /// Narrowed search ranges, by parameter name.
    pub space: BTreeMap<String, ParamRange>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: "qmlp".into(),
            feature_set: "top5".into(),
            budget: 10,
            seeds: (0..5).collect(),
            base: BTreeMap::new(),
            space: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub name: String,
    #[serde(default)]
    pub trades: Option<String>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub market: Option<String>,
    #[serde(default)]
    pub product_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub strategies: Vec<String>,
    /// Ordered `[target, source]` domain names.
    pub pairs: Vec<[String; 2]>,
    pub domains: Vec<DomainSection>,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self { strategies: Strategy::ALL.iter().map(|s| s.slug().to_string()).collect(), pairs: Vec::new(), domains: Vec::new() }
    }
}

/// The file format. Every field has a flag or a sensible default except the
/// product spec, horizon and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workspace: String,
    #[serde(default)]
    pub trades: Option<String>,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    pub spec: SpecSection,
    pub horizon: HorizonSection,
    pub split: SplitSection,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub selector: SelectorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
}

fn default_timezone() -> String {
    "UTC".into()
}

fn default_quantiles() -> Vec<f64> {
    obq_core::selector::DEFAULT_QUANTILES.to_vec()
}

/// Field-level overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workspace: Option<String>,
    pub trades: Option<String>,
    pub timezone: Option<String>,
    pub market: Option<String>,
    pub product_type: Option<String>,
    pub train_end: Option<String>,
    pub val_end: Option<String>,
    pub test_end: Option<String>,
    pub family: Option<String>,
    pub feature_set: Option<String>,
    pub budget: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub alpha: Option<f64>,
}

/// Directory keys per stage, each hashing only the fields that stage reads,
/// so e.g. a new model family reuses extracted features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageKeys {
    pub synth: String,
    pub features: String,
    pub selection: String,
    pub models: String,
    pub transfer: String,
}

fn digest(v: &serde_json::Value) -> String {
    // serde_json maps are ordered, so this text is canonical.
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn stage_keys(raw: &RunConfig) -> StageKeys {
    use serde_json::json;
    let synth = digest(&json!({"synth": raw.synth, "spec": raw.spec, "horizon": raw.horizon, "timezone": raw.timezone}));
    let source = match &raw.trades {
        Some(t) => json!({"trades": t}),
        None => json!({"synth": synth}),
    };
    let features = digest(&json!({"source": source, "spec": raw.spec, "horizon": raw.horizon, "timezone": raw.timezone}));
    let selection =
        digest(&json!({"features": features, "split": raw.split, "quantiles": raw.quantiles, "selector": raw.selector}));
    let models = digest(&json!({"selection": selection, "model": raw.model}));
    StageKeys { synth, features, selection, models, transfer: config_hash(raw) }
}

/// Validated, typed view of a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: RunConfig,
    pub hash: String,
    pub keys: StageKeys,
    pub workspace: PathBuf,
    /// Relative paths in the file resolve against this directory.
    pub config_dir: PathBuf,
    /// Where trades are read from, and where `synth` writes them.
    pub trades: PathBuf,
    pub tz: chrono_tz::Tz,
    pub spec: ProductSpec,
    pub horizon: Interval,
    pub split: SplitBoundaries,
    pub selector: SelectorConfig,
    pub top_k: usize,
    pub family: ModelFamily,
    pub feature_set: FeatureSet,
    pub base: ModelConfig,
    pub space: SearchSpace,
}

fn cfg_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

pub fn load(path: &Path, o: &Overrides) -> Result<Resolved, CliError> {
    let text = fs::read_to_string(path).map_err(|e| cfg_err("--config", format!("cannot read {}: {e}", path.display())))?;
    let mut raw: RunConfig = toml::from_str(&text).map_err(|e| cfg_err("--config", e))?;
    apply(&mut raw, o);
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(raw, &base_dir)
}

fn apply(raw: &mut RunConfig, o: &Overrides) {
    let set = |dst: &mut String, v: &Option<String>| {
        if let Some(v) = v {
            *dst = v.clone();
        }
    };
    set(&mut raw.workspace, &o.workspace);
    set(&mut raw.timezone, &o.timezone);
    set(&mut raw.spec.market, &o.market);
    set(&mut raw.spec.product_type, &o.product_type);
    set(&mut raw.split.train_end, &o.train_end);
    set(&mut raw.split.val_end, &o.val_end);
    set(&mut raw.split.test_end, &o.test_end);
    set(&mut raw.model.family, &o.family);
    set(&mut raw.model.feature_set, &o.feature_set);
    if o.trades.is_some() {
        raw.trades = o.trades.clone();
    }
    if let Some(b) = o.budget {
        raw.model.budget = b;
    }
    if let Some(s) = &o.seeds {
        raw.model.seeds = s.clone();
    }
    if o.alpha.is_some() {
        raw.selector.fixed_alpha = o.alpha;
    }
}

pub fn resolve_path(base_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub fn parse_spec(market: &str, product_type: &str, field: &str) -> Result<ProductSpec, CliError> {
    let m: Market = market.parse().map_err(|e| cfg_err(&format!("{field}.market"), e))?;
    let p: ProductType = product_type.parse().map_err(|e| cfg_err(&format!("{field}.product_type"), e))?;
    Ok(ProductSpec::new(m, p))
}

/// First 12 hex digits of SHA-256 over the canonical JSON of the effective
/// config, leaving out the workspace location.
pub fn config_hash(raw: &RunConfig) -> String {
    let mut v = serde_json::to_value(raw).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("workspace");
    }
    digest(&v)
}

fn resolve(raw: RunConfig, base_dir: &Path) -> Result<Resolved, CliError> {
    let hash = config_hash(&raw);
    let keys = stage_keys(&raw);
    let tz: chrono_tz::Tz = raw.timezone.parse().map_err(|e| cfg_err("timezone", e))?;
    let ts = |s: &str, field: &str| -> Result<Timestamp, CliError> { parse_timestamp(s, tz).map_err(|e| cfg_err(field, e)) };
    let spec = parse_spec(&raw.spec.market, &raw.spec.product_type, "spec")?;
    let horizon = Interval::new(ts(&raw.horizon.start, "horizon.start")?, ts(&raw.horizon.end, "horizon.end")?);
    if horizon.is_empty() {
        return Err(cfg_err("horizon", "end must lie after start"));
    }
    let split = SplitBoundaries::new(
        ts(&raw.split.train_end, "split.train_end")?,
        ts(&raw.split.val_end, "split.val_end")?,
        ts(&raw.split.test_end, "split.test_end")?,
    )
    .map_err(|e| cfg_err("split", e))?;

    if raw.quantiles.is_empty() || raw.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(cfg_err("quantiles", "need at least one level strictly inside (0, 1)"));
    }
    if raw.quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(cfg_err("quantiles", "levels must be strictly increasing"));
    }
    if !raw.quantiles.iter().any(|q| (q - 0.5).abs() < 1e-12) {
        return Err(cfg_err("quantiles", "the median level 0.5 is required for point metrics"));
    }

    let s = &raw.selector;
    if s.top_k == 0 {
        return Err(cfg_err("selector.top_k", "must be at least 1"));
    }
    if s.alpha_grid_points == 0 {
        return Err(cfg_err("selector.alpha_grid_points", "must be at least 1"));
    }
    if let Some(a) = s.fixed_alpha {
        if !(a.is_finite() && a >= 0.0) {
            return Err(cfg_err("selector.fixed_alpha", "must be finite and non-negative"));
        }
    }
    let selector = SelectorConfig {
        quantiles: raw.quantiles.clone(),
        alpha_grid: log_grid(ALPHA_MIN, ALPHA_MAX, s.alpha_grid_points),
        fixed_alpha: s.fixed_alpha,
        zero_threshold: s.zero_threshold,
        solver: s.solver.clone(),
        path_patience: s.path_patience,
    };

    let m = &raw.model;
    let family: ModelFamily = m.family.parse().map_err(|e| cfg_err("model.family", e))?;
    let feature_set: FeatureSet = m.feature_set.parse().map_err(|e| cfg_err("model.feature_set", e))?;
    if m.budget == 0 {
        return Err(cfg_err("model.budget", "must be at least 1"));
    }
    if m.seeds.is_empty() {
        return Err(cfg_err("model.seeds", "list at least one seed"));
    }
    let mut seen = std::collections::BTreeSet::new();
    if !m.seeds.iter().all(|s| seen.insert(*s)) {
        return Err(cfg_err("model.seeds", "seeds must be distinct"));
    }
    let base = base_config(family, &m.base)?;
    let mut space = SearchSpace::table(family);
    for (name, range) in &m.space {
        space = space.narrow(name, range.clone()).map_err(|e| cfg_err(&format!("model.space.{name}"), e))?;
    }

    if let Some(t) = &raw.transfer {
        check_transfer(t, base_dir)?;
    }
    if let Some(sc) = &raw.synth {
        sc.validate(&spec).map_err(|e| cfg_err("synth", e))?;
    }

    let workspace = resolve_path(base_dir, &raw.workspace);
    let trades = match &raw.trades {
        Some(p) => resolve_path(base_dir, p),
        None if raw.synth.is_some() => workspace.join("synth").join(&keys.synth).join("trades.csv"),
        None => return Err(cfg_err("trades", "no trade file given and no [synth] section to generate one")),
    };
    Ok(Resolved {
        top_k: s.top_k,
        raw,
        hash,
        keys,
        workspace,
        config_dir: base_dir.to_path_buf(),
        trades,
        tz,
        spec,
        horizon,
        split,
        selector,
        family,
        feature_set,
        base,
        space,
    })
}

/// The family default with `overrides` merged in field by field.
pub fn base_config(family: ModelFamily, overrides: &BTreeMap<String, serde_json::Value>) -> Result<ModelConfig, CliError> {
    let mut v = serde_json::to_value(ModelConfig::default_for(family)).expect("model config serializes");
    let obj = v.as_object_mut().expect("model config is an object");
    for (k, val) in overrides {
        if k == "family" || !obj.contains_key(k) {
            return Err(cfg_err(&format!("model.base.{k}"), format!("not a {} hyperparameter", family.label())));
        }
        obj.insert(k.clone(), val.clone());
    }
    serde_json::from_value(v).map_err(|e| cfg_err("model.base", e))
}

pub fn parse_strategy(s: &str) -> Result<Strategy, CliError> {
    Strategy::ALL
        .into_iter()
        .find(|st| st.slug() == s || st.label() == s)
        .ok_or_else(|| cfg_err("transfer.strategies", format!("unknown strategy `{s}` (expected a_to_a, b_to_a or ab_to_a)")))
}

fn check_transfer(t: &TransferSection, base_dir: &Path) -> Result<(), CliError> {
    if t.strategies.is_empty() {
        return Err(cfg_err("transfer.strategies", "list at least one strategy"));
    }
    for s in &t.strategies {
        parse_strategy(s)?;
    }
    let mut names = std::collections::BTreeSet::new();
    for (i, d) in t.domains.iter().enumerate() {
        let field = format!("transfer.domains[{i}]");
        if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.contains("__") {
            return Err(cfg_err(&format!("{field}.name"), "must be non-empty, without path separators or `__`"));
        }
        if !names.insert(d.name.clone()) {
            return Err(cfg_err(&format!("{field}.name"), format!("duplicate domain `{}`", d.name)));
        }
        match (&d.trades, &d.synth) {
            (Some(p), None) => {
                let path = resolve_path(base_dir, p);
                if !path.is_file() {
                    return Err(cfg_err(&format!("{field}.trades"), format!("no such file {}", path.display())));
                }
            }
            (None, Some(_)) => {}
            _ => return Err(cfg_err(&field, "give exactly one of `trades` or `synth`")),
        }
    }
    if t.pairs.is_empty() {
        return Err(cfg_err("transfer.pairs", "list at least one [target, source] pair"));
    }
    for (i, [a, b]) in t.pairs.iter().enumerate() {
        for n in [a, b] {
            if !names.contains(n) {
                return Err(cfg_err(&format!("transfer.pairs[{i}]"), format!("unknown domain `{n}`")));
            }
        }
    }
    Ok(())
}
