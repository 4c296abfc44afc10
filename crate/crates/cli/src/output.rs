//! Stamped output files. CSVs start with a `#` comment line, JSON reports carry a `meta` block.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Resolved;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Meta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: &'a str,
    pub stage_key: &'a str,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    meta: Meta<'a>,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Features,
    Selection,
    Models,
    Metrics,
    Transfer,
}

impl Stage {
    fn dir_name(self) -> &'static str {
        match self {
            Stage::Features => "features",
            Stage::Selection => "selection",
            Stage::Models => "models",
            Stage::Metrics => "metrics",
            Stage::Transfer => "transfer",
        }
    }

    pub fn key(self, r: &Resolved) -> &str {
        match self {
            Stage::Features => &r.keys.features,
            Stage::Selection => &r.keys.selection,
            Stage::Models | Stage::Metrics => &r.keys.models,
            Stage::Transfer => &r.keys.transfer,
        }
    }
}

pub fn meta(r: &Resolved, stage: Stage) -> Meta<'_> {
    Meta { tool: "obq", version: VERSION, config_hash: &r.hash, stage_key: stage.key(r) }
}

/// `workspace/<stage>/<key>/`, without creating it.
pub fn stage_path(r: &Resolved, stage: Stage) -> PathBuf {
    r.workspace.join(stage.dir_name()).join(stage.key(r))
}

/// [`stage_path`], created on demand.
pub fn stage_dir(r: &Resolved, stage: Stage) -> Result<PathBuf, CliError> {
    let d = stage_path(r, stage);
    fs::create_dir_all(&d).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", d.display())))?;
    Ok(d)
}

pub fn csv_banner(r: &Resolved, stage_key: &str) -> String {
    format!("# obq {VERSION} config {} stage {stage_key}\n", r.hash)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes a CSV produced by `fill` behind the banner line.
pub fn write_csv<F, E>(r: &Resolved, stage_key: &str, path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    E: std::fmt::Display,
{
    let mut buf = csv_banner(r, stage_key).into_bytes();
    fill(&mut buf).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    write_bytes(path, &buf)
}

/// Pretty JSON with `meta` first; `body` must serialize to an object.
pub fn write_json<T: Serialize>(r: &Resolved, stage: Stage, path: &Path, body: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Stamped { meta: meta(r, stage), body }).map_err(CliError::runtime)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Wall-clock durations live only here so every other file is reproducible.
pub fn write_timings(r: &Resolved, stage: Stage, dir: &Path, rows: &[(String, f64)]) -> Result<(), CliError> {
    write_csv(r, stage.key(r), &dir.join("timings.csv"), |buf| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["unit", "seconds"])?;
        for (unit, secs) in rows {
            w.write_record([unit.clone(), format!("{secs:.3}")])?;
        }
        w.flush()?;
        Ok(())
    })
}
