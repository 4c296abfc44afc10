use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use obq_cli::{execute, run, Cli};
use tempfile::TempDir;

const BASE: &str = r#"
workspace = "ws"
[spec]
market = "DE"
product_type = "60-min"
[horizon]
start = "2024-03-01"
end = "2024-03-13"
[split]
train_end = "2024-03-07"
val_end = "2024-03-10"
test_end = "2024-03-13"
[synth]
seed = 11
liquidity = 60
[selector]
path_patience = 4
alpha_grid_points = 20
[model]
family = "lqr"
feature_set = "top5"
budget = 2
seeds = [0, 1]
"#;

fn setup(extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("{BASE}{extra}")).unwrap();
    (dir, cfg)
}

fn obq(cmd: &str, cfg: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["obq", cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(args)
}

fn error_text(cmd: &str, cfg: &Path, extra: &[&str]) -> String {
    let mut args = vec!["obq", cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    execute(Cli::try_parse_from(args).unwrap()).unwrap_err().to_string()
}

/// The single directory under `ws/<stage>/`.
fn stage(root: &Path, name: &str) -> PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(root.join("ws").join(name)).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{name}: {dirs:?}");
    dirs.pop().unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn synth_writes_banner_header_and_rows_deterministically() {
    let (dir, cfg) = setup("");
    assert_eq!(obq("synth", &cfg, &[]), 0);
    let path = stage(dir.path(), "synth").join("trades.csv");
    let first = fs::read(&path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with("# obq "));
    let lines = data_lines(&text);
    assert_eq!(lines[0], "product_start,side,exec_time,price,volume");
    assert!(lines.len() > 1000);
    assert_eq!(obq("synth", &cfg, &[]), 0);
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn missing_trade_file_is_a_config_error_naming_the_field() {
    let (_dir, cfg) = setup("");
    assert_eq!(obq("extract", &cfg, &["--trades", "nowhere.csv"]), 2);
    let msg = error_text("extract", &cfg, &["--trades", "nowhere.csv"]);
    assert!(msg.contains("trades"), "{msg}");
}

#[test]
fn bad_config_values_exit_2() {
    let (_dir, cfg) = setup("");
    assert_eq!(obq("extract", &cfg, &["--family", "forest"]), 2);
    assert_eq!(obq("extract", &cfg, &["--val-end", "not a date"]), 2);
    assert_eq!(run(["obq", "extract"]), 2);
    let missing = Path::new("/definitely/not/here.toml");
    assert_eq!(obq("extract", missing, &[]), 2);
}

#[test]
fn extract_writes_384_features_and_reports_one_sided_products() {
    let (dir, cfg) = setup("");
    // One product with both sides, one with buys only.
    let trades = "\
product_start,side,exec_time,price,volume
2024-03-01T12:00:00Z,+,2024-03-01T07:00:00Z,50.0,1.0
2024-03-01T12:00:00Z,-,2024-03-01T07:30:00Z,49.0,2.0
2024-03-01T12:00:00Z,+,2024-03-01T09:30:00Z,51.0,1.0
2024-03-01T13:00:00Z,+,2024-03-01T08:00:00Z,55.0,1.0
2024-03-01T13:00:00Z,+,2024-03-01T10:40:00Z,56.0,1.0
";
    fs::write(dir.path().join("hand.csv"), trades).unwrap();
    assert_eq!(obq("extract", &cfg, &["--trades", "hand.csv"]), 0);
    let out = stage(dir.path(), "features");
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    let lines = data_lines(&samples);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 4 + 384);
    assert_eq!(header[2], "target");
    let drops = fs::read_to_string(out.join("drops.csv")).unwrap();
    assert!(drops.contains("2024-03-01T13:00:00Z,sell,true"), "{drops}");
    assert!(samples.contains("2024-03-01T12:00:00Z"));

    let before = fs::read(out.join("samples.csv")).unwrap();
    assert_eq!(obq("extract", &cfg, &["--trades", "hand.csv"]), 0);
    assert_eq!(fs::read(out.join("samples.csv")).unwrap(), before);
}

#[test]
fn select_train_evaluate_and_error_surfaces() {
    let (dir, cfg) = setup("");
    assert_eq!(obq("synth", &cfg, &[]), 0);
    assert_eq!(obq("extract", &cfg, &[]), 0);

    // A huge penalty zeroes everything; that is a runtime failure with an explanation.
    assert_eq!(obq("select", &cfg, &["--alpha", "1e6"]), 1);
    assert!(error_text("select", &cfg, &["--alpha", "1e6"]).contains("empty"));

    assert_eq!(obq("evaluate", &cfg, &[]), 2);

    assert_eq!(obq("select", &cfg, &[]), 0);
    let sel_dir = stage(dir.path(), "selection");
    let top = fs::read_to_string(sel_dir.join("top_k.csv")).unwrap();
    let rows = data_lines(&top);
    assert_eq!(rows[0], "tau,rank,feature,coefficient");
    for tau in ["0.1", "0.5", "0.9"] {
        let n = rows.iter().filter(|r| r.starts_with(&format!("{tau},"))).count();
        assert!((1..=5).contains(&n), "tau {tau}: {n} rows");
    }
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(sel_dir.join("selection.json")).unwrap()).unwrap();
    assert!(sel["meta"]["config_hash"].as_str().unwrap().len() == 12);
    for group in ["by_family", "by_window", "by_side"] {
        let total: f64 = sel["report"]["breakdown"][group].as_array().unwrap().iter().map(|g| g["share"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{group}: {total}");
    }

    assert_eq!(obq("train", &cfg, &[]), 0);
    let models = stage(dir.path(), "models");
    for s in [0, 1] {
        assert!(models.join(format!("seed_{s}.json")).is_file());
        let log = fs::read_to_string(models.join(format!("trials_seed_{s}.jsonl"))).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
    assert_eq!(obq("evaluate", &cfg, &[]), 0);
    let metrics = fs::read_to_string(stage(dir.path(), "metrics").join("metrics.csv")).unwrap();
    let rows = data_lines(&metrics);
    assert_eq!(rows[0], "model,AQL,AQCR(%),RMSE,MAE,R2");
    assert!(rows[1].starts_with("LQR top5,") && rows[1].contains('±'), "{}", rows[1]);

    // A different family reuses features and selection but needs its own checkpoints.
    assert_eq!(obq("evaluate", &cfg, &["--feature-set", "naive2"]), 2);
    assert_eq!(obq("train", &cfg, &["--feature-set", "naive2", "--seeds", "3"]), 0);
    assert_eq!(obq("evaluate", &cfg, &["--feature-set", "naive2", "--seeds", "3"]), 0);
}

const TRANSFER: &str = r#"
[transfer]
pairs = [["thin", "deep"]]
[[transfer.domains]]
name = "thin"
synth = { seed = 5, liquidity = 30 }
[[transfer.domains]]
name = "deep"
synth = { seed = 6, liquidity = 120 }
"#;

#[test]
fn transfer_writes_one_report_per_strategy_and_a_scatter_row_per_pair() {
    let (dir, cfg) = setup(TRANSFER);
    assert_eq!(obq("transfer", &cfg, &["--feature-set", "naive1", "--seeds", "0"]), 0);
    let out = stage(dir.path(), "transfer");
    for slug in ["a_to_a", "b_to_a", "ab_to_a"] {
        assert!(out.join(format!("thin__deep__{slug}.json")).is_file(), "{slug}");
    }
    let native: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("thin__deep__a_to_a.json")).unwrap()).unwrap();
    assert_eq!(native["loss_ratio"].as_f64(), Some(1.0));
    let scatter = fs::read_to_string(out.join("scatter.csv")).unwrap();
    let rows = data_lines(&scatter);
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("thin,deep,"));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(data_lines(&table).len(), 4);
}

#[test]
fn transfer_rejects_unknown_pair_members() {
    let (_dir, cfg) = setup(&TRANSFER.replace(r#"["thin", "deep"]"#, r#"["thin", "nope"]"#));
    let msg = error_text("transfer", &cfg, &[]);
    assert!(msg.contains("transfer.pairs"), "{msg}");
    assert_eq!(obq("transfer", &cfg, &[]), 2);
}
