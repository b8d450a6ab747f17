//! End-to-end runs of the `maker` binary.

use std::path::Path;
use std::process::{Command, Output};

use maker_core::data::store::load_store;
use maker_core::ksl_trainer::LogRecord;

fn maker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maker")).args(args).output().unwrap()
}

fn stdout_path(out: &Output) -> String {
    let s = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(s.lines().count(), 1, "{s}");
    s.trim().to_string()
}

const TINY: &str = "\
# miniature run
h = 8
p = 4
patch_len = 4
patch_stride = 4
d_model = 4
enc_layers = 1
enc_heads = 2
hidden_dim = 6
prototypes = 3
dec_width = 8
dec_layers = 1
dec_heads = 2
epochs = 2
batch_size = 8
synth_count = 10
synth_len = 20
stride = 2
";

#[test]
fn synth_writes_a_canonical_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = maker(&["synth", "--kind", "straight", "--n", "48", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let path = stdout_path(&o);
    let trajs = load_store(Path::new(&path)).unwrap();
    assert_eq!(trajs.len(), 1);
    assert_eq!(trajs[0].len(), 48);
}

#[test]
fn configuration_errors_exit_with_2() {
    let o = maker(&["train", "--config", "missing.yaml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.yaml"));

    let o = maker(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "use_llm = false\n").unwrap();
    let o = maker(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = maker(&["ablate", "--variants", "full,bogus", "--out", dir.path().join("abl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("abl").exists(), "no variant may train before validation");
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = maker(&["evaluate", "--checkpoint", dir.path().join("x.ckpt").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    // A missing checkpoint is a missing path, hence a configuration error.
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = maker(&["evaluate", "--checkpoint", junk.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_reproduces_the_logged_validation_mae() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let (cfg, run) = (cfg.to_str().unwrap(), run.to_str().unwrap());
    let o = maker(&["train", "--config", cfg, "--seed", "5", "--out", run]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_path(&o), run);
    for f in ["config.txt", "run.json", "log.ndjson", "metrics.json", "metrics.csv", "checkpoint_best.ckpt", "checkpoint_final.ckpt"] {
        assert!(Path::new(run).join(f).is_file(), "{f}");
    }
    let info: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(run).join("run.json")).unwrap()).unwrap();
    assert_eq!(info["seed"], 5);
    assert_eq!(info["config_hash"].as_str().unwrap().len(), 64);

    let log = std::fs::read_to_string(Path::new(run).join("log.ndjson")).unwrap();
    let logged = log
        .lines()
        .filter_map(|l| match serde_json::from_str::<LogRecord>(l).unwrap() {
            LogRecord::Epoch(e) => e.val_mae_deg,
            _ => None,
        })
        .next_back()
        .unwrap();

    let o = maker(&["evaluate", "--config", cfg, "--seed", "5", "--out", run, "--split", "val", "--checkpoint", "final"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(stdout_path(&o)).unwrap()).unwrap();
    let bands = report["bands"].as_array().unwrap();
    let overall = bands.last().unwrap()["mae_deg"].as_f64().unwrap();
    assert_eq!(overall, logged);

    let o = maker(&["stratify", "--config", cfg, "--seed", "5", "--out", run, "--split", "val"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cells: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(stdout_path(&o)).unwrap()).unwrap();
    let total: u64 = cells.as_array().unwrap().iter().filter(|c| c["axis"] == "spatial").map(|c| c["count"].as_u64().unwrap()).sum();
    assert_eq!(total, report["samples"].as_u64().unwrap());

    // Same inputs, same metrics, byte for byte.
    let again = dir.path().join("again");
    let o = maker(&["train", "--config", cfg, "--seed", "5", "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let a = std::fs::read(Path::new(run).join("metrics.json")).unwrap();
    let b = std::fs::read(again.join("metrics.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ingest_segments_a_csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ais.csv");
    let mut text = String::from("MMSI,BaseDateTime,LAT,LON,SOG,COG\n");
    for i in 0..10 {
        text.push_str(&format!("111,2024-01-01T00:{:02}:00,40.0,{},5.0,90.0\n", i * 3, -70.0 + 0.01 * i as f64));
    }
    text.push_str("222,2024-01-01T00:00:00,41.0,-71.0,3.0,10.0\n");
    text.push_str("222,2024-01-01T00:03:00,41.01,-71.0,3.0,10.0\n");
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("store.ndjson");
    let o = maker(&["ingest", "--input", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trajs = load_store(&out).unwrap();
    assert_eq!(trajs.len(), 2);
    assert_eq!(trajs[0].len(), 10);
}
