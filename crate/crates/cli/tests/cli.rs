use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ltcmh::retrieval::{evaluate_codes, Direction, EvalOptions, EvalReport};
use ltcmh::store::{dataset_checksums, load_codes, load_dataset, read_reports};
use ltcmh::Modality;
use serde_json::Value;
use tempfile::TempDir;

const SMALL_DATA: &[&str] = &[
    "gen-data",
    "--c",
    "4",
    "--z1",
    "60",
    "--if",
    "5",
    "--raw-dim-x",
    "8",
    "--raw-dim-y",
    "6",
    "--shared-dim",
    "3",
    "--private-dim",
    "3",
    "--query-size",
    "15",
    "--exclusive-tail-fraction",
    "0.5",
    "--seed",
    "7",
];

fn ltcmh(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltcmh"))
        .args(args)
        .env("LTCMH_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ltcmh(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn trained(dir: &TempDir) -> &Path {
    let out = dir.path();
    ok(out, SMALL_DATA);
    ok(out, &["train", "--max-epochs", "1", "--bits", "8", "--batch-size", "16"]);
    out
}

fn zc_of(c: &str, z1: &str) -> u64 {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    ok(
        out,
        &["gen-data", "--c", c, "--z1", z1, "--if", "50", "--raw-dim-x", "4", "--raw-dim-y", "4", "--shared-dim", "2", "--private-dim", "2"],
    );
    let m = json(out.join("data/manifest.json"));
    let counts = m["zipf_counts"].as_array().unwrap();
    assert_eq!(counts[0].as_u64().unwrap(), z1.parse::<u64>().unwrap());
    counts.last().unwrap().as_u64().unwrap()
}

#[test]
fn gen_data_reproduces_the_long_tail_table_shapes() {
    assert_eq!(zc_of("24", "3000"), 60);
    assert_eq!(zc_of("21", "5000"), 100);
}

#[test]
fn gen_data_rejects_imbalance_of_one() {
    let dir = TempDir::new().unwrap();
    let o = ltcmh(dir.path(), &["gen-data", "--if", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn gen_data_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    ok(a.path(), SMALL_DATA);
    ok(b.path(), SMALL_DATA);
    let ca = dataset_checksums(a.path().join("data")).unwrap();
    let cb = dataset_checksums(b.path().join("data")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(
        fs::read(a.path().join("data/manifest.json")).unwrap(),
        fs::read(b.path().join("data/manifest.json")).unwrap()
    );
}

#[test]
fn train_smoke_writes_checkpoints_traces_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    assert!(out.join("checkpoints/ae/manifest.json").exists());
    assert!(out.join("checkpoints/hash/manifest.json").exists());
    let traces = json(out.join("traces.json"));
    assert_eq!(traces["loss1"]["loss1"].as_array().unwrap().len(), 1);
    assert_eq!(traces["loss2"].as_array().unwrap().len(), 1);
    let run = json(out.join("run-train.json"));
    assert_eq!(run["details"]["phase1"], "trained");
    assert_eq!(run["details"]["config"]["code_bits"], 8);
    assert_eq!(run["details"]["config"]["max_epochs"], 1);
}

#[test]
fn resume_skips_the_autoencoder_phase() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    let ae = out.join("checkpoints/ae");
    let before = fs::read(ae.join("manifest.json")).unwrap();
    let o = ltcmh(
        out,
        &["train", "--resume", ae.to_str().unwrap(), "--max-epochs", "2", "--bits", "8", "--batch-size", "16"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("phase 1 skipped"));
    assert!(!stderr.contains("loss1 epoch"));
    assert_eq!(fs::read(ae.join("manifest.json")).unwrap(), before);
    let run = json(out.join("run-train.json"));
    assert_eq!(run["details"]["phase1"], "resumed");
    let traces = json(out.join("traces.json"));
    assert_eq!(traces["loss1"]["loss1"].as_array().unwrap().len(), 1);
    assert_eq!(traces["loss2"].as_array().unwrap().len(), 2);
}

#[test]
fn resume_from_a_hash_checkpoint_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    let hash = out.join("checkpoints/hash");
    let o = ltcmh(out, &["train", "--resume", hash.to_str().unwrap(), "--bits", "8"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn encode_is_deterministic_and_bit_packed() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    ok(out, &["encode", "--modality", "image", "--split", "query"]);
    let first = fs::read(out.join("codes/image_query.bin")).unwrap();
    ok(out, &["encode", "--modality", "image", "--split", "query"]);
    let second = fs::read(out.join("codes/image_query.bin")).unwrap();
    assert_eq!(first, second);
    // 15 queries, 8 bits each, one byte per code
    assert_eq!(first.len(), 15);
    let set = load_codes(out.join("codes"), Modality::Image, "query").unwrap();
    assert_eq!(set.codes.len(), 15);
    assert_eq!(set.codes.bits(), 8);
}

#[test]
fn encode_rejects_unknown_modality() {
    let dir = TempDir::new().unwrap();
    let o = ltcmh(dir.path(), &["encode", "--modality", "audio"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn encode_needs_a_hash_checkpoint() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    let ae = out.join("checkpoints/ae");
    let o = ltcmh(out, &["encode", "--modality", "text", "--checkpoint", ae.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_emits_both_directions_matching_the_library() {
    let dir = TempDir::new().unwrap();
    let out = trained(&dir);
    for (m, s) in [("image", "query"), ("image", "base"), ("text", "query"), ("text", "base")] {
        ok(out, &["encode", "--modality", m, "--split", s]);
    }
    let stdout = ok(out, &["eval"]);
    assert!(stdout.contains("I2T") && stdout.contains("T2I"));
    let reports = read_reports(out.join("reports/eval.json")).unwrap();
    assert_eq!(reports.len(), 2);
    let csv = fs::read_to_string(out.join("reports/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let data = load_dataset(out.join("data")).unwrap();
    for r in &reports {
        assert_eq!(r.per_label_map.len(), 4);
        assert_eq!(r.label_order.len(), 4);
        let qm = r.direction.query_modality();
        let q = load_codes(out.join("codes"), qm, "query").unwrap();
        let b = load_codes(out.join("codes"), qm.other(), "base").unwrap();
        let lib: EvalReport = evaluate_codes(
            "full",
            r.direction,
            &q.codes,
            &data.labels.select_rows(&q.indices),
            &b.codes,
            &data.labels.select_rows(&b.indices),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(lib.map, r.map);
        assert_eq!(lib.per_label_map, r.per_label_map);
    }
    assert_eq!(reports[0].direction, Direction::ImageToText);
}

#[test]
fn eval_without_codes_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), SMALL_DATA);
    let o = ltcmh(dir.path(), &["eval"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_reports_all_six_variants() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    ok(out, SMALL_DATA);
    ok(out, &["ablate", "--max-epochs", "1", "--bits", "8", "--batch-size", "16"]);
    let reports = read_reports(out.join("reports/ablation.json")).unwrap();
    assert_eq!(reports.len(), 12);
    let mut tags: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    tags.dedup();
    assert_eq!(tags, ["full", "w/oC", "w/oI", "w/oIC", "w/oMetaI", "w/oMetaT"]);
    let csv = fs::read_to_string(out.join("reports/ablation.csv")).unwrap();
    let widths: Vec<usize> = csv.lines().map(|l| l.split(',').count()).collect();
    assert!(widths.iter().all(|&w| w == widths[0]));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    ok(out, SMALL_DATA);
    let cfg = out.join("cfg.json");
    fs::write(&cfg, r#"{"code_bits": 12, "alpha": 0.02, "max_epochs": 1, "batch_size": 16}"#).unwrap();
    ok(out, &["train", "--config", cfg.to_str().unwrap(), "--bits", "4"]);
    let c = &json(out.join("run-train.json"))["details"]["config"];
    assert_eq!(c["code_bits"], 4);
    assert_eq!(c["alpha"], 0.02);
    assert_eq!(c["beta"], 0.05);
    assert_eq!(c["max_epochs"], 1);
}

#[test]
fn unknown_config_field_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path();
    ok(out, SMALL_DATA);
    let cfg = out.join("cfg.json");
    fs::write(&cfg, r#"{"learning_rate": 0.1}"#).unwrap();
    let o = ltcmh(out, &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_grad_passes_and_injected_bug_fails() {
    let dir = TempDir::new().unwrap();
    let o = ltcmh(dir.path(), &["check-grad"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 7);
    let o = ltcmh(dir.path(), &["check-grad", "--inject-bug"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("FAIL").count(), 7);
}

#[test]
fn output_dir_flag_overrides_the_environment() {
    let (env_dir, flag_dir) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut args = SMALL_DATA.to_vec();
    let flag = flag_dir.path().to_str().unwrap().to_string();
    args.extend(["--output-dir", &flag]);
    ok(env_dir.path(), &args);
    assert!(flag_dir.path().join("data/manifest.json").exists());
    assert!(!env_dir.path().join("data").exists());
}
