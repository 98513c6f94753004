use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;

use ltcmh::datagen::{generate, split, LongTailSpec};
use ltcmh::icae::AeTrace;
use ltcmh::meta::Variant;
use ltcmh::pipeline::{self, sub_seed, RunConfig};
use ltcmh::retrieval::{evaluate_codes, Direction, EvalReport};
use ltcmh::store::{
    self, load_checkpoint_phase, load_codes, load_dataset, save_checkpoint, save_codes, save_dataset, Checkpoint,
    CodeSet, HashState, Phase, ReportFormat,
};
use ltcmh::verify::{run_all, VerifyOptions};
use ltcmh::{Dataset, Modality};

use crate::args::{AblateArgs, CheckGradArgs, ConfigArgs, DirectionArg, EncodeArgs, EvalArgs, FormatArg, GenDataArgs, TrainArgs};
use crate::Failure;

type CmdResult = Result<(), Failure>;

/// Written next to a command's artifacts so a run can be reproduced.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    output_dir: &'a Path,
    details: serde_json::Value,
}

fn write_run_manifest(out: &Path, command: &str, details: serde_json::Value) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(format!("run-{command}.json"));
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        output_dir: out,
        details,
    };
    store::save_json(&path, &manifest)?;
    Ok(path)
}

fn data_dir(out: &Path, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join("data"))
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let base = match &args.config {
        Some(path) => store::load_json::<RunConfig>(path).map_err(|e| match e {
            ltcmh::Error::Json { .. } => Failure::validation(e),
            other => other.into(),
        })?,
        None => RunConfig::default(),
    };
    let cfg = args.apply(base);
    cfg.validate()?;
    for w in cfg.stability_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn epoch_logger(label: &'static str, total: usize) -> impl FnMut(usize, f64) {
    let every = (total / 10).max(1);
    move |epoch, value| {
        if epoch % every == 0 || epoch == total {
            eprintln!("{label} epoch {epoch}/{total}: {value:.6}");
        }
    }
}

pub fn gen_data(out: &Path, a: GenDataArgs) -> CmdResult {
    let mut spec = LongTailSpec {
        num_labels: a.c,
        head_count: a.z1,
        raw_dim_x: a.raw_dim_x,
        raw_dim_y: a.raw_dim_y,
        shared_dim: a.shared_dim,
        private_dim: a.private_dim,
        noise_sigma: a.noise,
        exclusive_tail_fraction: a.exclusive_tail_fraction,
        labels_per_sample_max: a.labels_max,
        secondary_prob: a.secondary_prob,
        seed: a.seed,
        ..LongTailSpec::default()
    };
    spec = match a.mu {
        Some(mu) => LongTailSpec { mu, ..spec },
        None => spec.with_imbalance(a.imbalance.unwrap_or(50.0))?,
    };
    spec.validate()?;
    let dataset = split(generate(&spec)?, a.query_size, sub_seed(a.seed, 9))?;
    let dir = data_dir(out, &a.out);
    save_dataset(&dir, &dataset)?;

    let counts = dataset.label_counts();
    let (z1, zc) = (counts[0], counts[counts.len() - 1]);
    println!(
        "wrote {}: n = {}, c = {}, base = {}, query = {}",
        dir.display(),
        dataset.n(),
        dataset.num_labels(),
        dataset.base.len(),
        dataset.query.len()
    );
    println!("label counts {counts:?} (z1 = {z1}, zc = {zc}, IF = {:.3}, mu = {:.6})", z1 as f64 / zc as f64, spec.mu);
    write_run_manifest(
        out,
        "gen-data",
        json!({ "spec": spec, "query_size": a.query_size, "dataset": dir, "label_counts": counts }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct Traces<'a> {
    loss1: &'a AeTrace,
    loss2: &'a [f64],
}

pub fn train(out: &Path, a: TrainArgs) -> CmdResult {
    let cfg = resolve_config(&a.config)?;
    let data = data_dir(out, &a.data);
    let dataset = load_dataset(&data)?;
    let variant: Variant = a.variant.into();
    let ck_dir = out.join("checkpoints");

    let (icae, ae_trace, phase1) = match &a.resume {
        Some(dir) => {
            let ck = load_checkpoint_phase(dir, Phase::Ae)?;
            if ck.icae.code_bits() != cfg.code_bits {
                return Err(Failure::validation(anyhow!(
                    "checkpoint {} has k = {}, but the run asks for k = {}",
                    dir.display(),
                    ck.icae.code_bits(),
                    cfg.code_bits
                )));
            }
            eprintln!("phase 1 skipped: resuming from {}", dir.display());
            (ck.icae, ck.ae_trace, "resumed")
        }
        None => {
            let epochs = cfg.ae_config().max_epochs;
            let (icae, trace) = pipeline::train_phase1(&dataset, &cfg, epoch_logger("loss1", epochs))?;
            (icae, trace, "trained")
        }
    };
    let ae_dir = ck_dir.join("ae");
    if a.resume.is_none() {
        save_checkpoint(
            &ae_dir,
            &Checkpoint {
                config: cfg.clone(),
                icae: icae.clone(),
                ae_trace: ae_trace.clone(),
                hash: None,
            },
        )?;
    }

    let (model, hash_trace) = pipeline::train_phase2(&dataset, &icae, &cfg, variant)?;
    let hash_dir = ck_dir.join("hash");
    let ck = Checkpoint {
        config: cfg.clone(),
        icae,
        ae_trace,
        hash: Some(HashState {
            side: model.side.clone(),
            variant,
            base_codes: model.base_codes.clone(),
            trace: hash_trace,
        }),
    };
    save_checkpoint(&hash_dir, &ck)?;
    let hash = ck.hash.as_ref().expect("hash state was just set");
    let traces_path = out.join("traces.json");
    store::save_json(
        &traces_path,
        &Traces {
            loss1: &ck.ae_trace,
            loss2: &hash.trace.loss2,
        },
    )?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "variant {variant}: final Loss1 {:.6}, final Loss2 {:.6}",
        last(&ck.ae_trace.loss1),
        last(&hash.trace.loss2)
    );
    println!("checkpoints: {} (phase 1), {} (phase 2)", ae_dir.display(), hash_dir.display());
    write_run_manifest(
        out,
        "train",
        json!({
            "config": cfg,
            "dataset": data,
            "variant": variant,
            "phase1": phase1,
            "resume": a.resume,
            "checkpoints": { "ae": ae_dir, "hash": hash_dir },
            "traces": traces_path,
        }),
    )?;
    Ok(())
}

fn split_indices<'a>(dataset: &'a Dataset, split: &str) -> &'a [usize] {
    if split == "query" {
        &dataset.query
    } else {
        &dataset.base
    }
}

pub fn encode(out: &Path, a: EncodeArgs) -> CmdResult {
    let ck_dir = a.checkpoint.clone().unwrap_or_else(|| out.join("checkpoints").join("hash"));
    let ck = load_checkpoint_phase(&ck_dir, Phase::Hash)?;
    let model = ck.model()?;
    let data = data_dir(out, &a.data);
    let dataset = load_dataset(&data)?;
    let modality: Modality = a.modality.into();
    let split = a.split.name();
    let indices = split_indices(&dataset, split).to_vec();
    if indices.is_empty() {
        return Err(Failure::validation(anyhow!("the {split} split of {} is empty", data.display())));
    }
    let codes = model.encode_rows(&dataset, modality, &indices)?;
    let dir = a.out.clone().unwrap_or_else(|| out.join("codes"));
    let path = save_codes(
        &dir,
        &CodeSet {
            modality,
            split: split.to_string(),
            variant: model.variant,
            indices,
            codes,
        },
    )?;
    println!("wrote {} {split} codes to {}", modality.name(), path.display());
    write_run_manifest(
        out,
        "encode",
        json!({
            "checkpoint": ck_dir,
            "dataset": data,
            "modality": modality,
            "split": split,
            "codes": path,
        }),
    )?;
    Ok(())
}

fn directions(d: DirectionArg) -> Vec<Direction> {
    match d {
        DirectionArg::I2t => vec![Direction::ImageToText],
        DirectionArg::T2i => vec![Direction::TextToImage],
        DirectionArg::Both => Direction::BOTH.to_vec(),
    }
}

fn print_reports(reports: &[EvalReport]) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:<9} {:<4} {:>8} {:>8} {:>8} {:>8}", "variant", "dir", "MAP", "head", "tail", "queries");
    for r in reports {
        println!(
            "{:<9} {:<4} {:>8.4} {:>8} {:>8} {:>8}",
            r.variant,
            r.direction.tag(),
            r.map,
            fmt(r.head_map),
            fmt(r.tail_map),
            r.num_queries
        );
    }
}

fn write_reports(dir: &Path, stem: &str, reports: &[EvalReport], format: FormatArg) -> Result<Vec<PathBuf>, Failure> {
    let mut written = Vec::new();
    if matches!(format, FormatArg::Json | FormatArg::Both) {
        let p = dir.join(format!("{stem}.json"));
        store::emit_report(reports, ReportFormat::Json, &p)?;
        written.push(p);
    }
    if matches!(format, FormatArg::Csv | FormatArg::Both) {
        let p = dir.join(format!("{stem}.csv"));
        store::emit_report(reports, ReportFormat::Csv, &p)?;
        written.push(p);
    }
    Ok(written)
}

pub fn eval(out: &Path, a: EvalArgs) -> CmdResult {
    let codes_dir = a.codes.clone().unwrap_or_else(|| out.join("codes"));
    let data = data_dir(out, &a.data);
    let dataset = load_dataset(&data)?;
    let options = ltcmh::retrieval::EvalOptions {
        top_r: a.top_r,
        head_count: a.head_count,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for dir in directions(a.direction) {
        let qm = dir.query_modality();
        let query = load_codes(&codes_dir, qm, "query")?;
        let base = load_codes(&codes_dir, qm.other(), "base")?;
        if query.variant != base.variant {
            return Err(Failure::validation(anyhow!(
                "query codes come from {} but base codes from {}",
                query.variant,
                base.variant
            )));
        }
        for set in [&query, &base] {
            if let Some(&bad) = set.indices.iter().find(|&&i| i >= dataset.n()) {
                return Err(Failure::validation(anyhow!("code index {bad} is outside the dataset (n = {})", dataset.n())));
            }
        }
        let ql = dataset.labels.select_rows(&query.indices);
        let bl = dataset.labels.select_rows(&base.indices);
        reports.push(evaluate_codes(query.variant.tag(), dir, &query.codes, &ql, &base.codes, &bl, &options)?);
    }
    print_reports(&reports);
    let written = write_reports(&out.join("reports"), "eval", &reports, a.format)?;
    write_run_manifest(
        out,
        "eval",
        json!({ "codes": codes_dir, "dataset": data, "options": options, "reports": written }),
    )?;
    Ok(())
}

pub fn ablate(out: &Path, a: AblateArgs) -> CmdResult {
    let cfg = resolve_config(&a.config)?;
    let data = data_dir(out, &a.data);
    let dataset = load_dataset(&data)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|&v| v.into()).collect()
    };
    let run = pipeline::ablate(&dataset, &cfg, &variants)?;
    let reports: Vec<EvalReport> = run.runs.iter().flat_map(|r| r.reports.iter().cloned()).collect();
    print_reports(&reports);
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:<9} {:>8} {:>8} {:>8}", "variant", "mean", "head", "tail");
    for r in &run.runs {
        println!(
            "{:<9} {:>8.4} {:>8} {:>8}",
            r.variant.tag(),
            r.mean_map(),
            fmt(r.mean_head_map()),
            fmt(r.mean_tail_map())
        );
    }
    let dir = out.join("reports");
    let mut written = write_reports(&dir, "ablation", &reports, FormatArg::Both)?;
    let run_path = dir.join("ablation-run.json");
    store::save_json(&run_path, &run)?;
    written.push(run_path);
    write_run_manifest(
        out,
        "ablate",
        json!({ "config": cfg, "dataset": data, "variants": variants, "reports": written }),
    )?;
    Ok(())
}

pub fn check_grad(out: &Path, a: CheckGradArgs) -> CmdResult {
    let reports = run_all(VerifyOptions {
        seed: a.seed,
        inject_bug: a.inject_bug,
    })?;
    for r in &reports {
        println!(
            "{} {:<15} instances {:>3}  worst {:.3e}  tolerance {:.0e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.instances,
            r.worst,
            r.tolerance
        );
    }
    let path = out.join("check-grad.json");
    store::save_json(&path, &reports)?;
    write_run_manifest(
        out,
        "check-grad",
        json!({ "seed": a.seed, "inject_bug": a.inject_bug, "summary": path }),
    )?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::verification(anyhow!("{failed} of {} suites failed", reports.len())));
    }
    println!("all {} suites passed", reports.len());
    Ok(())
}
