use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cliffordm::backbone::{
    load_checkpoint, profile, PUBLISHED_FLOPS, PUBLISHED_PARAMS, PUBLISHED_PARAMS_NO_ENERGY,
};
use cliffordm::data::{parse_manifest, patient_split, synth_generate, Dataset, Split, SynthSpec};
use cliffordm::gradcheck_suite::{self, Scope};
use cliffordm::kv::parse_kv;
use cliffordm::metrics::evaluate;
use cliffordm::trainer::{score_split, train, RunConfig};

mod output;
use output::Staging;

#[derive(Parser)]
#[command(name = "cliffordm", version, about = "Train, evaluate and profile the Clifford-M backbone")]
struct Cli {
    /// Worker threads (default: all cores). Recorded in reports.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` run config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train with the full protocol; writes checkpoints, history and header.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Manifest CSV, or a directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of patients assigned to training.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint on one split; writes metrics.json and scores.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, val or all.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        /// Split seed; defaults to the seed in the run's header.txt, else 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Per-component parameter and FLOP table.
    Profile {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Batch-1 latency and rolling-kernel equivalence.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Patient-level stratified split of a manifest.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate the synthetic eight-label dataset.
    Synth {
        #[arg(long, default_value_t = 800)]
        patients: usize,
        #[arg(long, default_value_t = 112)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference gradient checks in f64.
    Gradcheck {
        /// ops, blocks, model or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn run_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_kv_over(RunConfig::default(), &text, p)?
        }
        None => RunConfig::default(),
    };
    for s in &args.sets {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn threads() -> usize {
    rayon::current_num_threads()
}

fn cmd_train(cfg: &ConfigArgs, data: &Path, out: &Path, ratio: f64, force: bool) -> Result<()> {
    let cfg = run_config(cfg)?;
    let stage = Staging::new(out, force)?;
    let dataset = Dataset::load(&manifest_path(data), ratio, cfg.seed)?;
    log::info!("{} images, threads {}", dataset.samples.len(), threads());
    let outcome = train::<f32>(&cfg, &dataset, Some(stage.path()))?;
    let dest = stage.commit()?;
    match (outcome.best_epoch, &outcome.best_report) {
        (Some(e), Some(r)) => println!(
            "best epoch {e}: val macro AUC {:.4}, F1opt {:.4}",
            r.macro_auc.unwrap_or(f64::NAN),
            r.macro_f1opt.unwrap_or(f64::NAN)
        ),
        _ => println!("no epoch produced a valid validation AUC"),
    }
    println!("wrote {}", dest.display());
    Ok(())
}

/// Seed recorded in `header.txt` next to a checkpoint, if any.
fn header_seed(checkpoint: &Path) -> Result<Option<u64>> {
    let Some(header) = checkpoint.parent().map(|d| d.join("header.txt")).filter(|p| p.exists()) else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(&header)?;
    let map = parse_kv(&text, &header)?;
    map.get("seed").map(|s| s.parse().context("seed in header.txt")).transpose()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    ratio: f64,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<()> {
    let seed = match seed {
        Some(s) => s,
        None => header_seed(checkpoint)?.unwrap_or(0),
    };
    let (model, params) = load_checkpoint::<f32>(checkpoint)?;
    let dataset = Dataset::load(&manifest_path(data), ratio, seed)?;
    if dataset.num_classes != model.cfg.num_classes {
        bail!("manifest has {} labels, checkpoint {}", dataset.num_classes, model.cfg.num_classes);
    }
    let idx = match split {
        "all" => (0..dataset.samples.len()).collect(),
        s => dataset.indices(Split::parse(s)?),
    };
    if idx.is_empty() {
        bail!("split {split:?} is empty");
    }
    let stage = Staging::new(out, force)?;
    let batch = score_split(&model, &params, &dataset, &idx, model.cfg.input_size)?;
    let report = evaluate(&batch);
    stage.write("metrics.json", serde_json::to_string_pretty(&report)?)?;
    let mut csv = String::from("patient_id,eye");
    for c in &report.per_class {
        csv.push_str(&format!(",{}", c.code));
    }
    csv.push('\n');
    for (row, &i) in idx.iter().enumerate() {
        let s = &dataset.samples[i];
        csv.push_str(&format!("{},{}", s.patient_id, s.eye.as_str()));
        for c in 0..batch.classes() {
            csv.push_str(&format!(",{}", batch.scores(c)[row]));
        }
        csv.push('\n');
    }
    stage.write("scores.csv", csv)?;
    let dest = stage.commit()?;
    println!(
        "{} samples: macro AUC {:.4}, F1opt {:.4}, F1@0.5 {:.4} ({} degenerate classes)",
        report.num_samples,
        report.macro_auc.unwrap_or(f64::NAN),
        report.macro_f1opt.unwrap_or(f64::NAN),
        report.macro_f1_at_half.unwrap_or(f64::NAN),
        report.degenerate_classes
    );
    println!("wrote {}", dest.display());
    Ok(())
}

fn pct(value: f64, reference: f64) -> String {
    format!("{:+.2}%", 100.0 * (value - reference) / reference)
}

fn cmd_profile(cfg: &ConfigArgs, out: Option<&Path>, force: bool) -> Result<()> {
    let mcfg = run_config(cfg)?.model_config();
    let p = profile(&mcfg, mcfg.input_size)?;
    println!("{:<12} {:>12} {:>16}", "component", "params", "flops");
    for c in p.components() {
        println!("{:<12} {:>12} {:>16}", c.name, c.params, c.flops);
    }
    let (params, flops) = (p.total_params(), p.total_flops());
    println!("{:<12} {:>12} {:>16}", "total", params, flops);
    let ref_params = if mcfg.use_energy { PUBLISHED_PARAMS } else { PUBLISHED_PARAMS_NO_ENERGY };
    println!("params vs published {ref_params}: {}", pct(params as f64, ref_params as f64));
    println!("flops at {} vs published {PUBLISHED_FLOPS} (448 px): {}", mcfg.input_size, pct(flops as f64, PUBLISHED_FLOPS as f64));
    if let Some(out) = out {
        let stage = Staging::new(out, force)?;
        stage.write("profile.csv", p.to_csv())?;
        println!("wrote {}", stage.commit()?.display());
    }
    Ok(())
}

fn cmd_bench(cfg: &ConfigArgs, repeats: usize, warmup: usize, out: Option<&Path>, force: bool) -> Result<()> {
    let mcfg = run_config(cfg)?.model_config();
    let r = cliffordm::bench::bench(&mcfg, repeats, warmup)?;
    println!(
        "params {}  threads {}  mean {:.2} ms  P90 {:.2} ms  throughput {:.2} img/s",
        r.params, r.threads, r.latency.mean_ms, r.latency.p90_ms, r.latency.throughput_img_s
    );
    println!(
        "rolling kernel {:?}: naive {:.3} ms, optimized {:.3} ms, max |diff| {:.2e} ({})",
        r.kernel.shape,
        r.kernel.naive_ms,
        r.kernel.optimized_ms,
        r.kernel.max_abs_diff,
        if r.kernel.equivalent { "equivalent" } else { "MISMATCH" }
    );
    println!(
        "published reference (context only, {} threads): mean {} ms, P90 {} ms, {} img/s",
        r.published_reference.threads, r.published_reference.mean_ms, r.published_reference.p90_ms, r.published_reference.throughput_img_s
    );
    if let Some(out) = out {
        let stage = Staging::new(out, force)?;
        stage.write("bench.json", serde_json::to_string_pretty(&r)?)?;
        println!("wrote {}", stage.commit()?.display());
    }
    if !r.kernel.equivalent {
        bail!("optimized rolling kernel disagrees with the naive loop");
    }
    Ok(())
}

fn cmd_split(data: &Path, ratio: f64, seed: u64, out: &Path, force: bool) -> Result<()> {
    let records = parse_manifest(manifest_path(data))?;
    let split = patient_split(&records, ratio, seed)?;
    let stage = Staging::new(out, force)?;
    stage.write("train.txt", split.train.iter().map(|p| format!("{p}\n")).collect::<String>())?;
    stage.write("val.txt", split.val.iter().map(|p| format!("{p}\n")).collect::<String>())?;
    let mut csv = String::from("patient_id,split\n");
    for r in &records {
        let tag = if split.val.binary_search(&r.patient_id).is_ok() { Split::Val } else { Split::Train };
        csv.push_str(&format!("{},{}\n", r.patient_id, tag.as_str()));
    }
    stage.write("split.csv", csv)?;
    let dest = stage.commit()?;
    println!("{} train / {} val patients -> {}", split.train.len(), split.val.len(), dest.display());
    Ok(())
}

fn cmd_synth(patients: usize, size: usize, seed: u64, out: &Path, force: bool) -> Result<()> {
    let stage = Staging::new(out, force)?;
    let records = synth_generate(&SynthSpec::new(patients, size, seed), stage.path())?;
    let images: usize = records.iter().map(|r| r.eyes().count()).sum();
    let dest = stage.commit()?;
    println!("{patients} patients, {images} images of {size}x{size} -> {}", dest.display());
    Ok(())
}

fn cmd_gradcheck(scope: &str, out: Option<&Path>, force: bool) -> Result<()> {
    let scopes = match scope {
        "all" => vec![Scope::Ops, Scope::Blocks, Scope::Model],
        s => vec![Scope::parse(s)?],
    };
    let mut reports = Vec::new();
    for s in scopes {
        reports.extend(gradcheck_suite::run(s)?);
    }
    for r in &reports {
        println!("{:<24} {} max rel err {:.3e} (tol {:.0e})", r.op, if r.pass { "ok  " } else { "FAIL" }, r.worst(), r.tol);
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if let Some(out) = out {
        let stage = Staging::new(out, force)?;
        stage.write("gradcheck.json", serde_json::to_string_pretty(&reports)?)?;
        println!("wrote {}", stage.commit()?.display());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", reports.len());
    }
    println!("{} gradient checks passed", reports.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    match &cli.cmd {
        Cmd::Train { cfg, data, out, ratio, force } => cmd_train(cfg, data, out, *ratio, *force),
        Cmd::Eval { checkpoint, data, split, ratio, seed, out, force } => {
            cmd_eval(checkpoint, data, split, *ratio, *seed, out, *force)
        }
        Cmd::Profile { cfg, out, force } => cmd_profile(cfg, out.as_deref(), *force),
        Cmd::Bench { cfg, repeats, warmup, out, force } => cmd_bench(cfg, *repeats, *warmup, out.as_deref(), *force),
        Cmd::Split { data, ratio, seed, out, force } => cmd_split(data, *ratio, *seed, out, *force),
        Cmd::Synth { patients, size, seed, out, force } => cmd_synth(*patients, *size, *seed, out, *force),
        Cmd::Gradcheck { scope, out, force } => cmd_gradcheck(scope, out.as_deref(), *force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
