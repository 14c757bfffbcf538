//! `moblab` command-line interface: one binary, one subcommand per
//! pipeline stage. All artifacts are written atomically; exit codes are
//! 1 for configuration errors, 2 for data errors, 3 for internal
//! invariant violations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate_detections, label_quality, EvalReport, IouMode};
use crate::io;
use crate::pipeline;
use crate::selftrain::{self, BaselineDetector, RoundMetrics, SelfTrainState};
use crate::sim::{self, presets};
use crate::types::{LabelSet, Traversal};

#[derive(Debug, Parser)]
#[command(
    name = "moblab",
    version,
    about = "Mobile-object 3D box labels from unlabeled multi-traversal LiDAR"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON pipeline configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads shared by all parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-traversal benchmark dataset.
    Sim(SimArgs),
    /// Compute PP-score sidecars for every scan of a dataset.
    Ppscore(PpscoreArgs),
    /// Generate seed labels from scans and PP sidecars.
    Seed(SeedArgs),
    /// Run the self-training loop from seed labels.
    Selftrain(SelftrainArgs),
    /// Evaluate labels or detections against ground truth.
    Eval(EvalArgs),
    /// Export plot-ready CSV data (PP histograms, per-round curves).
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Benchmark preset: separation, parked, or dense.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// World specification JSON (alternative to --preset).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PpscoreArgs {
    /// Dataset directory (as written by `sim`).
    #[arg(long)]
    data: PathBuf,
    /// Sidecar output directory [default: <data>/ppf].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Counting radius in meters.
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    #[arg(long)]
    data: PathBuf,
    /// PP sidecar directory [default: <data>/ppf].
    #[arg(long)]
    ppf: Option<PathBuf>,
    /// Output JSON-lines seed label file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rprime: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct SelftrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Seed label file (JSON lines).
    #[arg(long)]
    seeds: PathBuf,
    /// Output directory; each round writes round_<j>/labels.jsonl and
    /// round_<j>/metrics.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    /// Disable PP-score filtering of pseudo-labels between rounds.
    #[arg(long)]
    no_pp_filter: bool,
    /// Detector backend.
    #[arg(long, default_value = "baseline")]
    detector: String,
    /// PP sidecar directory [default: <data>/ppf].
    #[arg(long)]
    ppf: Option<PathBuf>,
    /// Ground-truth labels for per-round metrics
    /// [default: <data>/gt_labels.jsonl when present].
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Labels or detections under evaluation (JSON lines).
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth labels (JSON lines).
    #[arg(long)]
    gt: PathBuf,
    /// Metrics JSON output.
    #[arg(long)]
    out: PathBuf,
    /// IoU mode: bev or 3d.
    #[arg(long)]
    mode: Option<String>,
    /// IoU threshold.
    #[arg(long)]
    iou: Option<f64>,
    /// Optional CSV dump of the pooled PR curve.
    #[arg(long)]
    pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotdataArgs {
    #[arg(long)]
    data: PathBuf,
    /// PP sidecar directory [default: <data>/ppf].
    #[arg(long)]
    ppf: Option<PathBuf>,
    /// Self-training output directory to summarize into round curves.
    #[arg(long)]
    rounds_dir: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: PathBuf,
}

/// Binary entry point: parse `std::env::args`, run, map errors to exit
/// codes.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Test entry point: run with explicit arguments.
pub fn run_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        // The global pool can only be sized once per process; a repeat
        // configuration keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    cfg.validate()?;
    match cli.command {
        Command::Sim(args) => cmd_sim(args, &cfg),
        Command::Ppscore(args) => cmd_ppscore(args, &cfg),
        Command::Seed(args) => cmd_seed(args, &cfg),
        Command::Selftrain(args) => cmd_selftrain(args, &cfg),
        Command::Eval(args) => cmd_eval(args, &cfg),
        Command::Plotdata(args) => cmd_plotdata(args, &cfg),
    }
}

fn cmd_sim(args: SimArgs, _cfg: &PipelineConfig) -> Result<()> {
    let spec = match (&args.preset, &args.spec) {
        (Some(preset), None) => presets::make_benchmark(preset, args.seed)?,
        (None, Some(path)) => {
            let text = io::read_to_string(path)?;
            let mut spec: sim::WorldSpec =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
            spec.seed = args.seed;
            spec
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --preset or --spec is required".into(),
            ))
        }
    };
    let output = sim::simulate(&spec)?;
    sim::write_dataset(&args.out, &output)?;
    let scans: usize = output.traversals.iter().map(|t| t.scans.len()).sum();
    let points: usize = output
        .traversals
        .iter()
        .flat_map(|t| t.scans.iter())
        .map(|s| s.points.len())
        .sum();
    println!(
        "sim: {} traversals, {scans} scans, {points} points -> {}",
        output.traversals.len(),
        args.out.display()
    );
    Ok(())
}

fn load_traversals(data: &Path) -> Result<Vec<Traversal>> {
    let (traversals, _) = sim::load_dataset(data)?;
    Ok(traversals)
}

fn ppf_dir(data: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| data.join("ppf"))
}

fn cmd_ppscore(args: PpscoreArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(r) = args.r {
        cfg.r = r;
        cfg.validate()?;
    }
    let traversals = load_traversals(&args.data)?;
    let fields = pipeline::compute_ppfields(&traversals, &cfg, None)?;
    let out = ppf_dir(&args.data, &args.out);
    pipeline::write_ppfields(&out, &fields)?;
    let total: usize = traversals.iter().map(|t| t.scans.len()).sum();
    println!(
        "ppscore: {} of {total} scans have multi-traversal coverage -> {}",
        fields.len(),
        out.display()
    );
    Ok(())
}

fn cmd_seed(args: SeedArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    apply(args.alpha, &mut cfg.seed_gen.filter.alpha);
    apply(args.gamma, &mut cfg.seed_gen.filter.gamma);
    apply(args.k, &mut cfg.seed_gen.k);
    apply(args.rprime, &mut cfg.seed_gen.r_prime);
    apply(args.eps, &mut cfg.seed_gen.eps);
    apply(args.min_samples, &mut cfg.seed_gen.min_samples);
    cfg.validate()?;
    let traversals = load_traversals(&args.data)?;
    let fields = pipeline::load_ppfields(&ppf_dir(&args.data, &args.ppf), &traversals)?;
    if fields.is_empty() {
        return Err(Error::Validation(
            "no PP sidecars found; run `moblab ppscore` first".into(),
        ));
    }
    let seeds = pipeline::generate_all_seeds(&traversals, &fields, &cfg)?;
    io::write_labels(&args.out, &seeds)?;
    let boxes: usize = seeds.iter().map(|s| s.boxes.len()).sum();
    println!(
        "seed: {boxes} boxes over {} frames -> {}",
        seeds.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_selftrain(args: SelftrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    apply(args.rounds, &mut cfg.selftrain.rounds);
    if args.no_pp_filter {
        cfg.selftrain.pp_filter = false;
    }
    if args.detector != "baseline" {
        return Err(Error::Config(format!(
            "unknown detector `{}` (available: baseline)",
            args.detector
        )));
    }
    let traversals = load_traversals(&args.data)?;
    let ppfields = pipeline::load_ppfields(&ppf_dir(&args.data, &args.ppf), &traversals)?;
    let seeds = io::read_labels(&args.seeds)?;
    let gt = match &args.gt {
        Some(path) => Some(io::read_labels(path)?),
        None => {
            let default = args.data.join("gt_labels.jsonl");
            if default.exists() {
                Some(io::read_labels(&default)?)
            } else {
                None
            }
        }
    };
    let pool = pipeline::flatten_pool(&traversals);
    let detector = BaselineDetector {
        score_threshold: cfg.detector.score_threshold,
        cluster_eps: cfg.detector.cluster_eps,
        cluster_min_samples: cfg.detector.cluster_min_samples,
        ground: cfg.detector.ground,
    };
    let state = selftrain::self_train_loop(
        &pool,
        &seeds,
        &detector,
        &ppfields,
        gt.as_deref(),
        &cfg.selftrain,
    )?;
    write_selftrain_rounds(&args.out, &state)?;
    for record in &state.rounds {
        let boxes: usize = record.labels.iter().map(|l| l.boxes.len()).sum();
        match &record.metrics {
            Some(m) => println!(
                "round {}: {boxes} boxes, precision {} recall {}",
                record.round,
                fmt_opt(m.precision),
                fmt_opt(m.recall)
            ),
            None => println!("round {}: {boxes} boxes", record.round),
        }
    }
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RoundMetricsFile {
    round: usize,
    #[serde(flatten)]
    metrics: RoundMetrics,
}

fn write_selftrain_rounds(out: &Path, state: &SelfTrainState) -> Result<()> {
    for record in &state.rounds {
        let dir = out.join(format!("round_{}", record.round));
        io::write_labels(dir.join("labels.jsonl"), &record.labels)?;
        let file = RoundMetricsFile {
            round: record.round,
            metrics: record.metrics.unwrap_or_default(),
        };
        let json = serde_json::to_vec_pretty(&file)
            .map_err(|e| Error::Internal(format!("metrics serialization failed: {e}")))?;
        io::atomic_write(&dir.join("metrics.json"), &json)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut eval_cfg = cfg.eval.clone();
    if let Some(mode) = &args.mode {
        eval_cfg.mode = match mode.as_str() {
            "bev" => IouMode::Bev,
            "3d" => IouMode::ThreeD,
            other => {
                return Err(Error::Config(format!(
                    "unknown IoU mode `{other}` (expected bev or 3d)"
                )))
            }
        };
    }
    apply(args.iou, &mut eval_cfg.iou_threshold);
    eval_cfg.validate()?;
    let labels = io::read_labels(&args.labels)?;
    let gt = io::read_labels(&args.gt)?;
    let (mut report, curve) = evaluate_detections(&labels, &gt, &eval_cfg)?;
    let quality = label_quality(&labels, &gt, &eval_cfg)?;
    for (bucket, metrics) in quality.buckets {
        let entry = report.buckets.entry(bucket).or_default();
        entry.precision = metrics.precision;
        entry.recall = metrics.recall;
    }
    write_report(&args.out, &report)?;
    if let Some(pr_csv) = &args.pr_csv {
        let mut csv = String::from("recall,precision\n");
        for (recall, precision) in &curve {
            csv.push_str(&format!("{recall},{precision}\n"));
        }
        io::atomic_write(pr_csv, csv.as_bytes())?;
    }
    for (bucket, m) in &report.buckets {
        println!(
            "{bucket}: AP {} precision {} recall {}",
            fmt_opt(m.ap),
            fmt_opt(m.precision),
            fmt_opt(m.recall)
        );
    }
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report)
        .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))?;
    io::atomic_write(path, &json)
}

fn cmd_plotdata(args: PlotdataArgs, _cfg: &PipelineConfig) -> Result<()> {
    let traversals = load_traversals(&args.data)?;
    let fields = pipeline::load_ppfields(&ppf_dir(&args.data, &args.ppf), &traversals)?;
    let gt_path = args.data.join("gt_labels.jsonl");
    let gt = if gt_path.exists() {
        io::read_labels(&gt_path)?
    } else {
        Vec::new()
    };
    let gt_by_frame: BTreeMap<&str, &LabelSet> = sim::gt_by_frame(&gt);

    // PP-score histogram, split by membership in a ground-truth box.
    const BINS: usize = 20;
    let mut mobile = [0u64; BINS];
    let mut background = [0u64; BINS];
    for traversal in &traversals {
        for scan in &traversal.scans {
            let Some(tau) = fields.get(&scan.scan_id) else {
                continue;
            };
            let boxes = gt_by_frame
                .get(scan.scan_id.as_str())
                .map(|ls| ls.boxes.as_slice())
                .unwrap_or(&[]);
            for (p, &t) in scan.points.iter().zip(tau) {
                let bin = ((t as f64 * BINS as f64) as usize).min(BINS - 1);
                if boxes.iter().any(|b| b.contains(p.xyz())) {
                    mobile[bin] += 1;
                } else {
                    background[bin] += 1;
                }
            }
        }
    }
    let mut csv = String::from("bin_lo,bin_hi,mobile,background\n");
    for (i, (m, b)) in mobile.iter().zip(&background).enumerate() {
        csv.push_str(&format!(
            "{},{},{m},{b}\n",
            i as f64 / BINS as f64,
            (i + 1) as f64 / BINS as f64
        ));
    }
    io::atomic_write(&args.out.join("pp_hist.csv"), csv.as_bytes())?;

    // Per-round metric curves from a selftrain output directory.
    if let Some(rounds_dir) = &args.rounds_dir {
        let mut rounds: Vec<RoundMetricsFile> = Vec::new();
        for entry in std::fs::read_dir(rounds_dir).map_err(|e| Error::io(rounds_dir, e))? {
            let entry = entry.map_err(|e| Error::io(rounds_dir, e))?;
            let path = entry.path().join("metrics.json");
            if path.exists() {
                let parsed: RoundMetricsFile = serde_json::from_str(&io::read_to_string(&path)?)
                    .map_err(|e| Error::Parse {
                        path,
                        line: None,
                        msg: e.to_string(),
                    })?;
                rounds.push(parsed);
            }
        }
        rounds.sort_by_key(|r| r.round);
        let mut csv =
            String::from("round,precision,recall,raw_precision,raw_recall,boxes,raw_boxes\n");
        for r in &rounds {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.round,
                fmt_opt(r.metrics.precision),
                fmt_opt(r.metrics.recall),
                fmt_opt(r.metrics.raw_precision),
                fmt_opt(r.metrics.raw_recall),
                r.metrics.box_count,
                r.metrics.raw_box_count
            ));
        }
        io::atomic_write(&args.out.join("rounds.csv"), csv.as_bytes())?;
    }
    println!("plotdata -> {}", args.out.display());
    Ok(())
}

fn apply<T>(value: Option<T>, slot: &mut T) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".into(),
    }
}
