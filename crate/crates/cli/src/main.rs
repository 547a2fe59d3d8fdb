//! Command-line surface: data generation, training, evaluation, ablations,
//! depth analysis, and the gradient-check harness.
//!
//! Exit codes: 0 success, 1 check failure (gradcheck) or runtime error,
//! 2 usage, 3 I/O.

mod manifest;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use selfprove_core::data::{self, Dataset};
use selfprove_core::encoding::Vocabulary;
use selfprove_core::eval::{self, DepthBucket, GcdRecipe};
use selfprove_core::model::{self, NeuralConfig, NeuralModel, SeqModel, TabularModel};
use selfprove_core::proof_system::BezoutVerifier;
use selfprove_core::training::{self, gradcheck, OptimizerKind, TrainArtifacts, TrainMode};
use std::path::{Path, PathBuf};
use std::time::Instant;

const EXIT_CHECK_FAILED: i32 = 1;
const EXIT_USAGE: i32 = 2;
const EXIT_IO: i32 = 3;

#[derive(Parser)]
#[command(
    name = "selfprove",
    version,
    about = "Train and evaluate models that prove their answers to a sound verifier (GCD with Bezout certificates)"
)]
struct Cli {
    /// Worker thread cap (falls back to SELFPROVE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an honest-transcript dataset.
    GenData(GenDataArgs),
    /// Train a model (transcript learning or RLVF).
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out inputs.
    Eval(EvalArgs),
    /// Multi-run ablations over annotation cutoffs or bases.
    Ablate(AblateArgs),
    /// Monte-Carlo Euclidean-depth histogram and cutoff ceilings.
    Depth(DepthArgs),
    /// Verify the gradient identities; nonzero exit on failure.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Base of representation (>= 2).
    #[arg(long, default_value_t = 210)]
    base: usize,
    /// Largest input value M.
    #[arg(long, default_value_t = 10_000)]
    max: i64,
    /// Number of records.
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    /// Annotation cutoff T.
    #[arg(long, default_value_t = 0)]
    cutoff: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// tl | tl-faithful | rlvf | sga
    #[arg(long)]
    mode: String,
    /// Train from a dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train from fresh samples instead of a fixed dataset.
    #[arg(long, default_value_t = false)]
    sampler: bool,
    /// Input bound M (sampler/RLVF modes; otherwise from the dataset).
    #[arg(long)]
    max: Option<i64>,
    /// Base (sampler/RLVF modes; otherwise from the dataset).
    #[arg(long)]
    base: Option<usize>,
    /// Annotation cutoff (sampler/RLVF modes; otherwise from the dataset).
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, default_value_t = 2_000)]
    iters: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Warm-start checkpoint (required in practice for RLVF).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// neural | tabular
    #[arg(long, default_value = "neural")]
    backend: String,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    mlp: usize,
    /// Tabular context order.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// sgd | adamw
    #[arg(long, default_value = "adamw")]
    optimizer: String,
    #[arg(long)]
    clip: Option<f64>,
    /// Held-out evaluation size (0 disables in-loop eval).
    #[arg(long, default_value_t = 1000)]
    eval_n: usize,
    /// Metrics cadence (0 = iters/100).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Keep a checkpoint at every metrics point.
    #[arg(long, default_value_t = false)]
    snapshots: bool,
    /// Output the average iterate instead of the last one.
    #[arg(long, default_value_t = false)]
    average: bool,
    /// Cosine learning-rate decay with warmup.
    #[arg(long, default_value_t = false)]
    cosine: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset whose input pairs the held-out set must avoid (also fixes
    /// max/base/cutoff).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max: Option<i64>,
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// annotation | base
    which: String,
    /// Comma-separated cutoffs (annotation mode).
    #[arg(long, default_value = "0,1,3")]
    cutoffs: String,
    /// Comma-separated bases (base mode).
    #[arg(long, default_value = "2,6,30,210")]
    bases: String,
    /// Comma-separated seeds, one run per seed.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[arg(long, default_value_t = 100)]
    max: i64,
    #[arg(long, default_value_t = 10)]
    base: usize,
    #[arg(long, default_value_t = 20_000)]
    n_train: usize,
    #[arg(long, default_value_t = 2_000)]
    iters: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    eval_n: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    mlp: usize,
    #[arg(long, default_value_t = 100_000)]
    depth_samples: usize,
    /// Train each cell from fresh samples instead of a fixed dataset.
    #[arg(long, default_value_t = false)]
    stream: bool,
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long, default_value_t = 10_000)]
    max: i64,
    /// Cutoffs to report P[depth <= T] for.
    #[arg(long, default_value = "1,2,3,5,8")]
    cutoffs: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "depth")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// tabular | neural
    #[arg(long, default_value = "tabular")]
    backend: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter points (tabular) or coordinates (neural) to check.
    #[arg(long, default_value_t = 20)]
    count: usize,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("SELFPROVE_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("selfprove: failed to configure {n} threads: {e}");
            std::process::exit(EXIT_USAGE);
        }
    }
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("selfprove: {err:#}");
            classify(&err)
        }
    };
    std::process::exit(code);
}

/// Map an error chain onto the exit-code contract.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<data::DataError>() {
            return match e {
                data::DataError::Io { .. } | data::DataError::Format { .. } => EXIT_IO,
                data::DataError::BadMax(_) => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            };
        }
        if let Some(e) = cause.downcast_ref::<model::ModelError>() {
            return match e {
                model::ModelError::Io { .. } | model::ModelError::BadCheckpoint { .. } => EXIT_IO,
                model::ModelError::BadDescriptor(_) => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            };
        }
        if let Some(e) = cause.downcast_ref::<training::TrainError>() {
            return match e {
                training::TrainError::Io { .. } => EXIT_IO,
                training::TrainError::Config(_) => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            };
        }
        if let Some(e) = cause.downcast_ref::<eval::EvalError>() {
            return match e {
                eval::EvalError::Io { .. } => EXIT_IO,
                _ => EXIT_CHECK_FAILED,
            };
        }
        if let Some(e) = cause.downcast_ref::<selfprove_core::encoding::EncodingError>() {
            return match e {
                selfprove_core::encoding::EncodingError::BaseTooSmall(_) => EXIT_USAGE,
                _ => EXIT_CHECK_FAILED,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_CHECK_FAILED
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Depth(args) => cmd_depth(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("bad {what} entry: {p}"))))
        .collect()
}

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    if args.base < 2 {
        return Err(usage(format!("base must be >= 2, got {}", args.base)));
    }
    if args.max < 1 {
        return Err(usage(format!("max must be >= 1, got {}", args.max)));
    }
    if args.n < 1 {
        return Err(usage("n must be >= 1"));
    }
    let started = Instant::now();
    ensure_dir(&args.out)?;
    let dataset = data::generate_dataset(args.max, args.base, args.cutoff, args.n, args.seed)?;
    let ds_path = args.out.join("dataset.txt");
    let vocab_path = args.out.join("vocab.txt");
    dataset.save(&ds_path, &vocab_path)?;
    manifest::write(
        &args.out,
        "gen-data",
        serde_json::json!({
            "base": args.base,
            "max": args.max,
            "n": args.n,
            "cutoff": args.cutoff,
            "seed": args.seed,
        }),
        &[args.seed],
        &[],
        &[ds_path.clone(), vocab_path.clone()],
        started.elapsed(),
    )?;
    println!(
        "wrote {} records (len {}) to {}",
        dataset.records.len(),
        dataset.header.len,
        ds_path.display()
    );
    Ok(0)
}

fn parse_optimizer(name: &str) -> Result<OptimizerKind> {
    match name {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adamw" => Ok(OptimizerKind::adamw_default()),
        other => Err(usage(format!("unknown optimizer: {other} (expected sgd|adamw)"))),
    }
}

struct DataParams {
    max: i64,
    base: usize,
    cutoff: usize,
    dataset: Option<Dataset>,
}

impl TrainArgs {
    /// Resolve max/base/cutoff (and the dataset, when given) from flags.
    fn data_params(&self) -> Result<DataParams> {
        if let Some(path) = &self.data {
            let dataset = Dataset::load(path)?;
            Ok(DataParams {
                max: dataset.header.max,
                base: dataset.header.base,
                cutoff: dataset.header.cutoff,
                dataset: Some(dataset),
            })
        } else {
            let max = self.max.ok_or_else(|| usage("--max is required without --data"))?;
            let base = self.base.ok_or_else(|| usage("--base is required without --data"))?;
            let cutoff = self.cutoff.unwrap_or(0);
            if base < 2 {
                return Err(usage(format!("base must be >= 2, got {base}")));
            }
            if max < 1 {
                return Err(usage(format!("max must be >= 1, got {max}")));
            }
            Ok(DataParams { max, base, cutoff, dataset: None })
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let started = Instant::now();
    let mode = TrainMode::parse(&args.mode)
        .ok_or_else(|| usage(format!("unknown mode: {} (expected tl|tl-faithful|rlvf|sga)", args.mode)))?;
    let optimizer = parse_optimizer(&args.optimizer)?;
    if matches!(mode, TrainMode::Rlvf) && args.init.is_none() {
        eprintln!(
            "warning: RLVF without --init starts cold; with near-zero verifiability almost no \
             rollout is accepted and learning will stall"
        );
    }
    let params = args.data_params()?;
    if !args.sampler && params.dataset.is_none() && !matches!(mode, TrainMode::Rlvf) {
        return Err(usage("TL modes need --data or --sampler (with --max and --base)"));
    }
    ensure_dir(&args.out)?;

    let vocab = Vocabulary::new(params.base, params.cutoff)?;
    let seq_len = params
        .dataset
        .as_ref()
        .map(|d| d.header.len)
        .unwrap_or_else(|| eval::layout_bound(params.max, &vocab));

    let (model_box, theta0): (Box<dyn SeqModel>, Vec<f64>) = match &args.init {
        Some(path) => {
            let (m, _seed, theta) = model::load_checkpoint(path)?;
            if m.vocab_size() != vocab.size() {
                return Err(usage(format!(
                    "checkpoint vocabulary ({}) does not match data vocabulary ({})",
                    m.vocab_size(),
                    vocab.size()
                )));
            }
            (m, theta)
        }
        None => match args.backend.as_str() {
            "neural" => {
                let m = NeuralModel::new(NeuralConfig {
                    vocab: vocab.size(),
                    window: seq_len + 8,
                    width: args.width,
                    layers: args.layers,
                    heads: args.heads,
                    mlp_ratio: args.mlp,
                })?;
                let theta = m.init_params(args.seed);
                (Box::new(m), theta)
            }
            "tabular" => {
                let m = TabularModel::new(vocab.size(), args.order);
                let theta = m.init_params(args.seed);
                (Box::new(m), theta)
            }
            other => return Err(usage(format!("unknown backend: {other} (expected neural|tabular)"))),
        },
    };
    let model = model_box.as_ref();

    let config = training::TrainConfig {
        mode,
        lr: args.lr,
        iters: args.iters,
        batch: args.batch,
        iterate_rule: if args.average {
            training::IterateRule::Average
        } else {
            training::IterateRule::Last
        },
        seed: args.seed,
        optimizer,
        schedule: if args.cosine {
            training::LrSchedule::Cosine { warmup: 100, final_frac: 0.1 }
        } else {
            training::LrSchedule::Constant
        },
        eval_every: args.eval_every,
        clip: args.clip,
    };
    config.validate()?;

    // Held-out inputs: disjoint seed stream, de-duplicated against the
    // training pairs when a fixed dataset is in play.
    let exclude = params.dataset.as_ref().map(|d| d.input_pairs()).unwrap_or_default();
    let held_out = if args.eval_n > 0 {
        data::held_out_inputs(params.max, args.eval_n, args.seed, &exclude)?
    } else {
        Vec::new()
    };
    let verifier = BezoutVerifier::new(vocab.clone());
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        if held_out.is_empty() {
            return None;
        }
        eval::evaluate(model, theta, &verifier, &held_out, args.seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };

    let metrics_path = args.out.join("metrics.csv");
    let snapshot_dir = args.snapshots.then(|| args.out.join("snapshots"));
    if let Some(d) = &snapshot_dir {
        ensure_dir(d)?;
    }
    let artifacts = TrainArtifacts { metrics_path: Some(metrics_path.clone()), snapshot_dir };

    let sampler_storage;
    let result = match mode {
        TrainMode::Rlvf => {
            let protocol = training::GcdRolloutProtocol {
                vocab: vocab.clone(),
                sampler: data::LogUniformSampler::new(params.max)?,
                verifier: BezoutVerifier::new(vocab.clone()),
                max_new: eval::layout_bound(params.max, &vocab).min(model.window().saturating_sub(12)).max(4),
            };
            training::train(model, theta0, &config, &training::TrainTask::Rlvf(&protocol), &mut hook, &artifacts)?
        }
        _ => {
            let source = if let Some(ds) = &params.dataset {
                training::TlSource::Dataset(ds)
            } else {
                sampler_storage = data::LogUniformSampler::new(params.max)?;
                training::TlSource::Stream { sampler: &sampler_storage, vocab: &vocab, pad_len: seq_len }
            };
            training::train(model, theta0, &config, &training::TrainTask::Tl(source), &mut hook, &artifacts)?
        }
    };

    let ckpt_path = args.out.join("checkpoint.ckpt");
    model::save_checkpoint(&ckpt_path, model, args.seed, &result.theta)?;
    if let Some(last) = result.rows.last() {
        println!(
            "final: iter={} loss={} accept_rate={} correctness={} verifiability={}",
            last.iter,
            last.loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            last.accept_rate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            last.correctness.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            last.verifiability.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    let mut inputs = Vec::new();
    if let Some(d) = &args.data {
        inputs.push(d.clone());
    }
    if let Some(i) = &args.init {
        inputs.push(i.clone());
    }
    manifest::write(
        &args.out,
        "train",
        serde_json::json!({
            "mode": args.mode,
            "data": args.data,
            "sampler": args.sampler,
            "max": params.max,
            "base": params.base,
            "cutoff": params.cutoff,
            "iters": args.iters,
            "batch": args.batch,
            "lr": args.lr,
            "seed": args.seed,
            "init": args.init,
            "backend": args.backend,
            "width": args.width,
            "layers": args.layers,
            "heads": args.heads,
            "mlp": args.mlp,
            "order": args.order,
            "optimizer": args.optimizer,
            "clip": args.clip,
            "eval_n": args.eval_n,
            "eval_every": args.eval_every,
            "snapshots": args.snapshots,
            "average": args.average,
            "cosine": args.cosine,
        }),
        &[args.seed],
        &inputs,
        &[ckpt_path, metrics_path],
        started.elapsed(),
    )?;
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let started = Instant::now();
    if !args.ckpt.exists() {
        return Err(anyhow!(model::ModelError::Io {
            path: args.ckpt.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        }));
    }
    let (model_box, _ckpt_seed, theta) = model::load_checkpoint(&args.ckpt)?;
    let model = model_box.as_ref();
    let (max, base, cutoff, exclude) = if let Some(path) = &args.data {
        let ds = Dataset::load(path)?;
        (ds.header.max, ds.header.base, ds.header.cutoff, ds.input_pairs())
    } else {
        let max = args.max.ok_or_else(|| usage("--max is required without --data"))?;
        let base = args.base.ok_or_else(|| usage("--base is required without --data"))?;
        (max, base, args.cutoff.unwrap_or(0), Default::default())
    };
    let vocab = Vocabulary::new(base, cutoff)?;
    if vocab.size() != model.vocab_size() {
        return Err(usage(format!(
            "checkpoint vocabulary ({}) does not match base/cutoff vocabulary ({})",
            model.vocab_size(),
            vocab.size()
        )));
    }
    ensure_dir(&args.out)?;
    let held_out = data::held_out_inputs(max, args.n, args.seed, &exclude)?;
    let verifier = BezoutVerifier::new(vocab);
    let report = eval::evaluate(model, &theta, &verifier, &held_out, args.seed)?;
    let eval_path = args.out.join("eval.csv");
    let depth_path = args.out.join("depth_hist.csv");
    eval::write_eval_csv(&eval_path, &report)?;
    eval::write_depth_hist_csv(&depth_path, &report.depth_hist, true)?;
    println!(
        "n={} correctness={:.4} verifiability={:.4} decode_failures={}",
        report.n,
        report.correctness(),
        report.verifiability(),
        report.decode_failures
    );
    manifest::write(
        &args.out,
        "eval",
        serde_json::json!({
            "ckpt": args.ckpt,
            "data": args.data,
            "max": max,
            "base": base,
            "cutoff": cutoff,
            "n": args.n,
            "seed": args.seed,
        }),
        &[args.seed],
        &[args.ckpt.clone()],
        &[eval_path, depth_path],
        started.elapsed(),
    )?;
    Ok(0)
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let started = Instant::now();
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    if seeds.is_empty() {
        return Err(usage("need at least one seed"));
    }
    ensure_dir(&args.out)?;
    let recipe = GcdRecipe {
        max: args.max,
        base: args.base,
        cutoff: 0,
        n_train: args.n_train,
        iters: args.iters,
        batch: args.batch,
        lr: args.lr,
        optimizer: OptimizerKind::adamw_default(),
        schedule: training::LrSchedule::Cosine { warmup: 100, final_frac: 0.1 },
        clip: Some(2.0),
        mode: TrainMode::TlCrossEntropy,
        width: args.width,
        layers: args.layers,
        heads: args.heads,
        mlp_ratio: args.mlp,
        eval_n: args.eval_n,
        eval_every: 0,
        stream: args.stream,
    };
    let out_path;
    match args.which.as_str() {
        "annotation" => {
            let cutoffs: Vec<usize> = parse_list(&args.cutoffs, "cutoff")?;
            let rows = eval::ablation_annotation(&recipe, &cutoffs, &seeds, args.depth_samples)?;
            out_path = args.out.join("ablation_annotation.csv");
            eval::write_ablation_annotation_csv(&out_path, &rows)?;
            for (t, row, ceiling) in &rows {
                println!("T={t}: ver {:.4} +- {:.4} (depth ceiling {:.4})", row.mean, row.stderr, ceiling);
            }
        }
        "base" => {
            let bases: Vec<usize> = parse_list(&args.bases, "base")?;
            let rows = eval::ablation_base(&recipe, &bases, &seeds)?;
            out_path = args.out.join("ablation_base.csv");
            eval::write_ablation_base_csv(&out_path, &rows)?;
            for (b, omega, row) in &rows {
                println!("B={b} (omega {omega}): ver {:.4} +- {:.4}", row.mean, row.stderr);
            }
        }
        other => return Err(usage(format!("unknown ablation: {other} (expected annotation|base)"))),
    }
    manifest::write(
        &args.out,
        "ablate",
        serde_json::json!({
            "which": args.which,
            "cutoffs": args.cutoffs,
            "bases": args.bases,
            "seeds": args.seeds,
            "max": args.max,
            "base": args.base,
            "n_train": args.n_train,
            "iters": args.iters,
            "batch": args.batch,
            "lr": args.lr,
            "eval_n": args.eval_n,
            "width": args.width,
            "layers": args.layers,
            "heads": args.heads,
            "mlp": args.mlp,
            "depth_samples": args.depth_samples,
            "stream": args.stream,
        }),
        &seeds,
        &[],
        &[out_path],
        started.elapsed(),
    )?;
    Ok(0)
}

fn cmd_depth(args: DepthArgs) -> Result<i32> {
    let started = Instant::now();
    let cutoffs: Vec<usize> = parse_list(&args.cutoffs, "cutoff")?;
    ensure_dir(&args.out)?;
    let hist = data::depth_histogram(args.max, args.samples, args.seed)?;
    let buckets: Vec<DepthBucket> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(depth, &count)| DepthBucket { depth, total: count, verified: 0 })
        .collect();
    let out_path = args.out.join("depth_hist.csv");
    eval::write_depth_hist_csv(&out_path, &buckets, false)?;
    let total: usize = buckets.iter().map(|b| b.total).sum();
    for &t in &cutoffs {
        let below: usize = buckets.iter().filter(|b| b.depth <= t).map(|b| b.total).sum();
        println!("P[depth <= {t}] = {:.5}", below as f64 / total.max(1) as f64);
    }
    manifest::write(
        &args.out,
        "depth",
        serde_json::json!({
            "max": args.max,
            "cutoffs": args.cutoffs,
            "samples": args.samples,
            "seed": args.seed,
        }),
        &[args.seed],
        &[],
        &[out_path],
        started.elapsed(),
    )?;
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    match args.backend.as_str() {
        "tabular" => {
            let micro = gradcheck::MicroSystem::standard();
            let mut failed = false;
            for order in [1usize, 2] {
                let model = TabularModel::new(micro.vocab, order);
                let tl = gradcheck::check_tl_lemma(&model, &micro, args.count, args.seed, args.tol)?;
                let rl = gradcheck::check_rlvf_lemma(&model, &micro, args.count, args.seed + 1, args.tol)?;
                println!(
                    "tabular order {order}: tl rel err {:.3e} ({}), rlvf rel err {:.3e} ({}) at tol {:.1e} over {} points",
                    tl.max_rel_err,
                    if tl.passed { "pass" } else { "FAIL" },
                    rl.max_rel_err,
                    if rl.passed { "pass" } else { "FAIL" },
                    args.tol,
                    args.count,
                );
                failed |= !tl.passed || !rl.passed;
            }
            Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
        }
        "neural" => {
            let report = gradcheck::check_neural_fd(args.count.max(50), args.seed, args.tol)?;
            println!(
                "neural fd: rel err {:.3e} ({}) at tol {:.1e} over {} coordinates",
                report.max_rel_err,
                if report.passed { "pass" } else { "FAIL" },
                args.tol,
                report.checked,
            );
            Ok(if report.passed { 0 } else { EXIT_CHECK_FAILED })
        }
        other => Err(usage(format!("unknown backend: {other} (expected tabular|neural)"))),
    }
}
