//! Held-out measurement of correctness and verifiability, plus the
//! experiment drivers (annotation and base-of-representation ablations).
//!
//! Correctness asks whether the decoded output equals the true gcd;
//! verifiability asks whether the verifier accepts the extracted proof.
//! Since acceptance implies the output is the gcd, verifiability can never
//! exceed correctness here; the report stores raw counts so the inequality
//! is exact, not a rounding artifact.

use crate::data::{generate_dataset, held_out_inputs, DataError, Dataset, LogUniformSampler};
use crate::encoding::{self, Vocabulary};
use crate::model::{gcd_stop_rule, Decode, ModelError, NeuralConfig, NeuralModel, SeqModel};
use crate::proof_system::{
    euclidean_depth, gcd, transcript_from_generation, BezoutVerifier, GcdInstance, Verifier,
};
use crate::training::{
    train, GcdRolloutProtocol, TlSource, TrainArtifacts, TrainConfig, TrainError, TrainResult,
    TrainTask,
};
use crate::Token;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// Verifiability per Euclidean depth bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthBucket {
    pub depth: usize,
    pub total: usize,
    pub verified: usize,
}

/// Exact counts from one evaluation pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub verifiable: usize,
    pub decode_failures: usize,
    pub depth_hist: Vec<DepthBucket>,
    pub seed: u64,
}

impl EvalReport {
    pub fn correctness(&self) -> f64 {
        self.correct as f64 / self.n.max(1) as f64
    }

    pub fn verifiability(&self) -> f64 {
        self.verifiable as f64 / self.n.max(1) as f64
    }
}

/// Greedy-decode each input, extract the proof, and tally correctness,
/// verifier acceptance, decode failures and the per-depth histogram.
/// Deterministic in (theta, inputs): decoding is greedy and the verifier
/// does not randomize.
pub fn evaluate(
    model: &dyn SeqModel,
    theta: &[f64],
    verifier: &BezoutVerifier,
    inputs: &[GcdInstance],
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let vocab = verifier.vocab();
    let prompts: Vec<Vec<Token>> = inputs.iter().map(|i| encoding::encode_instance(i, vocab)).collect();
    let max_new = generation_budget(vocab, model.window(), &prompts);
    let stop_vocab = vocab.clone();
    let sampled = model.sample_batch(
        theta,
        &prompts,
        max_new,
        &move || Box::new(gcd_stop_rule(stop_vocab.clone())),
        Decode::Greedy,
        seed,
    )?;

    let mut rng = crate::stream_rng(seed, 11, 0);
    let mut correct = 0usize;
    let mut verifiable = 0usize;
    let mut decode_failures = 0usize;
    let mut hist: Vec<DepthBucket> = Vec::new();
    for ((inst, prompt), s) in inputs.iter().zip(&prompts).zip(&sampled) {
        let truth = gcd(inst.x0(), inst.x1());
        let parts = if s.truncated { None } else { encoding::decode_generated(&s.tokens, vocab) };
        let is_correct = parts.as_ref().map(|p| p.y == truth).unwrap_or(false);
        let transcript = transcript_from_generation(vocab, prompt, &s.tokens);
        let failed = s.truncated || parts.is_none() || transcript.rounds.is_empty();
        let accepted = !s.truncated && verifier.decide(&transcript, &mut rng).is_accept();
        correct += is_correct as usize;
        verifiable += accepted as usize;
        decode_failures += failed as usize;

        let d = euclidean_depth(inst);
        match hist.iter_mut().find(|b| b.depth == d) {
            Some(b) => {
                b.total += 1;
                b.verified += accepted as usize;
            }
            None => hist.push(DepthBucket { depth: d, total: 1, verified: accepted as usize }),
        }
    }
    hist.sort_by_key(|b| b.depth);
    Ok(EvalReport { n: inputs.len(), correct, verifiable, decode_failures, depth_hist: hist, seed })
}

/// Token budget for one generation: the full answer layout for the largest
/// representable values, capped by the window less the longest prompt.
fn generation_budget(vocab: &Vocabulary, window: usize, prompts: &[Vec<Token>]) -> usize {
    let longest_prompt = prompts.iter().map(|p| p.len()).max().unwrap_or(0);
    let digits = encoding::digits_upper_bound(crate::proof_system::MAX_INPUT, vocab.base());
    let per_block = 2 + digits;
    let layout = per_block * (3 + 3 * vocab.cutoff());
    layout.min(window.saturating_sub(longest_prompt)).max(4)
}

pub const EVAL_CSV_HEADER: &str = "n,correct,verifiable,decode_failures,correctness,verifiability,seed";

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        report.n,
        report.correct,
        report.verifiable,
        report.decode_failures,
        report.correctness(),
        report.verifiability(),
        report.seed
    ));
    std::fs::write(path, out).map_err(io_err(path))
}

pub const DEPTH_CSV_HEADER: &str = "depth,count,fraction,cum_fraction,verified,verifiability";

/// Depth histogram rows; used both by the evaluation report (verified
/// columns filled) and by the Monte-Carlo depth command (left empty).
pub fn write_depth_hist_csv(
    path: &Path,
    buckets: &[DepthBucket],
    with_verified: bool,
) -> Result<(), EvalError> {
    let total: usize = buckets.iter().map(|b| b.total).sum();
    let mut out = String::from(DEPTH_CSV_HEADER);
    out.push('\n');
    let mut cum = 0usize;
    for b in buckets {
        cum += b.total;
        let frac = b.total as f64 / total.max(1) as f64;
        let cum_frac = cum as f64 / total.max(1) as f64;
        if with_verified {
            let v = b.verified as f64 / b.total.max(1) as f64;
            out.push_str(&format!("{},{},{},{},{},{}\n", b.depth, b.total, frac, cum_frac, b.verified, v));
        } else {
            out.push_str(&format!("{},{},{},{},,\n", b.depth, b.total, frac, cum_frac));
        }
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// A model that replays the honest prover: the next token is always the
/// honest continuation for the instance encoded in the context. Used to
/// sanity-check the evaluation path end to end.
pub struct HonestReplayModel {
    vocab: Vocabulary,
}

impl HonestReplayModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    fn honest_sequence(&self, context: &[Token]) -> Option<Vec<Token>> {
        let x1_end = context.iter().position(|&t| t == self.vocab.x1_delim())?;
        let inst = encoding::decode_instance(&context[..=x1_end], &self.vocab)?;
        let run = crate::proof_system::extended_euclid(&inst);
        let t = crate::proof_system::honest_transcript(&self.vocab, &inst);
        let ann = crate::proof_system::annotate(&self.vocab, &inst, &t, self.vocab.cutoff()).ok()?;
        let seq = encoding::encode_example(&self.vocab, &inst, run.gcd, &ann).ok()?;
        Some(seq.tokens)
    }
}

impl SeqModel for HonestReplayModel {
    fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn window(&self) -> usize {
        4096
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn descriptor(&self) -> String {
        format!("oracle base={} cutoff={}", self.vocab.base(), self.vocab.cutoff())
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        Vec::new()
    }

    fn next_logits(&self, _theta: &[f64], context: &[Token]) -> Result<Vec<f64>, ModelError> {
        let mut logits = vec![0.0; self.vocab.size()];
        if let Some(honest) = self.honest_sequence(context) {
            let next = honest.get(context.len()).copied().unwrap_or(self.vocab.pad());
            logits[next as usize] = 50.0;
        }
        Ok(logits)
    }

    fn grad_log_prob(&self, _theta: &[f64], _context: &[Token], _token: Token) -> Result<Vec<f64>, ModelError> {
        Ok(Vec::new())
    }
}

/// Everything needed to reproduce one desk-scale GCD training run.
#[derive(Debug, Clone)]
pub struct GcdRecipe {
    pub max: i64,
    pub base: usize,
    pub cutoff: usize,
    /// Training dataset size in records.
    pub n_train: usize,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: crate::training::OptimizerKind,
    pub schedule: crate::training::LrSchedule,
    pub clip: Option<f64>,
    pub mode: crate::training::TrainMode,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Held-out evaluation set size.
    pub eval_n: usize,
    pub eval_every: usize,
    /// Train from fresh samples (no materialized dataset) instead of a
    /// fixed dataset of `n_train` records.
    pub stream: bool,
}

impl GcdRecipe {
    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_base(mut self, base: usize) -> Self {
        self.base = base;
        self
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            lr: self.lr,
            iters: self.iters,
            batch: self.batch,
            iterate_rule: crate::training::IterateRule::Last,
            seed,
            optimizer: self.optimizer,
            schedule: self.schedule,
            eval_every: self.eval_every,
            clip: self.clip,
        }
    }

    /// Window: longest dataset sequence plus margin for rollouts that
    /// wander a little before the stop rule fires.
    pub fn window_for(&self, dataset_len: usize) -> usize {
        dataset_len + 8
    }

    pub fn model_for(&self, dataset_len: usize) -> Result<NeuralModel, ModelError> {
        NeuralModel::new(NeuralConfig {
            vocab: Vocabulary::new(self.base, self.cutoff)
                .expect("recipe bases are validated upstream")
                .size(),
            window: self.window_for(dataset_len),
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        })
    }
}

/// Worst-case encoded sequence length for values up to `max` under this
/// vocabulary; sizes windows and pad lengths when no dataset fixes them.
pub fn layout_bound(max: i64, vocab: &Vocabulary) -> usize {
    let digits = encoding::digits_upper_bound(max, vocab.base());
    (2 + digits) * (5 + 3 * vocab.cutoff())
}

/// Output of one full desk-scale run.
pub struct GcdRunResult {
    pub model: NeuralModel,
    pub result: TrainResult,
    pub final_report: EvalReport,
    pub dataset: Dataset,
    pub held_out: Vec<GcdInstance>,
}

/// Output of a fresh-sample (stream) run.
pub struct GcdStreamResult {
    pub model: NeuralModel,
    pub result: TrainResult,
    pub final_report: EvalReport,
    pub held_out: Vec<GcdInstance>,
}

/// Fresh-sample training: every batch is drawn anew from the input
/// distribution (the algorithms as written), and the held-out set comes
/// from a disjoint seed stream. There is no materialized training set to
/// de-duplicate against; at desk scale the held-out pairs therefore overlap
/// the training distribution's support, exactly as sampling from mu does.
pub fn run_gcd_stream(
    recipe: &GcdRecipe,
    seed: u64,
    artifacts: &TrainArtifacts,
) -> Result<GcdStreamResult, EvalError> {
    if matches!(recipe.mode, crate::training::TrainMode::Rlvf) {
        return Err(EvalError::Train(TrainError::Config(
            "run_gcd_stream drives TL modes; use run_gcd_rlvf for RLVF".into(),
        )));
    }
    let vocab = Vocabulary::new(recipe.base, recipe.cutoff).map_err(DataError::from)?;
    let sampler = LogUniformSampler::new(recipe.max)?;
    let pad_len = layout_bound(recipe.max, &vocab);
    let model = recipe.model_for(pad_len)?;
    let held_out = held_out_inputs(recipe.max, recipe.eval_n, seed, &Default::default())?;
    let verifier = BezoutVerifier::new(vocab.clone());
    let theta0 = model.init_params(seed);
    let config = recipe.train_config(seed);
    let source = TlSource::Stream { sampler: &sampler, vocab: &vocab, pad_len };
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        evaluate(&model, theta, &verifier, &held_out, seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };
    let result = train(&model, theta0, &config, &TrainTask::Tl(source), &mut hook, artifacts)?;
    let final_report = evaluate(&model, &result.theta, &verifier, &held_out, seed)?;
    Ok(GcdStreamResult { model, result, final_report, held_out })
}

/// Dataset generation, held-out selection (seed-disjoint and de-duplicated
/// against the training pairs), training with in-loop held-out metrics, and
/// a final evaluation.
pub fn run_gcd_training(
    recipe: &GcdRecipe,
    seed: u64,
    artifacts: &TrainArtifacts,
) -> Result<GcdRunResult, EvalError> {
    if matches!(recipe.mode, crate::training::TrainMode::Rlvf) {
        return Err(EvalError::Train(TrainError::Config(
            "run_gcd_training drives TL modes; use run_gcd_rlvf for RLVF".into(),
        )));
    }
    let dataset = generate_dataset(recipe.max, recipe.base, recipe.cutoff, recipe.n_train, seed)?;
    let held_out = held_out_inputs(recipe.max, recipe.eval_n, seed, &dataset.input_pairs())?;
    let model = recipe.model_for(dataset.header.len)?;
    let verifier = BezoutVerifier::new(dataset.vocab.clone());
    let theta0 = model.init_params(seed);
    let config = recipe.train_config(seed);
    let task = TrainTask::Tl(TlSource::Dataset(&dataset));
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        evaluate(&model, theta, &verifier, &held_out, seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };
    let result = train(&model, theta0, &config, &task, &mut hook, artifacts)?;
    let final_report = evaluate(&model, &result.theta, &verifier, &held_out, seed)?;
    Ok(GcdRunResult { model, result, final_report, dataset, held_out })
}

/// RLVF continuation from an existing parameter vector. The held-out set is
/// rebuilt exactly as in the TL run with the same data parameters and seed.
pub fn run_gcd_rlvf(
    recipe: &GcdRecipe,
    seed: u64,
    model: &NeuralModel,
    theta0: Vec<f64>,
    artifacts: &TrainArtifacts,
) -> Result<(TrainResult, EvalReport, Vec<GcdInstance>), EvalError> {
    let vocab = Vocabulary::new(recipe.base, recipe.cutoff).expect("recipe bases are validated upstream");
    let verifier = BezoutVerifier::new(vocab.clone());
    let dataset = generate_dataset(recipe.max, recipe.base, recipe.cutoff, recipe.n_train, seed)?;
    let held_out = held_out_inputs(recipe.max, recipe.eval_n, seed, &dataset.input_pairs())?;
    let budget = generation_budget(&vocab, model.window(), &[]);
    let protocol = GcdRolloutProtocol {
        vocab: vocab.clone(),
        sampler: LogUniformSampler::new(recipe.max)?,
        verifier: BezoutVerifier::new(vocab.clone()),
        max_new: budget,
    };
    let config = recipe.train_config(seed);
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        evaluate(model, theta, &verifier, &held_out, seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };
    let result = train(model, theta0, &config, &TrainTask::Rlvf(&protocol), &mut hook, artifacts)?;
    let report = evaluate(model, &result.theta, &verifier, &held_out, seed)?;
    Ok((result, report, held_out))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run one recipe end to end, honoring its stream/dataset setting, and
/// return the final held-out verifiability.
pub fn run_final_verifiability(recipe: &GcdRecipe, seed: u64) -> Result<f64, EvalError> {
    if recipe.stream {
        Ok(run_gcd_stream(recipe, seed, &TrainArtifacts::default())?.final_report.verifiability())
    } else {
        Ok(run_gcd_training(recipe, seed, &TrainArtifacts::default())?.final_report.verifiability())
    }
}

/// One training run per (cutoff, seed) at a shared budget; returns the
/// verifiability summary per cutoff with the depth-ceiling column
/// P[depth <= T].
pub fn ablation_annotation(
    recipe: &GcdRecipe,
    cutoffs: &[usize],
    seeds: &[u64],
    depth_samples: usize,
) -> Result<Vec<(usize, AblationRow, f64)>, EvalError> {
    let mut rows = Vec::new();
    for &t in cutoffs {
        let r = recipe.clone().with_cutoff(t);
        let mut per_seed = Vec::new();
        for &seed in seeds {
            per_seed.push(run_final_verifiability(&r, seed)?);
        }
        let (mean, stderr) = mean_stderr(&per_seed);
        let ceiling = if t == 0 {
            0.0
        } else {
            crate::data::estimate_depth_ceiling(recipe.max, t, depth_samples, seeds[0])?
        };
        rows.push((t, AblationRow { label: format!("T={t}"), per_seed, mean, stderr }, ceiling));
    }
    Ok(rows)
}

pub const ABLATION_ANNOTATION_HEADER: &str = "cutoff,seeds,ver_mean,ver_stderr,depth_ceiling";

pub fn write_ablation_annotation_csv(
    path: &Path,
    rows: &[(usize, AblationRow, f64)],
) -> Result<(), EvalError> {
    let mut out = String::from(ABLATION_ANNOTATION_HEADER);
    out.push('\n');
    for (t, row, ceiling) in rows {
        out.push_str(&format!("{},{},{},{},{}\n", t, row.per_seed.len(), row.mean, row.stderr, ceiling));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// One training run per (base, seed). Instances are sampled independently
/// of the base, so equal seeds mean identical training pairs across bases
/// and differences are attributable to the encoding alone.
pub fn ablation_base(
    recipe: &GcdRecipe,
    bases: &[usize],
    seeds: &[u64],
) -> Result<Vec<(usize, u32, AblationRow)>, EvalError> {
    let mut rows = Vec::new();
    for &b in bases {
        let r = recipe.clone().with_base(b);
        let mut per_seed = Vec::new();
        for &seed in seeds {
            per_seed.push(run_final_verifiability(&r, seed)?);
        }
        let (mean, stderr) = mean_stderr(&per_seed);
        rows.push((b, encoding::omega(b as u64), AblationRow { label: format!("B={b}"), per_seed, mean, stderr }));
    }
    Ok(rows)
}

pub const ABLATION_BASE_HEADER: &str = "base,omega,seeds,ver_mean,ver_stderr";

pub fn write_ablation_base_csv(path: &Path, rows: &[(usize, u32, AblationRow)]) -> Result<(), EvalError> {
    let mut out = String::from(ABLATION_BASE_HEADER);
    out.push('\n');
    for (b, omega, row) in rows {
        out.push_str(&format!("{},{},{},{},{}\n", b, omega, row.per_seed.len(), row.mean, row.stderr));
    }
    std::fs::write(path, out).map_err(io_err(path))
}
