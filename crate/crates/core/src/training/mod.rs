//! Training loops: transcript learning, verifier-feedback reinforcement,
//! and the generic stochastic-gradient-ascent scaffold.
//!
//! Transcript learning ascends the agreement surrogate: each honest example
//! contributes the sum of log-probability gradients over its masked
//! positions, optionally weighted by the product of those probabilities
//! (the faithful single-sample estimator). RLVF rolls the model out against
//! the verifier and applies the same gradient sum only when the verifier
//! accepts; rejected rollouts leave the parameters bitwise untouched.

pub mod gradcheck;
pub mod sga;

use crate::data::{Dataset, LogUniformSampler};
use crate::encoding::{self, Vocabulary};
use crate::model::{Decode, ModelError, SeqModel, TrainExample};
use crate::proof_system::{Round, Transcript, Verifier};
use crate::Token;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// RNG stream tags.
pub const STREAM_BATCH: u64 = 5;
pub const STREAM_ROLLOUT: u64 = 6;
pub const STREAM_SGA: u64 = 7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite update direction at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("unbounded step at iteration {iteration}: norm {norm} exceeds {bound}")]
    UnboundedStep { iteration: usize, norm: f64, bound: f64 },
    #[error("bad training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Alg.-faithful transcript learning: update weighted by the product of
    /// honest-token probabilities.
    TlFaithful,
    /// Standard next-token training: the product factor dropped.
    TlCrossEntropy,
    /// On-policy training gated on verifier acceptance.
    Rlvf,
    /// The faithful estimator run single-sample with iterate averaging —
    /// transcript learning exactly as the SGA scaffold sees it.
    SgaGeneric,
}

impl TrainMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tl" => Some(Self::TlCrossEntropy),
            "tl-faithful" => Some(Self::TlFaithful),
            "rlvf" => Some(Self::Rlvf),
            "sga" => Some(Self::SgaGeneric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterateRule {
    /// Return the average of the post-update iterates (the algorithms'
    /// stated output; right for the convex analyses).
    Average,
    /// Return the final iterate (used for neural runs, where averaging
    /// across a nonconvex trajectory hurts).
    Last,
}

/// Optimizer applied to the batch update direction. `Sgd` is the letter of
/// the algorithms; `AdamW` matches how the experiments actually train
/// neural models and preconditions the same direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    AdamW { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn adamw_default() -> Self {
        OptimizerKind::AdamW { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Per-iteration learning-rate scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Linear warmup then cosine decay to `final_frac * lr`.
    Cosine { warmup: usize, final_frac: f64 },
}

impl LrSchedule {
    fn factor(&self, iter: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { warmup, final_frac } => {
                if iter < warmup {
                    (iter + 1) as f64 / warmup.max(1) as f64
                } else {
                    let span = (total.saturating_sub(warmup)).max(1) as f64;
                    let t = (iter - warmup) as f64 / span;
                    let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                    final_frac + (1.0 - final_frac) * cos
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Learning rate lambda.
    pub lr: f64,
    /// Number of iterations N (batches).
    pub iters: usize,
    pub batch: usize,
    pub iterate_rule: IterateRule,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    /// Metrics/eval cadence; 0 means iters/100 (and always the final step).
    pub eval_every: usize,
    /// Clip the batch direction to this Euclidean norm.
    pub clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.iters < 1 {
            return Err(TrainError::Config("need at least one iteration".into()));
        }
        if self.batch < 1 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn cadence(&self) -> usize {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.iters / 100).max(1)
        }
    }
}

/// Per-step record: the scalar weight (alpha-product for TL, accept
/// indicator for RLVF), the update direction norm, and whether the step
/// changed parameters.
#[derive(Debug, Clone, Copy)]
pub struct UpdateRecord {
    pub iteration: usize,
    pub weight: f64,
    pub grad_norm: f64,
    pub accepted: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One transcript-learning step on a single example (Alg.-faithful or
/// cross-entropy weighting), applied in place.
pub fn tl_step(
    model: &dyn SeqModel,
    theta: &mut [f64],
    example: &TrainExample,
    lr: f64,
    faithful: bool,
    iteration: usize,
) -> Result<UpdateRecord, TrainError> {
    let batch = [example.clone()];
    let weight_fn = move |_: usize, log_alpha: f64| -> f64 {
        if faithful {
            // log-space product of the per-token probabilities; flushed to
            // zero only here, at exponentiation
            log_alpha.exp()
        } else {
            1.0
        }
    };
    let grad = model.weighted_masked_grad(theta, &batch, &weight_fn)?;
    let grad_norm = norm(&grad.direction);
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFinite { iteration });
    }
    for (t, d) in theta.iter_mut().zip(&grad.direction) {
        *t += lr * d;
    }
    Ok(UpdateRecord { iteration, weight: grad.example_weight[0], grad_norm, accepted: true })
}

/// A completed on-policy rollout: the token sequence the model produced
/// (as a maskable training example) and the transcript the verifier sees.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub example: TrainExample,
    pub transcript: Transcript,
    pub truncated: bool,
}

/// How RLVF turns a model into transcripts: sampling inputs, driving the
/// interaction, and mapping it back onto token sequences with loss masks.
pub trait RolloutProtocol: Send + Sync {
    fn verifier(&self) -> &dyn Verifier;
    /// Produce `n` rollouts at temperature 1, deterministically in `seed`.
    /// All returned examples share one sequence length.
    fn rollouts(
        &self,
        model: &dyn SeqModel,
        theta: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Vec<Rollout>, TrainError>;
}

/// The GCD instantiation: prompt with the encoded input pair, let the model
/// generate output + (annotated) answer, extract the proof, verify.
pub struct GcdRolloutProtocol<V: Verifier> {
    pub vocab: Vocabulary,
    pub sampler: LogUniformSampler,
    pub verifier: V,
    /// Generation budget per rollout.
    pub max_new: usize,
}

impl<V: Verifier> RolloutProtocol for GcdRolloutProtocol<V> {
    fn verifier(&self) -> &dyn Verifier {
        &self.verifier
    }

    fn rollouts(
        &self,
        model: &dyn SeqModel,
        theta: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Vec<Rollout>, TrainError> {
        let mut rng = crate::stream_rng(seed, STREAM_ROLLOUT, 0);
        let prompts: Vec<Vec<Token>> = (0..n)
            .map(|_| {
                let inst = self.sampler.sample_input(&mut rng);
                encoding::encode_instance(&inst, &self.vocab)
            })
            .collect();
        let vocab = self.vocab.clone();
        let sampled = model.sample_batch(
            theta,
            &prompts,
            self.max_new,
            &move || Box::new(crate::model::gcd_stop_rule(vocab.clone())),
            Decode::Temperature(1.0),
            crate::derive_seed(seed, STREAM_ROLLOUT, 1),
        )?;
        let max_len = prompts
            .iter()
            .zip(&sampled)
            .map(|(p, s)| p.len() + s.tokens.len())
            .max()
            .unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        for (prompt, s) in prompts.iter().zip(sampled) {
            let mut tokens = prompt.clone();
            let mut mask = vec![false; prompt.len()];
            tokens.extend(&s.tokens);
            mask.extend(s.tokens.iter().map(|&t| t != self.vocab.pad()));
            let transcript = crate::proof_system::transcript_from_generation(&self.vocab, prompt, &s.tokens);
            tokens.resize(max_len, self.vocab.pad());
            mask.resize(max_len, false);
            out.push(Rollout { example: TrainExample { tokens, mask }, transcript, truncated: s.truncated });
        }
        Ok(out)
    }
}

/// A fixed-shape micro protocol over a scripted verifier: single-token
/// input sampled from an explicit distribution, `y_len` output tokens,
/// then per round the scripted query and `answer_len` sampled tokens.
/// Drives the same code paths as the GCD system but stays exactly
/// enumerable.
pub struct MicroRolloutProtocol {
    pub inputs: Vec<(Token, f64)>,
    pub verifier: crate::proof_system::TableVerifier,
    pub y_len: usize,
}

impl RolloutProtocol for MicroRolloutProtocol {
    fn verifier(&self) -> &dyn Verifier {
        &self.verifier
    }

    fn rollouts(
        &self,
        model: &dyn SeqModel,
        theta: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Vec<Rollout>, TrainError> {
        use rand::Rng as _;
        let mut rng = crate::stream_rng(seed, STREAM_ROLLOUT, 0);
        let rounds = self.verifier.rounds();
        let a_len = self.verifier.answer_len();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut x = self.inputs[self.inputs.len() - 1].0;
            for &(tok, p) in &self.inputs {
                acc += p;
                if u < acc {
                    x = tok;
                    break;
                }
            }
            let mut tokens = vec![x];
            let mut mask = vec![false];
            let sample_block = |tokens: &mut Vec<Token>, mask: &mut Vec<bool>, len: usize, rng: &mut crate::Rng| -> Result<Vec<Token>, TrainError> {
                let mut block = Vec::with_capacity(len);
                for _ in 0..len {
                    let logits = model.next_logits(theta, tokens)?;
                    let tok = crate::model::sample_categorical(&crate::model::softmax(&logits), rng) as Token;
                    tokens.push(tok);
                    mask.push(true);
                    block.push(tok);
                }
                Ok(block)
            };
            let y = sample_block(&mut tokens, &mut mask, self.y_len, &mut rng)?;
            let mut transcript = Transcript { input: vec![x], output: y, rounds: vec![] };
            for _ in 0..rounds {
                let query = self
                    .verifier
                    .query(&transcript.input, &transcript, &mut rng)
                    .expect("round count is tracked");
                tokens.extend(&query);
                mask.extend(std::iter::repeat(false).take(query.len()));
                let answer = sample_block(&mut tokens, &mut mask, a_len, &mut rng)?;
                transcript.rounds.push(Round { query, answer });
            }
            out.push(Rollout { example: TrainExample { tokens, mask }, transcript, truncated: false });
        }
        Ok(out)
    }
}

/// Outcome of one RLVF batch: how many rollouts were accepted and the
/// aggregate update record.
#[derive(Debug, Clone, Copy)]
pub struct RlvfBatch {
    pub record: UpdateRecord,
    pub accepted: usize,
    pub total: usize,
}

/// One RLVF iteration over a batch of rollouts: the update direction is the
/// mean over the batch of accept-gated per-example gradient sums, so a batch
/// with no acceptances leaves `theta` bitwise unchanged (no backward pass
/// is even taken).
pub fn rlvf_batch_step(
    model: &dyn SeqModel,
    theta: &mut [f64],
    protocol: &dyn RolloutProtocol,
    lr: f64,
    batch: usize,
    seed: u64,
    iteration: usize,
) -> Result<RlvfBatch, TrainError> {
    let rollouts = protocol.rollouts(model, theta, batch, seed)?;
    let mut rng = crate::stream_rng(seed, STREAM_ROLLOUT, 2);
    let mut accepted_examples = Vec::new();
    for r in &rollouts {
        if !r.truncated && protocol.verifier().decide(&r.transcript, &mut rng).is_accept() {
            accepted_examples.push(r.example.clone());
        }
    }
    let accepted = accepted_examples.len();
    let total = rollouts.len();
    if accepted == 0 {
        return Ok(RlvfBatch {
            record: UpdateRecord { iteration, weight: 0.0, grad_norm: 0.0, accepted: false },
            accepted,
            total,
        });
    }
    let w = 1.0 / total as f64;
    let grad = model.weighted_masked_grad(theta, &accepted_examples, &move |_, _| w)?;
    let grad_norm = norm(&grad.direction);
    if !grad_norm.is_finite() {
        return Err(TrainError::NonFinite { iteration });
    }
    for (t, d) in theta.iter_mut().zip(&grad.direction) {
        *t += lr * d;
    }
    Ok(RlvfBatch {
        record: UpdateRecord { iteration, weight: accepted as f64 / total as f64, grad_norm, accepted: true },
        accepted,
        total,
    })
}

/// Single-rollout RLVF step (the algorithm as written).
pub fn rlvf_step(
    model: &dyn SeqModel,
    theta: &mut [f64],
    protocol: &dyn RolloutProtocol,
    lr: f64,
    seed: u64,
    iteration: usize,
) -> Result<RlvfBatch, TrainError> {
    rlvf_batch_step(model, theta, protocol, lr, 1, seed, iteration)
}

/// Training data for TL: a fixed dataset (sampled with replacement) or a
/// fresh-sample stream at a given padded length.
pub enum TlSource<'a> {
    Dataset(&'a Dataset),
    Stream { sampler: &'a LogUniformSampler, vocab: &'a Vocabulary, pad_len: usize },
}

impl<'a> TlSource<'a> {
    fn batch(&self, n: usize, seed: u64, iteration: usize) -> Result<Vec<TrainExample>, TrainError> {
        use rand::Rng as _;
        let mut rng = crate::stream_rng(seed, STREAM_BATCH, iteration as u64);
        match self {
            TlSource::Dataset(ds) => Ok((0..n)
                .map(|_| {
                    let idx = rng.gen_range(0..ds.records.len());
                    let r = &ds.records[idx];
                    TrainExample { tokens: r.seq.tokens.clone(), mask: r.seq.mask.clone() }
                })
                .collect()),
            TlSource::Stream { sampler, vocab, pad_len } => (0..n)
                .map(|_| {
                    let inst = sampler.sample_input(&mut rng);
                    let run = crate::proof_system::extended_euclid(&inst);
                    let t = crate::proof_system::honest_transcript(vocab, &inst);
                    let ann = crate::proof_system::annotate(vocab, &inst, &t, vocab.cutoff())
                        .expect("honest transcripts annotate");
                    let mut seq = encoding::encode_example(vocab, &inst, run.gcd, &ann)
                        .map_err(crate::data::DataError::from)?;
                    seq.pad_to(*pad_len, vocab).map_err(crate::data::DataError::from)?;
                    Ok(TrainExample { tokens: seq.tokens, mask: seq.mask })
                })
                .collect(),
        }
    }
}

/// What to train on: honest transcripts (TL modes) or the verifier loop
/// (RLVF).
pub enum TrainTask<'a> {
    Tl(TlSource<'a>),
    Rlvf(&'a dyn RolloutProtocol),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss: Option<f64>,
    pub accept_rate: Option<f64>,
    pub correctness: Option<f64>,
    pub verifiability: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,loss,accept_rate,correctness,verifiability";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_row_csv(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{}",
        row.iter,
        fmt_opt(row.loss),
        fmt_opt(row.accept_rate),
        fmt_opt(row.correctness),
        fmt_opt(row.verifiability)
    )
}

/// Where to put training artifacts.
#[derive(Default)]
pub struct TrainArtifacts {
    pub metrics_path: Option<PathBuf>,
    /// Save a checkpoint at every metrics point into this directory.
    pub snapshot_dir: Option<PathBuf>,
}

pub struct TrainResult {
    pub theta: Vec<f64>,
    pub rows: Vec<MetricsRow>,
    pub final_update: Option<UpdateRecord>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

/// The training loop. `eval_hook` is called at every metrics point with the
/// current parameters and should return (correctness, verifiability) on the
/// held-out inputs, or None to skip those columns.
pub fn train(
    model: &dyn SeqModel,
    theta0: Vec<f64>,
    config: &TrainConfig,
    task: &TrainTask,
    eval_hook: &mut dyn FnMut(&[f64]) -> Option<(f64, f64)>,
    artifacts: &TrainArtifacts,
) -> Result<TrainResult, TrainError> {
    config.validate()?;
    match (&config.mode, task) {
        (TrainMode::Rlvf, TrainTask::Rlvf(_)) => {}
        (TrainMode::Rlvf, _) => return Err(TrainError::Config("RLVF mode needs a rollout protocol".into())),
        (_, TrainTask::Rlvf(_)) => return Err(TrainError::Config("TL modes need transcript data".into())),
        _ => {}
    }
    if theta0.len() != model.param_dim() {
        return Err(TrainError::Model(ModelError::BadTheta { expected: model.param_dim(), got: theta0.len() }));
    }

    // SGA-generic is the faithful estimator run strictly as the scaffold
    // prescribes: single sample per iteration, averaged output.
    let (batch, faithful, iterate_rule) = match config.mode {
        TrainMode::SgaGeneric => (1usize, true, IterateRule::Average),
        TrainMode::TlFaithful => (config.batch, true, config.iterate_rule),
        TrainMode::TlCrossEntropy => (config.batch, false, config.iterate_rule),
        TrainMode::Rlvf => (config.batch, false, config.iterate_rule),
    };

    let mut theta = theta0;
    let mut avg = match iterate_rule {
        IterateRule::Average => Some(vec![0.0f64; theta.len()]),
        IterateRule::Last => None,
    };
    let mut adam = match config.optimizer {
        OptimizerKind::AdamW { .. } => Some(AdamState { m: vec![0.0; theta.len()], v: vec![0.0; theta.len()], t: 0 }),
        OptimizerKind::Sgd => None,
    };

    let mut metrics_file = match &artifacts.metrics_path {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(|source| TrainError::Io { path: p.clone(), source })?;
            writeln!(f, "{METRICS_HEADER}").map_err(|source| TrainError::Io { path: p.clone(), source })?;
            Some((f, p.clone()))
        }
        None => None,
    };

    let cadence = config.cadence();
    let mut rows = Vec::new();
    let mut final_update = None;
    let mut window_loss_sum = 0.0f64;
    let mut window_loss_tokens = 0usize;
    let mut window_accepted = 0usize;
    let mut window_rollouts = 0usize;

    for i in 0..config.iters {
        match task {
            TrainTask::Tl(source) => {
                let examples = source.batch(batch, config.seed, i)?;
                let inv = 1.0 / batch as f64;
                let weight_fn = move |_: usize, log_alpha: f64| -> f64 {
                    if faithful {
                        log_alpha.exp() * inv
                    } else {
                        inv
                    }
                };
                let grad = model.weighted_masked_grad(&theta, &examples, &weight_fn)?;
                let mut direction = grad.direction;
                let n = norm(&direction);
                if !n.is_finite() {
                    return Err(TrainError::NonFinite { iteration: i });
                }
                if let Some(clip) = config.clip {
                    if n > clip {
                        let s = clip / n;
                        for d in direction.iter_mut() {
                            *d *= s;
                        }
                    }
                }
                let lr_i = config.lr * config.schedule.factor(i, config.iters);
                apply_update(&mut theta, &direction, lr_i, &config.optimizer, &mut adam);
                let nll: f64 = -grad.example_log_alpha.iter().sum::<f64>();
                window_loss_sum += nll;
                window_loss_tokens += grad.masked_tokens;
                // weights carry the 1/batch factor; their sum is the mean
                // per-example weight
                final_update = Some(UpdateRecord {
                    iteration: i,
                    weight: grad.example_weight.iter().sum::<f64>(),
                    grad_norm: n,
                    accepted: true,
                });
            }
            TrainTask::Rlvf(protocol) => {
                let seed_i = crate::derive_seed(config.seed, STREAM_ROLLOUT, i as u64);
                let rollouts = protocol.rollouts(model, &theta, batch, seed_i)?;
                let mut rng = crate::stream_rng(seed_i, STREAM_ROLLOUT, u64::MAX);
                let mut accepted_examples = Vec::new();
                for r in &rollouts {
                    if !r.truncated && protocol.verifier().decide(&r.transcript, &mut rng).is_accept() {
                        accepted_examples.push(r.example.clone());
                    }
                }
                window_accepted += accepted_examples.len();
                window_rollouts += rollouts.len();
                if !accepted_examples.is_empty() {
                    let w = 1.0 / batch as f64;
                    let grad = model.weighted_masked_grad(&theta, &accepted_examples, &move |_, _| w)?;
                    let mut direction = grad.direction;
                    let n = norm(&direction);
                    if !n.is_finite() {
                        return Err(TrainError::NonFinite { iteration: i });
                    }
                    if let Some(clip) = config.clip {
                        if n > clip {
                            let s = clip / n;
                            for d in direction.iter_mut() {
                                *d *= s;
                            }
                        }
                    }
                    let lr_i = config.lr * config.schedule.factor(i, config.iters);
                    apply_update(&mut theta, &direction, lr_i, &config.optimizer, &mut adam);
                    final_update = Some(UpdateRecord {
                        iteration: i,
                        weight: accepted_examples.len() as f64 / batch as f64,
                        grad_norm: n,
                        accepted: true,
                    });
                } else {
                    final_update = Some(UpdateRecord { iteration: i, weight: 0.0, grad_norm: 0.0, accepted: false });
                }
            }
        }
        if let Some(acc) = avg.as_mut() {
            for (a, t) in acc.iter_mut().zip(&theta) {
                *a += t;
            }
        }

        let is_last = i + 1 == config.iters;
        if (i + 1) % cadence == 0 || is_last {
            let evals = eval_hook(&theta);
            let row = MetricsRow {
                iter: i + 1,
                loss: (window_loss_tokens > 0).then(|| window_loss_sum / window_loss_tokens as f64),
                accept_rate: (window_rollouts > 0).then(|| window_accepted as f64 / window_rollouts as f64),
                correctness: evals.map(|e| e.0),
                verifiability: evals.map(|e| e.1),
            };
            window_loss_sum = 0.0;
            window_loss_tokens = 0;
            window_accepted = 0;
            window_rollouts = 0;
            if let Some((f, p)) = metrics_file.as_mut() {
                writeln!(f, "{}", metrics_row_csv(&row))
                    .map_err(|source| TrainError::Io { path: p.clone(), source })?;
            }
            if let Some(dir) = &artifacts.snapshot_dir {
                let path = dir.join(format!("snapshot-{:08}.ckpt", i + 1));
                crate::model::save_checkpoint(&path, model, config.seed, &theta)?;
            }
            rows.push(row);
        }
    }

    let theta_out = match (iterate_rule, avg) {
        (IterateRule::Average, Some(acc)) => acc.iter().map(|a| a / config.iters as f64).collect(),
        _ => theta,
    };
    Ok(TrainResult { theta: theta_out, rows, final_update })
}

fn apply_update(theta: &mut [f64], direction: &[f64], lr: f64, optimizer: &OptimizerKind, adam: &mut Option<AdamState>) {
    match (optimizer, adam) {
        (OptimizerKind::Sgd, _) => {
            for (t, d) in theta.iter_mut().zip(direction) {
                *t += lr * d;
            }
        }
        (OptimizerKind::AdamW { beta1, beta2, eps, weight_decay }, Some(state)) => {
            state.t += 1;
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            for i in 0..theta.len() {
                let g = direction[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                theta[i] += lr * (mhat / (vhat.sqrt() + eps)) - lr * weight_decay * theta[i];
            }
        }
        (OptimizerKind::AdamW { .. }, None) => unreachable!("adam state allocated with optimizer"),
    }
}

/// Write metrics rows to a CSV file (used by drivers that aggregate rows
/// themselves).
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&metrics_row_csv(r));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}
