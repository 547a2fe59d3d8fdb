//! Autoregressive model backends.
//!
//! A backend exposes next-token logits, the gradient of a single token's
//! log-probability, and a fused batched gradient used by the training loops.
//! Two implementations: a tabular softmax model whose transcript
//! distribution can be enumerated exactly (the testbed for the gradient
//! lemmas), and a small transformer-style network differentiated by the
//! in-repo tape.

pub mod neural;
pub mod tabular;
pub mod tape;

pub use neural::{NeuralConfig, NeuralModel};
pub use tabular::TabularModel;

use crate::{Rng, Token};
use rand::Rng as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// RNG stream tags (see [`crate::stream_rng`]).
pub const STREAM_INIT: u64 = 3;
pub const STREAM_SAMPLE: u64 = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context of {len} tokens exceeds window {window}")]
    ContextTooLong { len: usize, window: usize },
    #[error("batch examples must share one sequence length")]
    RaggedBatch,
    #[error("parameter vector has {got} entries, backend needs {expected}")]
    BadTheta { expected: usize, got: usize },
    #[error("token {0} out of vocabulary range {1}")]
    TokenOutOfRange(Token, usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint: {msg}")]
    BadCheckpoint { path: PathBuf, msg: String },
    #[error("unknown backend descriptor: {0}")]
    BadDescriptor(String),
}

/// One training example: a token sequence and its loss mask. `mask[s]`
/// marks that the model is trained on producing `tokens[s]` from the prefix
/// `tokens[..s]`; position 0 can never be on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub tokens: Vec<Token>,
    pub mask: Vec<bool>,
}

/// Result of a fused batched gradient pass.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// `sum_e w_e * sum_s grad log p(tokens[s] | prefix)`.
    pub direction: Vec<f64>,
    /// Per example: `sum_s log p` over its masked positions.
    pub example_log_alpha: Vec<f64>,
    /// Per example: the weight the caller's function assigned.
    pub example_weight: Vec<f64>,
    /// Total masked positions across the batch.
    pub masked_tokens: usize,
}

/// An autoregressive model family over a fixed vocabulary: next-token
/// probabilities are the softmax of backend logits, differentiable in the
/// flat parameter vector everywhere.
pub trait SeqModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn window(&self) -> usize;
    fn param_dim(&self) -> usize;
    /// One-line backend description, parseable by [`build_model`].
    fn descriptor(&self) -> String;
    /// Fresh parameters. The tabular backend starts at zero; the neural
    /// backend draws a symmetric random init from the seed.
    fn init_params(&self, seed: u64) -> Vec<f64>;
    fn next_logits(&self, theta: &[f64], context: &[Token]) -> Result<Vec<f64>, ModelError>;
    /// Gradient of `log P[token | context]` with respect to theta.
    fn grad_log_prob(&self, theta: &[f64], context: &[Token], token: Token) -> Result<Vec<f64>, ModelError>;

    /// Fused pass over a batch: returns `sum_e w_e * sum_s d_s` where the
    /// per-example weight `w_e = weight_fn(e, sum_s log alpha_s)` may depend
    /// on the example's own token probabilities. The generic implementation
    /// runs one forward to collect the alphas and one gradient accumulation;
    /// backends override it with something faster.
    fn weighted_masked_grad(
        &self,
        theta: &[f64],
        batch: &[TrainExample],
        weight_fn: &dyn Fn(usize, f64) -> f64,
    ) -> Result<BatchGrad, ModelError> {
        let mut log_alpha = vec![0.0f64; batch.len()];
        let mut masked_tokens = 0usize;
        for (e, ex) in batch.iter().enumerate() {
            for s in 1..ex.tokens.len() {
                if !ex.mask[s] {
                    continue;
                }
                masked_tokens += 1;
                let logits = self.next_logits(theta, &ex.tokens[..s])?;
                log_alpha[e] += log_softmax_at(&logits, ex.tokens[s] as usize);
            }
        }
        let weights: Vec<f64> = (0..batch.len()).map(|e| weight_fn(e, log_alpha[e])).collect();
        let mut direction = vec![0.0f64; self.param_dim()];
        for (e, ex) in batch.iter().enumerate() {
            if weights[e] == 0.0 {
                continue;
            }
            for s in 1..ex.tokens.len() {
                if !ex.mask[s] {
                    continue;
                }
                let g = self.grad_log_prob(theta, &ex.tokens[..s], ex.tokens[s])?;
                for (d, gi) in direction.iter_mut().zip(g) {
                    *d += weights[e] * gi;
                }
            }
        }
        Ok(BatchGrad { direction, example_log_alpha: log_alpha, example_weight: weights, masked_tokens })
    }

    /// Sample a continuation for each prompt. Per-prompt RNG streams are
    /// derived from `seed` and the prompt index, so results do not depend on
    /// scheduling. Backends override this with batched/cached inference.
    fn sample_batch(
        &self,
        theta: &[f64],
        prompts: &[Vec<Token>],
        max_new: usize,
        stop_factory: &(dyn Fn() -> Box<dyn FnMut(&[Token]) -> bool + Send> + Sync),
        decode: Decode,
        seed: u64,
    ) -> Result<Vec<Sampled>, ModelError> {
        prompts
            .iter()
            .enumerate()
            .map(|(i, prompt)| {
                let mut rng = crate::stream_rng(seed, STREAM_SAMPLE, i as u64);
                let mut stop = stop_factory();
                sample_autoregressive(self, theta, prompt, max_new, |g| stop(g), decode, &mut rng)
            })
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - maxv).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

/// `log softmax(logits)[index]`.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&v| (v - maxv).exp()).sum();
    logits[index] - maxv - denom.ln()
}

/// Decoding strategy for sampling.
#[derive(Debug, Clone, Copy)]
pub enum Decode {
    Greedy,
    Temperature(f64),
}

/// Output of [`sample_autoregressive`]: the generated continuation and
/// whether the stop rule fired before the budget or window ran out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    pub tokens: Vec<Token>,
    pub truncated: bool,
}

/// Draw tokens one at a time from softmax(next_logits) until `should_stop`
/// returns true on the generated suffix or the budget/window is exhausted
/// (reported via `truncated`).
pub fn sample_autoregressive<M: SeqModel + ?Sized>(
    model: &M,
    theta: &[f64],
    prompt: &[Token],
    max_new: usize,
    mut should_stop: impl FnMut(&[Token]) -> bool,
    decode: Decode,
    rng: &mut Rng,
) -> Result<Sampled, ModelError> {
    let mut context = prompt.to_vec();
    let mut generated = Vec::new();
    for _ in 0..max_new {
        if context.len() >= model.window() {
            return Ok(Sampled { tokens: generated, truncated: true });
        }
        let logits = model.next_logits(theta, &context)?;
        let tok = match decode {
            Decode::Greedy => argmax(&logits) as Token,
            Decode::Temperature(temp) => {
                let scaled: Vec<f64> = logits.iter().map(|&v| v / temp).collect();
                sample_categorical(&softmax(&scaled), rng) as Token
            }
        };
        context.push(tok);
        generated.push(tok);
        if should_stop(&generated) {
            return Ok(Sampled { tokens: generated, truncated: false });
        }
    }
    Ok(Sampled { tokens: generated, truncated: true })
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Stop rule for the GCD layout: counts component delimiters; a complete
/// generation has `3T + 3` of them (output, T annotation rows, proof pair).
/// Emission of the pad token or the final `z1` delimiter also stops. Each
/// call builds a fresh stateful closure for one sequence.
pub fn gcd_stop_rule(vocab: crate::encoding::Vocabulary) -> impl FnMut(&[Token]) -> bool + Send {
    let needed = 3 * vocab.cutoff() + 3;
    let mut seen = 0usize;
    move |generated: &[Token]| {
        let last = *generated.last().expect("called after a token is pushed");
        if last == vocab.pad() {
            return true;
        }
        if vocab.is_delimiter(last) {
            seen += 1;
            if last == vocab.z1_delim() || seen >= needed {
                return true;
            }
        }
        false
    }
}

const CKPT_MAGIC: &str = "selfprove-ckpt v1";

/// Write a checkpoint: text header (magic, backend descriptor, dimension and
/// seed) followed by the raw little-endian f64 parameters. Reload is
/// bit-exact.
pub fn save_checkpoint(path: &Path, model: &dyn SeqModel, seed: u64, theta: &[f64]) -> Result<(), ModelError> {
    let io = |source| ModelError::Io { path: path.to_path_buf(), source };
    if theta.len() != model.param_dim() {
        return Err(ModelError::BadTheta { expected: model.param_dim(), got: theta.len() });
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    let header = format!("{CKPT_MAGIC}\n{}\nd={} seed={}\n", model.descriptor(), theta.len(), seed);
    f.write_all(header.as_bytes()).map_err(io)?;
    let mut bytes = Vec::with_capacity(theta.len() * 8);
    for v in theta {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes).map_err(io)?;
    Ok(())
}

/// Load a checkpoint; returns the backend (rebuilt from its descriptor),
/// the recorded seed, and the parameters.
pub fn load_checkpoint(path: &Path) -> Result<(Box<dyn SeqModel>, u64, Vec<f64>), ModelError> {
    let io = |source| ModelError::Io { path: path.to_path_buf(), source };
    let bad = |msg: &str| ModelError::BadCheckpoint { path: path.to_path_buf(), msg: msg.to_string() };
    let mut raw = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut raw).map_err(io)?;

    let mut offset = 0usize;
    let mut next_line = |raw: &[u8]| -> Result<String, ModelError> {
        let start = offset;
        while offset < raw.len() && raw[offset] != b'\n' {
            offset += 1;
        }
        if offset >= raw.len() {
            return Err(ModelError::BadCheckpoint { path: path.to_path_buf(), msg: "truncated header".into() });
        }
        let line = String::from_utf8_lossy(&raw[start..offset]).into_owned();
        offset += 1;
        Ok(line)
    };
    let magic = next_line(&raw)?;
    if magic != CKPT_MAGIC {
        return Err(bad("wrong magic"));
    }
    let descriptor = next_line(&raw)?;
    let meta = next_line(&raw)?;
    let mut d: Option<usize> = None;
    let mut seed: Option<u64> = None;
    for part in meta.split(' ') {
        if let Some(v) = part.strip_prefix("d=") {
            d = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("seed=") {
            seed = v.parse().ok();
        }
    }
    let (d, seed) = (d.ok_or_else(|| bad("missing d"))?, seed.ok_or_else(|| bad("missing seed"))?);
    let model = build_model(&descriptor)?;
    if model.param_dim() != d {
        return Err(bad(&format!("dimension {} does not match descriptor ({})", d, model.param_dim())));
    }
    let body = &raw[offset..];
    if body.len() != d * 8 {
        return Err(bad(&format!("expected {} parameter bytes, got {}", d * 8, body.len())));
    }
    let mut theta = Vec::with_capacity(d);
    for chunk in body.chunks_exact(8) {
        theta.push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
    }
    Ok((model, seed, theta))
}

/// Rebuild a backend from its descriptor line.
pub fn build_model(descriptor: &str) -> Result<Box<dyn SeqModel>, ModelError> {
    let mut parts = descriptor.split(' ');
    let kind = parts.next().unwrap_or_default();
    let mut kv = std::collections::HashMap::new();
    for part in parts {
        if let Some((k, v)) = part.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |key: &str| -> Result<usize, ModelError> {
        kv.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::BadDescriptor(descriptor.to_string()))
    };
    match kind {
        "tabular" => Ok(Box::new(TabularModel::new(get("vocab")?, get("order")?))),
        "neural" => Ok(Box::new(NeuralModel::new(NeuralConfig {
            vocab: get("vocab")?,
            window: get("window")?,
            width: get("width")?,
            layers: get("layers")?,
            heads: get("heads")?,
            mlp_ratio: get("mlp")?,
        })?)),
        _ => Err(ModelError::BadDescriptor(descriptor.to_string())),
    }
}
