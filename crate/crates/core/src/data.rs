//! Input sampling and honest dataset generation.
//!
//! Inputs follow the log-uniform distribution: pmf proportional to `1/x`
//! over `{1, ..., M}`, realized exactly by inverse-CDF over a precomputed
//! harmonic prefix table. Datasets are honest by construction: every record
//! is produced by the extended Euclidean prover and re-verified before it
//! is accepted into the set.

use crate::encoding::{self, TokenSequence, Vocabulary};
use crate::proof_system::{
    annotate, bezout_verify, euclidean_depth, extended_euclid, honest_transcript, BezoutProof,
    GcdInstance,
};
use rand::Rng as _;
use rayon::prelude::*;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Sub-stream tags for [`crate::stream_rng`].
pub const STREAM_TRAIN: u64 = 0;
pub const STREAM_HELDOUT: u64 = 1;
pub const STREAM_DEPTH: u64 = 2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("max must be >= 1, got {0}")]
    BadMax(i64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error("record {index} does not verify; dataset is not honest")]
    NotHonest { index: usize },
    #[error("could not sample {want} held-out inputs disjoint from the training set in {attempts} attempts")]
    HeldOutExhausted { want: usize, attempts: usize },
    #[error(transparent)]
    Encoding(#[from] encoding::EncodingError),
    #[error(transparent)]
    Instance(#[from] crate::proof_system::InstanceError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Exact discrete log-uniform sampler over `{1, ..., max}`.
///
/// `cum[k]` holds the harmonic prefix `H_{k+1}`; a uniform draw over
/// `[0, H_max)` is inverted by binary search, so `P(x = k) = (1/k) / H_max`
/// up to f64 rounding of the table entries.
#[derive(Debug, Clone)]
pub struct LogUniformSampler {
    max: i64,
    cum: Vec<f64>,
}

impl LogUniformSampler {
    pub fn new(max: i64) -> Result<Self, DataError> {
        if max < 1 {
            return Err(DataError::BadMax(max));
        }
        let mut cum = Vec::with_capacity(max as usize);
        let mut acc = 0.0f64;
        for k in 1..=max {
            acc += 1.0 / k as f64;
            cum.push(acc);
        }
        Ok(Self { max, cum })
    }

    pub fn max(&self) -> i64 {
        self.max
    }

    /// The normalizer `H_max`.
    pub fn harmonic(&self) -> f64 {
        *self.cum.last().expect("table is non-empty")
    }

    /// Exact pmf of this sampler.
    pub fn pmf(&self, k: i64) -> f64 {
        debug_assert!(k >= 1 && k <= self.max);
        (1.0 / k as f64) / self.harmonic()
    }

    pub fn sample(&self, rng: &mut crate::Rng) -> i64 {
        let u: f64 = rng.gen::<f64>() * self.harmonic();
        let idx = self.cum.partition_point(|&c| c <= u);
        (idx as i64 + 1).min(self.max)
    }

    /// Two independent draws.
    pub fn sample_input(&self, rng: &mut crate::Rng) -> GcdInstance {
        let x0 = self.sample(rng);
        let x1 = self.sample(rng);
        GcdInstance::new(x0, x1).expect("samples lie in [1, max]")
    }
}

/// Dataset header: the five parameters that determine the file contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub base: usize,
    pub cutoff: usize,
    pub max: i64,
    pub seed: u64,
    /// Common (padded) sequence length of every record.
    pub len: usize,
}

/// One honest training record with its raw fields kept for audit.
#[derive(Debug, Clone)]
pub struct Record {
    pub inst: GcdInstance,
    pub gcd: i64,
    pub proof: BezoutProof,
    pub seq: TokenSequence,
}

/// An honest-transcript dataset: every record's proof block re-verifies.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub vocab: Vocabulary,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Ordered (x0, x1) pairs present in the dataset.
    pub fn input_pairs(&self) -> HashSet<(i64, i64)> {
        self.records.iter().map(|r| (r.inst.x0(), r.inst.x1())).collect()
    }

    pub fn save(&self, dataset_path: &Path, vocab_path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        out.push_str(&format!(
            "base={} cutoff={} max={} seed={} len={}\n",
            self.header.base, self.header.cutoff, self.header.max, self.header.seed, self.header.len
        ));
        for r in &self.records {
            let mut first = true;
            for t in &r.seq.tokens {
                if !first {
                    out.push(' ');
                }
                out.push_str(&t.to_string());
                first = false;
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(dataset_path).map_err(io_err(dataset_path))?;
        f.write_all(out.as_bytes()).map_err(io_err(dataset_path))?;
        std::fs::write(vocab_path, self.vocab.table()).map_err(io_err(vocab_path))?;
        Ok(())
    }

    /// Load and re-validate a dataset file. Every line must decode into a
    /// verifying record of the header's length; the loss mask is
    /// reconstructed from the vocabulary.
    pub fn load(dataset_path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(dataset_path).map_err(io_err(dataset_path))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| DataError::Format {
                path: dataset_path.to_path_buf(),
                line: 1,
                msg: "empty file".into(),
            })?
            .map_err(io_err(dataset_path))?;
        let header = parse_header(&header_line).ok_or_else(|| DataError::Format {
            path: dataset_path.to_path_buf(),
            line: 1,
            msg: format!("bad header: {header_line}"),
        })?;
        let vocab = Vocabulary::new(header.base, header.cutoff)?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err(dataset_path))?;
            if line.is_empty() {
                continue;
            }
            let mut tokens = Vec::new();
            for part in line.split(' ') {
                let tok: u32 = part.parse().map_err(|_| DataError::Format {
                    path: dataset_path.to_path_buf(),
                    line: i + 2,
                    msg: format!("bad token id: {part}"),
                })?;
                tokens.push(tok);
            }
            if tokens.len() != header.len {
                return Err(DataError::Format {
                    path: dataset_path.to_path_buf(),
                    line: i + 2,
                    msg: format!("expected {} tokens, got {}", header.len, tokens.len()),
                });
            }
            let mask = mask_for(&tokens, &vocab);
            let record = decode_record(TokenSequence { tokens, mask }, &vocab)
                .ok_or(DataError::NotHonest { index: i })?;
            records.push(record);
        }
        Ok(Dataset { header, vocab, records })
    }
}

fn parse_header(line: &str) -> Option<DatasetHeader> {
    let mut base = None;
    let mut cutoff = None;
    let mut max = None;
    let mut seed = None;
    let mut len = None;
    for part in line.split(' ') {
        let (key, value) = part.split_once('=')?;
        match key {
            "base" => base = value.parse().ok(),
            "cutoff" => cutoff = value.parse().ok(),
            "max" => max = value.parse().ok(),
            "seed" => seed = value.parse().ok(),
            "len" => len = value.parse().ok(),
            _ => return None,
        }
    }
    Some(DatasetHeader {
        base: base?,
        cutoff: cutoff?,
        max: max?,
        seed: seed?,
        len: len?,
    })
}

/// Reconstruct the loss mask for a stored token line: false through the end
/// of the input blocks and on padding, true elsewhere.
pub fn mask_for(tokens: &[crate::Token], vocab: &Vocabulary) -> Vec<bool> {
    let x1_end = tokens.iter().position(|&t| t == vocab.x1_delim());
    let mut mask = vec![false; tokens.len()];
    if let Some(end) = x1_end {
        for (i, &t) in tokens.iter().enumerate().skip(end + 1) {
            mask[i] = t != vocab.pad();
        }
    }
    mask
}

fn decode_record(seq: TokenSequence, vocab: &Vocabulary) -> Option<Record> {
    let (d, issue) = encoding::decode_blocks(&seq.tokens, vocab);
    if issue.is_some() {
        return None;
    }
    let inst = GcdInstance::new(d.x0?, d.x1?).ok()?;
    let gcd = d.y?;
    let proof = BezoutProof { z0: d.z0?, z1: d.z1? };
    if !bezout_verify(&inst, gcd, &proof).is_accept() {
        return None;
    }
    Some(Record { inst, gcd, proof, seq })
}

/// Generate `n` honest records: sample inputs log-uniformly, run the honest
/// prover, annotate at the vocabulary's cutoff, encode, and pad everything
/// to the longest sequence. Deterministic in `(max, base, cutoff, n, seed)`;
/// records are produced from per-index seed streams so generation
/// parallelizes without affecting the output order.
pub fn generate_dataset(
    max: i64,
    base: usize,
    cutoff: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    let vocab = Vocabulary::new(base, cutoff)?;
    let sampler = LogUniformSampler::new(max)?;
    let mut records: Vec<Record> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = crate::stream_rng(seed, STREAM_TRAIN, idx as u64);
            let inst = sampler.sample_input(&mut rng);
            let run = extended_euclid(&inst);
            let transcript = honest_transcript(&vocab, &inst);
            let ann = annotate(&vocab, &inst, &transcript, cutoff)
                .expect("honest transcripts always annotate");
            let seq = encode_example(&vocab, &inst, run.gcd, &ann)?;
            Ok(Record { inst, gcd: run.gcd, proof: run.proof, seq })
        })
        .collect::<Result<_, DataError>>()?;
    let len = records.iter().map(|r| r.seq.len()).max().unwrap_or(0);
    for r in &mut records {
        r.seq.pad_to(len, &vocab)?;
    }
    Ok(Dataset {
        header: DatasetHeader { base, cutoff, max, seed, len },
        vocab,
        records,
    })
}

fn encode_example(
    vocab: &Vocabulary,
    inst: &GcdInstance,
    gcd: i64,
    ann: &crate::proof_system::AnnotatedTranscript,
) -> Result<TokenSequence, DataError> {
    Ok(encoding::encode_example(vocab, inst, gcd, ann)?)
}

/// Sample held-out evaluation inputs from a seed stream disjoint from
/// training, rejecting any (x0, x1) pair present in `exclude`.
pub fn held_out_inputs(
    max: i64,
    n: usize,
    seed: u64,
    exclude: &HashSet<(i64, i64)>,
) -> Result<Vec<GcdInstance>, DataError> {
    let sampler = LogUniformSampler::new(max)?;
    let mut rng = crate::stream_rng(seed, STREAM_HELDOUT, 0);
    let mut out = Vec::with_capacity(n);
    let max_attempts = n.saturating_mul(10_000).max(100_000);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(DataError::HeldOutExhausted { want: n, attempts });
        }
        let inst = sampler.sample_input(&mut rng);
        if exclude.contains(&(inst.x0(), inst.x1())) {
            continue;
        }
        out.push(inst);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `P[euclidean_depth(x0, x1) <= cutoff]` under the
/// log-uniform input distribution.
pub fn estimate_depth_ceiling(
    max: i64,
    cutoff: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64, DataError> {
    let sampler = LogUniformSampler::new(max)?;
    let mut rng = crate::stream_rng(seed, STREAM_DEPTH, 0);
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let inst = sampler.sample_input(&mut rng);
        if euclidean_depth(&inst) <= cutoff {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_samples as f64)
}

/// Full depth histogram from Monte-Carlo samples; index d holds the count
/// of pairs with depth exactly d.
pub fn depth_histogram(max: i64, n_samples: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    let sampler = LogUniformSampler::new(max)?;
    let mut rng = crate::stream_rng(seed, STREAM_DEPTH, 0);
    let mut hist = Vec::new();
    for _ in 0..n_samples {
        let inst = sampler.sample_input(&mut rng);
        let d = euclidean_depth(&inst);
        if hist.len() <= d {
            hist.resize(d + 1, 0);
        }
        hist[d] += 1;
    }
    Ok(hist)
}
