//! Base-B tokenization of integer tuples.
//!
//! Every integer is one block: a sign token, most-significant-first base-B
//! digits (no leading zeros; zero itself is the single digit 0), and a
//! delimiter naming the component. A full example is laid out as
//! `x0 x1 y [s0_k r0_k q_k for k=1..T] z0 z1`, padded to a common length
//! with a dedicated pad token. The loss mask is false exactly on the input
//! blocks and on padding.

use crate::proof_system::{AnnotatedTranscript, BezoutProof, GcdInstance};
use crate::Token;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("base must be >= 2, got {0}")]
    BaseTooSmall(usize),
    #[error("annotation cutoff {got} does not match vocabulary cutoff {expected}")]
    CutoffMismatch { expected: usize, got: usize },
    #[error("integer {0} is not representable")]
    NotRepresentable(i64),
    #[error("annotated transcript carries no decodable proof block")]
    ProofUndecodable,
    #[error("cannot pad sequence of length {len} to shorter length {target}")]
    PadLength { len: usize, target: usize },
}

/// Token vocabulary for a fixed base B and annotation cutoff T.
///
/// Id layout (dense, stable): digits `0..B`, then `+`, `-`, the five named
/// delimiters `x0 x1 y z0 z1`, then `z0_k z1_k q_k` for `k = 1..=T`, and
/// finally the pad token. Total size `B + 2 + 5 + 3T + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    base: usize,
    cutoff: usize,
}

impl Vocabulary {
    pub fn new(base: usize, cutoff: usize) -> Result<Self, EncodingError> {
        if base < 2 {
            return Err(EncodingError::BaseTooSmall(base));
        }
        Ok(Self { base, cutoff })
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn size(&self) -> usize {
        self.base + 2 + 5 + 3 * self.cutoff + 1
    }

    pub fn digit(&self, d: usize) -> Token {
        debug_assert!(d < self.base);
        d as Token
    }

    pub fn is_digit(&self, tok: Token) -> bool {
        (tok as usize) < self.base
    }

    pub fn digit_value(&self, tok: Token) -> Option<i64> {
        self.is_digit(tok).then_some(tok as i64)
    }

    pub fn plus(&self) -> Token {
        self.base as Token
    }

    pub fn minus(&self) -> Token {
        (self.base + 1) as Token
    }

    pub fn x0_delim(&self) -> Token {
        (self.base + 2) as Token
    }

    pub fn x1_delim(&self) -> Token {
        (self.base + 3) as Token
    }

    pub fn y_delim(&self) -> Token {
        (self.base + 4) as Token
    }

    pub fn z0_delim(&self) -> Token {
        (self.base + 5) as Token
    }

    pub fn z1_delim(&self) -> Token {
        (self.base + 6) as Token
    }

    /// Delimiters for the k-th annotation step (1-based): the `s0`, `r0`
    /// and `q` components, named `z0_k`, `z1_k`, `q_k`.
    pub fn step_delims(&self, k: usize) -> (Token, Token, Token) {
        debug_assert!(k >= 1 && k <= self.cutoff);
        let b = self.base + 7 + 3 * (k - 1);
        (b as Token, (b + 1) as Token, (b + 2) as Token)
    }

    pub fn pad(&self) -> Token {
        (self.size() - 1) as Token
    }

    /// True for any component-naming delimiter (not signs, digits or pad).
    pub fn is_delimiter(&self, tok: Token) -> bool {
        let t = tok as usize;
        t >= self.base + 2 && t < self.size() - 1
    }

    pub fn is_known(&self, tok: Token) -> bool {
        (tok as usize) < self.size()
    }

    pub fn name(&self, tok: Token) -> String {
        let t = tok as usize;
        if t < self.base {
            return t.to_string();
        }
        if tok == self.plus() {
            return "+".to_string();
        }
        if tok == self.minus() {
            return "-".to_string();
        }
        for (d, n) in [
            (self.x0_delim(), "x0"),
            (self.x1_delim(), "x1"),
            (self.y_delim(), "y"),
            (self.z0_delim(), "z0"),
            (self.z1_delim(), "z1"),
        ] {
            if tok == d {
                return n.to_string();
            }
        }
        for k in 1..=self.cutoff {
            let (a, b, c) = self.step_delims(k);
            if tok == a {
                return format!("z0_{k}");
            }
            if tok == b {
                return format!("z1_{k}");
            }
            if tok == c {
                return format!("q_{k}");
            }
        }
        if tok == self.pad() {
            return "pad".to_string();
        }
        format!("<unknown:{t}>")
    }

    /// Two-column `id name` table, one token per line; written alongside
    /// datasets so files stay auditable without this code.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for id in 0..self.size() as Token {
            out.push_str(&format!("{id} {}\n", self.name(id)));
        }
        out
    }
}

/// Number of base-B digits needed for `n >= 0` (at least 1).
pub fn digits_upper_bound(n: i64, base: usize) -> usize {
    let mut n = n.unsigned_abs();
    let mut count = 1;
    while n >= base as u64 {
        n /= base as u64;
        count += 1;
    }
    count
}

/// Sign token followed by most-significant-first digits of `|n|`.
pub fn encode_int(n: i64, vocab: &Vocabulary) -> Vec<Token> {
    let sign = if n < 0 { vocab.minus() } else { vocab.plus() };
    let mut digits = Vec::new();
    let mut m = n.unsigned_abs();
    let base = vocab.base() as u64;
    loop {
        digits.push(vocab.digit((m % base) as usize));
        m /= base;
        if m == 0 {
            break;
        }
    }
    digits.push(sign);
    digits.reverse();
    digits
}

fn encode_block(n: i64, delim: Token, vocab: &Vocabulary, out: &mut Vec<Token>) {
    out.extend(encode_int(n, vocab));
    out.push(delim);
}

/// The two input blocks `x0 x1`.
pub fn encode_instance(inst: &GcdInstance, vocab: &Vocabulary) -> Vec<Token> {
    let mut out = Vec::new();
    encode_block(inst.x0(), vocab.x0_delim(), vocab, &mut out);
    encode_block(inst.x1(), vocab.x1_delim(), vocab, &mut out);
    out
}

/// The output block `y`.
pub fn encode_output(y: i64, vocab: &Vocabulary) -> Vec<Token> {
    let mut out = Vec::new();
    encode_block(y, vocab.y_delim(), vocab, &mut out);
    out
}

/// The proof blocks `z0 z1`.
pub fn encode_proof(proof: &BezoutProof, vocab: &Vocabulary) -> Vec<Token> {
    let mut out = Vec::new();
    encode_block(proof.z0, vocab.z0_delim(), vocab, &mut out);
    encode_block(proof.z1, vocab.z1_delim(), vocab, &mut out);
    out
}

/// A token sequence with its loss mask. The mask is true exactly on the
/// positions the model is trained to produce: output, annotation and proof
/// blocks, never input or padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_to(&mut self, target: usize, vocab: &Vocabulary) -> Result<(), EncodingError> {
        if target < self.tokens.len() {
            return Err(EncodingError::PadLength { len: self.tokens.len(), target });
        }
        self.tokens.resize(target, vocab.pad());
        self.mask.resize(target, false);
        Ok(())
    }
}

/// Encode a full training example: input, output, annotation steps, proof.
///
/// The output block precedes the proof so a causally-masked model commits to
/// its answer before arguing for it. The annotation cutoff of `annotated`
/// must match the vocabulary's.
pub fn encode_example(
    vocab: &Vocabulary,
    inst: &GcdInstance,
    y: i64,
    annotated: &AnnotatedTranscript,
) -> Result<TokenSequence, EncodingError> {
    if annotated.cutoff != vocab.cutoff() {
        return Err(EncodingError::CutoffMismatch {
            expected: vocab.cutoff(),
            got: annotated.cutoff,
        });
    }
    let proof = decode_proof(&annotated.transcript.rounds.first().map(|r| r.answer.clone()).unwrap_or_default(), vocab)
        .ok_or(EncodingError::ProofUndecodable)?;

    let mut tokens = encode_instance(inst, vocab);
    let input_len = tokens.len();
    encode_block(y, vocab.y_delim(), vocab, &mut tokens);
    for (k, step) in annotated.steps.iter().enumerate() {
        let (d_s0, d_r0, d_q) = vocab.step_delims(k + 1);
        encode_block(step.s0, d_s0, vocab, &mut tokens);
        encode_block(step.r0, d_r0, vocab, &mut tokens);
        encode_block(step.q, d_q, vocab, &mut tokens);
    }
    encode_block(proof.z0, vocab.z0_delim(), vocab, &mut tokens);
    encode_block(proof.z1, vocab.z1_delim(), vocab, &mut tokens);

    let mut mask = vec![true; tokens.len()];
    mask[..input_len].fill(false);
    Ok(TokenSequence { tokens, mask })
}

/// Everything after the output block and before padding: the (annotated)
/// answer region the extractor operates on. None if there is no output
/// delimiter.
pub fn answer_region(seq: &TokenSequence, vocab: &Vocabulary) -> Option<Vec<Token>> {
    let y_end = seq.tokens.iter().position(|&t| t == vocab.y_delim())?;
    let rest = &seq.tokens[y_end + 1..];
    let end = rest.iter().position(|&t| t == vocab.pad()).unwrap_or(rest.len());
    Some(rest[..end].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeIssueKind {
    UnknownToken,
    ExpectedSign,
    ExpectedDigit,
    ExpectedDelimiter,
    UnexpectedEnd,
    Overflow,
    TrailingGarbage,
}

/// Where and how a decode went wrong. `position` indexes the offending
/// token (or the sequence length for an unexpected end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeIssue {
    pub position: usize,
    pub kind: DecodeIssueKind,
}

/// Structured fields recovered by [`decode_blocks`]; fields are filled in
/// layout order up to the first malformed token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialDecode {
    pub x0: Option<i64>,
    pub x1: Option<i64>,
    pub y: Option<i64>,
    pub steps: Vec<(i64, i64, i64)>,
    pub z0: Option<i64>,
    pub z1: Option<i64>,
    /// Tokens consumed by the well-formed prefix.
    pub consumed: usize,
}

struct Cursor<'a> {
    seq: &'a [Token],
    pos: usize,
    vocab: &'a Vocabulary,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<Token> {
        self.seq.get(self.pos).copied()
    }

    fn issue(&self, kind: DecodeIssueKind) -> DecodeIssue {
        DecodeIssue { position: self.pos, kind }
    }

    /// Parse `sign digits+ delim` where `delim` must equal `expect`.
    /// Leading zeros are tolerated on decode; the encoder never emits them.
    fn int_block(&mut self, expect: Token) -> Result<i64, DecodeIssue> {
        let sign = match self.peek() {
            None => return Err(self.issue(DecodeIssueKind::UnexpectedEnd)),
            Some(t) if !self.vocab.is_known(t) => return Err(self.issue(DecodeIssueKind::UnknownToken)),
            Some(t) if t == self.vocab.plus() => 1i64,
            Some(t) if t == self.vocab.minus() => -1i64,
            Some(_) => return Err(self.issue(DecodeIssueKind::ExpectedSign)),
        };
        self.pos += 1;
        let mut value: i64 = 0;
        let mut digits = 0usize;
        loop {
            match self.peek() {
                None => return Err(self.issue(DecodeIssueKind::UnexpectedEnd)),
                Some(t) if !self.vocab.is_known(t) => {
                    return Err(self.issue(DecodeIssueKind::UnknownToken))
                }
                Some(t) if self.vocab.is_digit(t) => {
                    value = value
                        .checked_mul(self.vocab.base() as i64)
                        .and_then(|v| v.checked_add(t as i64))
                        .ok_or(self.issue(DecodeIssueKind::Overflow))?;
                    digits += 1;
                    self.pos += 1;
                }
                Some(t) if t == expect => {
                    if digits == 0 {
                        return Err(self.issue(DecodeIssueKind::ExpectedDigit));
                    }
                    self.pos += 1;
                    return Ok(sign * value);
                }
                Some(_) => {
                    let kind = if digits == 0 {
                        DecodeIssueKind::ExpectedDigit
                    } else {
                        DecodeIssueKind::ExpectedDelimiter
                    };
                    return Err(self.issue(kind));
                }
            }
        }
    }
}

/// Inverse of [`encode_example`]: parse the full block layout, tolerating
/// trailing padding. On malformed input, returns whatever prefix parsed
/// plus an issue naming the offending position.
pub fn decode_blocks(seq: &[Token], vocab: &Vocabulary) -> (PartialDecode, Option<DecodeIssue>) {
    let mut out = PartialDecode::default();
    let mut cur = Cursor { seq, pos: 0, vocab };

    macro_rules! step {
        ($slot:expr, $delim:expr) => {
            match cur.int_block($delim) {
                Ok(v) => {
                    $slot = Some(v);
                    out.consumed = cur.pos;
                }
                Err(issue) => return (out, Some(issue)),
            }
        };
    }

    step!(out.x0, vocab.x0_delim());
    step!(out.x1, vocab.x1_delim());
    step!(out.y, vocab.y_delim());
    for k in 1..=vocab.cutoff() {
        let (d_s0, d_r0, d_q) = vocab.step_delims(k);
        let s0 = match cur.int_block(d_s0) {
            Ok(v) => v,
            Err(issue) => return (out, Some(issue)),
        };
        let r0 = match cur.int_block(d_r0) {
            Ok(v) => v,
            Err(issue) => return (out, Some(issue)),
        };
        let q = match cur.int_block(d_q) {
            Ok(v) => v,
            Err(issue) => return (out, Some(issue)),
        };
        out.steps.push((s0, r0, q));
        out.consumed = cur.pos;
    }
    step!(out.z0, vocab.z0_delim());
    step!(out.z1, vocab.z1_delim());

    while let Some(t) = cur.peek() {
        if t == vocab.pad() {
            cur.pos += 1;
        } else {
            return (out, Some(cur.issue(DecodeIssueKind::TrailingGarbage)));
        }
    }
    out.consumed = cur.pos;
    (out, None)
}

/// Strict decode of a bare `x0 x1` token pair (the verifier's input view).
pub fn decode_instance(tokens: &[Token], vocab: &Vocabulary) -> Option<GcdInstance> {
    let mut cur = Cursor { seq: tokens, pos: 0, vocab };
    let x0 = cur.int_block(vocab.x0_delim()).ok()?;
    let x1 = cur.int_block(vocab.x1_delim()).ok()?;
    if cur.pos != tokens.len() {
        return None;
    }
    GcdInstance::new(x0, x1).ok()
}

/// Strict decode of a bare `y` block.
pub fn decode_output(tokens: &[Token], vocab: &Vocabulary) -> Option<i64> {
    let mut cur = Cursor { seq: tokens, pos: 0, vocab };
    let y = cur.int_block(vocab.y_delim()).ok()?;
    (cur.pos == tokens.len()).then_some(y)
}

/// Strict decode of a bare `z0 z1` proof block.
pub fn decode_proof(tokens: &[Token], vocab: &Vocabulary) -> Option<BezoutProof> {
    let mut cur = Cursor { seq: tokens, pos: 0, vocab };
    let z0 = cur.int_block(vocab.z0_delim()).ok()?;
    let z1 = cur.int_block(vocab.z1_delim()).ok()?;
    (cur.pos == tokens.len()).then_some(BezoutProof { z0, z1 })
}

/// A model-generated continuation split into its claimed output and the
/// answer region (annotation + proof, padding stripped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedParts {
    pub y: i64,
    /// Token count of the output block within the generation.
    pub y_tokens: usize,
    pub answer: Vec<Token>,
}

/// Split a model-generated continuation. None if the output block is
/// malformed.
pub fn decode_generated(tokens: &[Token], vocab: &Vocabulary) -> Option<GeneratedParts> {
    let mut cur = Cursor { seq: tokens, pos: 0, vocab };
    let y = cur.int_block(vocab.y_delim()).ok()?;
    let y_tokens = cur.pos;
    let rest = &tokens[cur.pos..];
    let end = rest.iter().position(|&t| t == vocab.pad()).unwrap_or(rest.len());
    Some(GeneratedParts { y, y_tokens, answer: rest[..end].to_vec() })
}

/// Number of distinct prime divisors, by trial division.
pub fn omega(b: u64) -> u32 {
    debug_assert!(b >= 2);
    let mut n = b;
    let mut count = 0;
    let mut p = 2u64;
    while p * p <= n {
        if n % p == 0 {
            count += 1;
            while n % p == 0 {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        count += 1;
    }
    count
}
