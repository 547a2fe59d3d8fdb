//! The interactive proof system: an abstract R-round verifier and its
//! Bezout/GCD instantiation.
//!
//! The verifier for GCD relies on one number-theoretic fact: if
//! `z0*x0 + z1*x1` divides both `x0` and `x1`, then it equals
//! `gcd(x0, x1)`. The honest prover is the extended Euclidean algorithm;
//! the annotator exposes its intermediate rows as training signal and the
//! extractor strips them back off before anything reaches the verifier.

use crate::encoding::{self, Vocabulary};
use crate::{Rng, Token};
use thiserror::Error;

/// Largest input value the integer arithmetic is validated for. Bezout
/// coefficients are bounded by the inputs, so all products fit in `i64`
/// with room to spare; the verifier additionally uses checked arithmetic
/// because it must accept arbitrary claimed proofs.
pub const MAX_INPUT: i64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("inputs must be >= 1, got ({0}, {1})")]
    NonPositive(i64, i64),
    #[error("inputs must be <= {MAX_INPUT}, got ({0}, {1})")]
    TooLarge(i64, i64),
}

/// A GCD problem instance: a pair of positive integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GcdInstance {
    x0: i64,
    x1: i64,
}

impl GcdInstance {
    pub fn new(x0: i64, x1: i64) -> Result<Self, InstanceError> {
        if x0 < 1 || x1 < 1 {
            return Err(InstanceError::NonPositive(x0, x1));
        }
        if x0 > MAX_INPUT || x1 > MAX_INPUT {
            return Err(InstanceError::TooLarge(x0, x1));
        }
        Ok(Self { x0, x1 })
    }

    pub fn x0(&self) -> i64 {
        self.x0
    }

    pub fn x1(&self) -> i64 {
        self.x1
    }
}

/// Claimed Bezout coefficients. No invariant beyond integrality: whether
/// they actually certify anything is the verifier's business.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BezoutProof {
    pub z0: i64,
    pub z1: i64,
}

/// One row of the extended-Euclid trace: the values of `s0` and `r0` at the
/// top of a loop iteration together with the quotient computed in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EuclidStep {
    pub s0: i64,
    pub r0: i64,
    pub q: i64,
}

/// Output of the honest prover: the gcd, its certificate, and the full
/// iteration trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EuclidRun {
    pub gcd: i64,
    pub proof: BezoutProof,
    pub steps: Vec<EuclidStep>,
}

/// Extended Euclidean algorithm.
///
/// Maintains `(r0, r1)` as the remainder pair and `(s0, s1)` as the running
/// first coefficient; the second coefficient is recovered at the end as
/// `(gcd - s0*x0) / x1`, which is exact. Each loop iteration records
/// `(s0, r0, q)` before the update.
pub fn extended_euclid(inst: &GcdInstance) -> EuclidRun {
    let (mut r0, mut r1) = (inst.x0, inst.x1);
    let (mut s0, mut s1) = (1i64, 0i64);
    let mut steps = Vec::new();
    while r1 != 0 {
        let q = r0 / r1;
        steps.push(EuclidStep { s0, r0, q });
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    let z1 = (r0 - s0 * inst.x0) / inst.x1;
    debug_assert_eq!((r0 - s0 * inst.x0) % inst.x1, 0);
    EuclidRun {
        gcd: r0,
        proof: BezoutProof { z0: s0, z1 },
        steps,
    }
}

/// Number of division steps the Euclidean algorithm takes on `inst`.
pub fn euclidean_depth(inst: &GcdInstance) -> usize {
    let (mut r0, mut r1) = (inst.x0, inst.x1);
    let mut depth = 0;
    while r1 != 0 {
        (r0, r1) = (r1, r0 % r1);
        depth += 1;
    }
    let _ = r0;
    depth
}

/// Accept/reject decision of a verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept)
    }
}

/// The Bezout check: accept iff `y >= 1`, `y = z0*x0 + z1*x1`, and `y`
/// divides both inputs. Uses checked arithmetic so arbitrary claimed
/// coefficients can never turn into a panic; overflow rejects.
pub fn bezout_verify(inst: &GcdInstance, y: i64, proof: &BezoutProof) -> Decision {
    if y < 1 {
        return Decision::Reject;
    }
    let combo = proof
        .z0
        .checked_mul(inst.x0)
        .and_then(|a| proof.z1.checked_mul(inst.x1).and_then(|b| a.checked_add(b)));
    match combo {
        Some(c) if c == y && inst.x0 % y == 0 && inst.x1 % y == 0 => Decision::Accept,
        _ => Decision::Reject,
    }
}

/// One round of interaction: the verifier's query and the prover's answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub query: Vec<Token>,
    pub answer: Vec<Token>,
}

/// Full record of an interaction: the input, the claimed output, and the
/// query/answer rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub input: Vec<Token>,
    pub output: Vec<Token>,
    pub rounds: Vec<Round>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("protocol overrun: {completed} rounds already completed, verifier has {rounds}")]
    Overrun { completed: usize, rounds: usize },
}

/// An R-round interactive verifier over token sequences.
///
/// `decide` must be a deterministic function of (input, transcript, rng
/// stream); implementations with soundness error 0 simply ignore the rng.
/// Malformed transcripts reject rather than error: soundness has to hold
/// against every prover, including one emitting garbage.
pub trait Verifier: Send + Sync {
    /// Number of query/answer rounds R.
    fn rounds(&self) -> usize;

    /// Query length in tokens.
    fn query_len(&self) -> usize;

    /// Upper bound on answer length in tokens.
    fn answer_len(&self) -> usize;

    /// Soundness error `s`.
    fn soundness_error(&self) -> f64;

    /// Produce the next query given the input and the partial transcript
    /// (`partial.rounds` holds completed rounds only).
    fn query(&self, input: &[Token], partial: &Transcript, rng: &mut Rng)
        -> Result<Vec<Token>, ProtocolError>;

    /// Final decision on a complete transcript.
    fn decide(&self, transcript: &Transcript, rng: &mut Rng) -> Decision;
}

/// The GCD verifier: one round, a dummy query, soundness error 0.
///
/// Token sequences are decoded through the vocabulary; anything that does
/// not decode as a well-formed instance/output/proof is rejected.
pub struct BezoutVerifier {
    vocab: Vocabulary,
}

impl BezoutVerifier {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// The fixed dummy query: a single pad token. It carries no information
    /// and is not part of the trained token stream; it exists so the generic
    /// R-round interface stays exercised when R = 1.
    pub fn dummy_query(&self) -> Vec<Token> {
        vec![self.vocab.pad()]
    }
}

impl Verifier for BezoutVerifier {
    fn rounds(&self) -> usize {
        1
    }

    fn query_len(&self) -> usize {
        1
    }

    fn answer_len(&self) -> usize {
        // sign + digits + delimiter for each coefficient; digits of |z| are
        // bounded by digits of the larger input
        2 * (2 + encoding::digits_upper_bound(MAX_INPUT, self.vocab.base()))
    }

    fn soundness_error(&self) -> f64 {
        0.0
    }

    fn query(
        &self,
        _input: &[Token],
        partial: &Transcript,
        _rng: &mut Rng,
    ) -> Result<Vec<Token>, ProtocolError> {
        if partial.rounds.len() >= 1 {
            return Err(ProtocolError::Overrun {
                completed: partial.rounds.len(),
                rounds: 1,
            });
        }
        Ok(self.dummy_query())
    }

    fn decide(&self, transcript: &Transcript, _rng: &mut Rng) -> Decision {
        if transcript.rounds.len() != 1 {
            return Decision::Reject;
        }
        let Some(inst) = encoding::decode_instance(&transcript.input, &self.vocab) else {
            return Decision::Reject;
        };
        let Some(y) = encoding::decode_output(&transcript.output, &self.vocab) else {
            return Decision::Reject;
        };
        let Some(proof) = encoding::decode_proof(&transcript.rounds[0].answer, &self.vocab) else {
            return Decision::Reject;
        };
        bezout_verify(&inst, y, &proof)
    }
}

/// Build the honest transcript for an instance: encoded input, the true gcd
/// as output, and the Bezout coefficients as the single answer.
pub fn honest_transcript(vocab: &Vocabulary, inst: &GcdInstance) -> Transcript {
    let run = extended_euclid(inst);
    Transcript {
        input: encoding::encode_instance(inst, vocab),
        output: encoding::encode_output(run.gcd, vocab),
        rounds: vec![Round {
            query: vec![vocab.pad()],
            answer: encoding::encode_proof(&run.proof, vocab),
        }],
    }
}

/// A transcript together with the (padded) Euclid trace used as annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedTranscript {
    pub transcript: Transcript,
    pub steps: Vec<EuclidStep>,
    pub cutoff: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("annotation requires an accepting transcript")]
    NotAccepting,
}

/// Annotate an accepting transcript with the first `cutoff` rows of the
/// Euclid trace for `inst`. Runs shorter than the cutoff are padded by
/// repeating the final row; longer runs are truncated.
pub fn annotate(
    vocab: &Vocabulary,
    inst: &GcdInstance,
    transcript: &Transcript,
    cutoff: usize,
) -> Result<AnnotatedTranscript, AnnotateError> {
    let mut rng = crate::stream_rng(0, 0, 0); // decision is deterministic for this system
    let verifier = BezoutVerifier::new(vocab.clone());
    if !verifier.decide(transcript, &mut rng).is_accept() {
        return Err(AnnotateError::NotAccepting);
    }
    let run = extended_euclid(inst);
    let mut steps: Vec<EuclidStep> = run.steps.iter().take(cutoff).copied().collect();
    if cutoff > 0 {
        let last = *run.steps.last().expect("euclid trace is never empty");
        while steps.len() < cutoff {
            steps.push(last);
        }
    }
    Ok(AnnotatedTranscript {
        transcript: transcript.clone(),
        steps,
        cutoff,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no complete proof block in annotated answer (scanned {scanned} tokens)")]
    Missing { scanned: usize },
}

/// Answer extractor: strip annotation blocks from a generated answer and
/// return only the final proof block (`z0` and `z1` with their delimiters).
///
/// Single left-to-right scan keeping the start offset of the current block
/// and of the most recent plain-`z0` block; no allocation proportional to
/// the number of annotation blocks.
pub fn extract(answer: &[Token], vocab: &Vocabulary) -> Result<Vec<Token>, ExtractError> {
    let mut block_start = 0usize;
    let mut z0_start: Option<usize> = None;
    for (i, &tok) in answer.iter().enumerate() {
        if vocab.is_delimiter(tok) {
            if tok == vocab.z0_delim() {
                z0_start = Some(block_start);
            } else if tok == vocab.z1_delim() {
                if let Some(start) = z0_start {
                    return Ok(answer[start..=i].to_vec());
                }
            }
            block_start = i + 1;
        }
    }
    Err(ExtractError::Missing {
        scanned: answer.len(),
    })
}

/// A scripted verifier for tests and the lemma harness: fixed queries per
/// round and a decision table over (input, output, answers).
pub struct TableVerifier {
    pub queries: Vec<Vec<Token>>,
    pub query_len: usize,
    pub answer_len: usize,
    /// Accepted (input, output, concatenated answers) triples.
    pub accept: std::collections::HashSet<(Vec<Token>, Vec<Token>, Vec<Token>)>,
}

impl TableVerifier {
    pub fn accepts(&self, input: &[Token], output: &[Token], answers: &[Token]) -> bool {
        self.accept
            .contains(&(input.to_vec(), output.to_vec(), answers.to_vec()))
    }
}

impl Verifier for TableVerifier {
    fn rounds(&self) -> usize {
        self.queries.len()
    }

    fn query_len(&self) -> usize {
        self.query_len
    }

    fn answer_len(&self) -> usize {
        self.answer_len
    }

    fn soundness_error(&self) -> f64 {
        0.0
    }

    fn query(
        &self,
        _input: &[Token],
        partial: &Transcript,
        _rng: &mut Rng,
    ) -> Result<Vec<Token>, ProtocolError> {
        let r = partial.rounds.len();
        if r >= self.queries.len() {
            return Err(ProtocolError::Overrun {
                completed: r,
                rounds: self.queries.len(),
            });
        }
        Ok(self.queries[r].clone())
    }

    fn decide(&self, transcript: &Transcript, _rng: &mut Rng) -> Decision {
        if transcript.rounds.len() != self.queries.len() {
            return Decision::Reject;
        }
        let answers: Vec<Token> = transcript
            .rounds
            .iter()
            .flat_map(|r| r.answer.iter().copied())
            .collect();
        if self.accepts(&transcript.input, &transcript.output, &answers) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }
}

/// Map a model-generated continuation of an input prompt onto a transcript
/// for the GCD verifier: parse the output block, run the extractor over the
/// answer region, and hand the verifier the proof tokens. Malformations
/// yield a round-less transcript, which the verifier rejects.
pub fn transcript_from_generation(
    vocab: &Vocabulary,
    prompt: &[Token],
    generated: &[Token],
) -> Transcript {
    let mut t = Transcript { input: prompt.to_vec(), output: vec![], rounds: vec![] };
    if let Some(parts) = encoding::decode_generated(generated, vocab) {
        t.output = generated[..parts.y_tokens].to_vec();
        if let Ok(proof_tokens) = extract(&parts.answer, vocab) {
            t.rounds.push(Round { query: vec![vocab.pad()], answer: proof_tokens });
        }
    }
    t
}

/// gcd by plain Euclid; used as the ground truth in evaluation.
pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(x0: i64, x1: i64) -> GcdInstance {
        GcdInstance::new(x0, x1).unwrap()
    }

    #[test]
    fn euclid_212_159() {
        let run = extended_euclid(&inst(212, 159));
        assert_eq!(run.gcd, 53);
        assert_eq!(run.proof, BezoutProof { z0: 1, z1: -1 });
    }

    #[test]
    fn euclid_46_39_full_trace() {
        let run = extended_euclid(&inst(46, 39));
        assert_eq!(run.gcd, 1);
        assert_eq!(run.proof, BezoutProof { z0: -11, z1: 13 });
        let expect = [(1, 46, 1), (0, 39, 5), (1, 7, 1), (-5, 4, 1), (6, 3, 3)];
        assert_eq!(run.steps.len(), expect.len());
        for (step, (s0, r0, q)) in run.steps.iter().zip(expect) {
            assert_eq!((step.s0, step.r0, step.q), (s0, r0, q));
        }
    }

    #[test]
    fn euclid_equal_inputs() {
        let run = extended_euclid(&inst(7, 7));
        assert_eq!(run.gcd, 7);
        assert_eq!(run.proof.z0 * 7 + run.proof.z1 * 7, 7);
    }

    #[test]
    fn instance_validation() {
        assert!(GcdInstance::new(0, 5).is_err());
        assert!(GcdInstance::new(5, -1).is_err());
        assert!(GcdInstance::new(MAX_INPUT + 1, 1).is_err());
        assert!(GcdInstance::new(1, 1).is_ok());
    }

    #[test]
    fn verify_accepts_honest_and_trivial() {
        assert!(bezout_verify(&inst(212, 159), 53, &BezoutProof { z0: 1, z1: -1 }).is_accept());
        assert!(bezout_verify(&inst(5, 5), 5, &BezoutProof { z0: 1, z1: 0 }).is_accept());
    }

    #[test]
    fn verify_rejects_wrong_output_for_any_coefficients() {
        // 51 does not divide 212, so rejection holds for every (z0, z1);
        // spot-check a dense grid plus large magnitudes.
        assert_ne!(212 % 51, 0);
        for z0 in -200..=200 {
            for z1 in -200..=200 {
                assert!(!bezout_verify(&inst(212, 159), 51, &BezoutProof { z0, z1 }).is_accept());
            }
        }
        for &(z0, z1) in &[(1_000_000, -999_999), (-1_000_000, 1_000_000), (999_983, 314_159)] {
            assert!(!bezout_verify(&inst(212, 159), 51, &BezoutProof { z0, z1 }).is_accept());
        }
    }

    #[test]
    fn verify_rejects_nonpositive_y_and_overflow() {
        assert!(!bezout_verify(&inst(4, 2), 0, &BezoutProof { z0: 0, z1: 0 }).is_accept());
        assert!(!bezout_verify(&inst(4, 2), -2, &BezoutProof { z0: 0, z1: -1 }).is_accept());
        let huge = BezoutProof { z0: i64::MAX, z1: i64::MAX };
        assert!(!bezout_verify(&inst(MAX_INPUT, MAX_INPUT), 1, &huge).is_accept());
    }

    #[test]
    fn soundness_brute_force_small() {
        // Scaled-down version of the exhaustive acceptance scan.
        for x0 in 1..=8 {
            for x1 in 1..=8 {
                let g = gcd(x0, x1);
                let it = inst(x0, x1);
                for y in 1..=8 {
                    if y == g {
                        continue;
                    }
                    for z0 in -8..=8 {
                        for z1 in -8..=8 {
                            assert!(
                                !bezout_verify(&it, y, &BezoutProof { z0, z1 }).is_accept(),
                                "accepted wrong y={y} for ({x0},{x1}) with ({z0},{z1})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn depth_examples() {
        assert_eq!(euclidean_depth(&inst(46, 39)), 5);
        assert_eq!(euclidean_depth(&inst(1, 1)), 1);
        assert_eq!(euclidean_depth(&inst(21, 13)), 6);
        assert_eq!(euclidean_depth(&inst(212, 159)), 2);
    }

    #[test]
    fn depth_fibonacci_is_worst_case() {
        // Classical worst case: among ordered pairs x0 >= x1 with both
        // coordinates <= F_{n+1}, the descending Fibonacci pair maximizes
        // the depth. An ascending pair costs exactly one extra iteration
        // (the first division is a swap), so the unordered maximum is the
        // reversed Fibonacci pair at depth + 1.
        let fib_pairs = [(2, 1), (3, 2), (5, 3), (8, 5), (13, 8), (21, 13), (34, 21), (55, 34), (89, 55)];
        let mut depth = vec![vec![0usize; 101]; 101];
        for a in 1..=100 {
            for b in 1..=100 {
                depth[a][b] = euclidean_depth(&inst(a as i64, b as i64));
            }
        }
        for (f1, f0) in fib_pairs {
            let d_fib = depth[f1][f0];
            let max_ordered = (1..=f1)
                .flat_map(|a| (1..=a).map(move |b| (a, b)))
                .map(|(a, b)| depth[a][b])
                .max()
                .unwrap();
            assert_eq!(d_fib, max_ordered, "fib pair ({f1},{f0})");
            let max_all = (1..=f1)
                .flat_map(|a| (1..=f1).map(move |b| (a, b)))
                .map(|(a, b)| depth[a][b])
                .max()
                .unwrap();
            assert_eq!(max_all, depth[f0][f1], "reversed fib pair ({f0},{f1})");
            assert_eq!(max_all, d_fib + 1);
        }
        // Swap cost makes ascending pairs one step deeper.
        assert_eq!(euclidean_depth(&inst(1, 2)), 2);
        assert_eq!(euclidean_depth(&inst(2, 1)), 1);
    }

    #[test]
    fn verifier_decide_completeness_sample() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let verifier = BezoutVerifier::new(vocab.clone());
        let mut rng = crate::stream_rng(1, 0, 0);
        for x0 in 1..=50 {
            for x1 in 1..=50 {
                let t = honest_transcript(&vocab, &inst(x0, x1));
                assert!(verifier.decide(&t, &mut rng).is_accept(), "({x0},{x1})");
            }
        }
    }

    #[test]
    fn verifier_decide_rejects_wrong_round_count() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let verifier = BezoutVerifier::new(vocab.clone());
        let mut rng = crate::stream_rng(1, 0, 0);
        let mut t = honest_transcript(&vocab, &inst(46, 39));
        t.rounds.clear();
        assert_eq!(verifier.decide(&t, &mut rng), Decision::Reject);
    }

    #[test]
    fn verifier_decide_rejects_garbage_answer() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let verifier = BezoutVerifier::new(vocab.clone());
        let mut rng = crate::stream_rng(1, 0, 0);
        let mut t = honest_transcript(&vocab, &inst(46, 39));
        t.rounds[0].answer = vec![vocab.pad(), vocab.plus(), vocab.plus()];
        assert_eq!(verifier.decide(&t, &mut rng), Decision::Reject);
    }

    #[test]
    fn query_is_dummy_then_overruns() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let verifier = BezoutVerifier::new(vocab.clone());
        let mut rng = crate::stream_rng(1, 0, 0);
        let t0 = Transcript {
            input: encoding::encode_instance(&inst(4, 6), &vocab),
            output: vec![],
            rounds: vec![],
        };
        assert_eq!(verifier.query(&t0.input, &t0, &mut rng).unwrap(), vec![vocab.pad()]);
        let t1 = honest_transcript(&vocab, &inst(4, 6));
        let err = verifier.query(&t1.input, &t1, &mut rng).unwrap_err();
        assert_eq!(err, ProtocolError::Overrun { completed: 1, rounds: 1 });
    }

    #[test]
    fn scripted_verifier_replays_queries() {
        let tv = TableVerifier {
            queries: vec![vec![5], vec![6]],
            query_len: 1,
            answer_len: 1,
            accept: std::collections::HashSet::new(),
        };
        let mut rng = crate::stream_rng(1, 0, 0);
        let mut partial = Transcript { input: vec![0], output: vec![1], rounds: vec![] };
        assert_eq!(tv.query(&[0], &partial, &mut rng).unwrap(), vec![5]);
        partial.rounds.push(Round { query: vec![5], answer: vec![2] });
        assert_eq!(tv.query(&[0], &partial, &mut rng).unwrap(), vec![6]);
        partial.rounds.push(Round { query: vec![6], answer: vec![3] });
        assert!(tv.query(&[0], &partial, &mut rng).is_err());
    }

    #[test]
    fn annotate_truncates_and_pads() {
        let vocab = Vocabulary::new(10, 3).unwrap();
        let t = honest_transcript(&vocab, &inst(46, 39));
        let a = annotate(&vocab, &inst(46, 39), &t, 3).unwrap();
        let rows: Vec<(i64, i64, i64)> = a.steps.iter().map(|s| (s.s0, s.r0, s.q)).collect();
        assert_eq!(rows, vec![(1, 46, 1), (0, 39, 5), (1, 7, 1)]);

        let a7 = annotate(&vocab, &inst(46, 39), &t, 7).unwrap();
        let rows7: Vec<(i64, i64, i64)> = a7.steps.iter().map(|s| (s.s0, s.r0, s.q)).collect();
        assert_eq!(
            rows7,
            vec![(1, 46, 1), (0, 39, 5), (1, 7, 1), (-5, 4, 1), (6, 3, 3), (6, 3, 3), (6, 3, 3)]
        );

        let a0 = annotate(&vocab, &inst(46, 39), &t, 0).unwrap();
        assert!(a0.steps.is_empty());
    }

    #[test]
    fn annotate_rejects_non_accepting() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let mut t = honest_transcript(&vocab, &inst(46, 39));
        t.output = encoding::encode_output(2, &vocab);
        assert_eq!(annotate(&vocab, &inst(46, 39), &t, 1), Err(AnnotateError::NotAccepting));
    }

    #[test]
    fn extract_strips_annotation() {
        let vocab = Vocabulary::new(10, 3).unwrap();
        // Annotated answer for (46,39) at cutoff 3, trailed by the true proof.
        let inst46 = inst(46, 39);
        let t = honest_transcript(&vocab, &inst46);
        let ann = annotate(&vocab, &inst46, &t, 3).unwrap();
        let seq = encoding::encode_example(&vocab, &inst46, 1, &ann).unwrap();
        let answer_region = encoding::answer_region(&seq, &vocab).unwrap();
        let proof_tokens = extract(&answer_region, &vocab).unwrap();
        assert_eq!(proof_tokens, encoding::encode_proof(&BezoutProof { z0: -11, z1: 13 }, &vocab));
    }

    #[test]
    fn extract_identity_on_bare_proof() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let bare = encoding::encode_proof(&BezoutProof { z0: 1, z1: -1 }, &vocab);
        assert_eq!(extract(&bare, &vocab).unwrap(), bare);
    }

    #[test]
    fn extract_errors_on_truncation() {
        let vocab = Vocabulary::new(10, 0).unwrap();
        let mut bare = encoding::encode_proof(&BezoutProof { z0: 1, z1: -1 }, &vocab);
        bare.pop(); // drop the z1 delimiter
        assert!(extract(&bare, &vocab).is_err());
    }

    proptest! {
        #[test]
        fn proof_identity_holds(x0 in 1i64..1_000_000, x1 in 1i64..1_000_000) {
            let run = extended_euclid(&inst(x0, x1));
            prop_assert_eq!(run.proof.z0 * x0 + run.proof.z1 * x1, run.gcd);
            prop_assert_eq!(run.gcd, gcd(x0, x1));
            prop_assert!(bezout_verify(&inst(x0, x1), run.gcd, &run.proof).is_accept());
        }

        #[test]
        fn depth_of_equal_pair_is_one(x in 1i64..1_000_000) {
            prop_assert_eq!(euclidean_depth(&inst(x, x)), 1);
        }

        #[test]
        fn depth_matches_trace_length(x0 in 1i64..100_000, x1 in 1i64..100_000) {
            let it = inst(x0, x1);
            prop_assert_eq!(euclidean_depth(&it), extended_euclid(&it).steps.len());
        }

        #[test]
        fn annotation_extraction_round_trip(x0 in 1i64..10_000, x1 in 1i64..10_000, cutoff in 0usize..8) {
            let vocab = Vocabulary::new(10, cutoff).unwrap();
            let it = inst(x0, x1);
            let t = honest_transcript(&vocab, &it);
            let ann = annotate(&vocab, &it, &t, cutoff).unwrap();
            let run = extended_euclid(&it);
            let seq = encoding::encode_example(&vocab, &it, run.gcd, &ann).unwrap();
            let region = encoding::answer_region(&seq, &vocab).unwrap();
            let extracted = extract(&region, &vocab).unwrap();
            prop_assert_eq!(extracted, encoding::encode_proof(&run.proof, &vocab));
        }
    }
}
