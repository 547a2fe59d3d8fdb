//! Gradient-lemma verification harness.
//!
//! On a micro proof system small enough to enumerate every transcript, two
//! identities are checked numerically, each against a central finite
//! difference of an exactly-computed objective:
//!
//! - the expected faithful transcript-learning update equals the gradient
//!   of the agreement A(theta) = P[model transcript = honest transcript];
//! - the expected accept-gated update equals the gradient of the
//!   verifiability ver(theta) = P[verifier accepts the model's rollout].
//!
//! Both hold for any model backend; the tabular backend keeps the
//! enumeration exact and fast.

use crate::model::{log_softmax_at, softmax, ModelError, SeqModel};
use crate::Token;
use rand::Rng as _;
use std::collections::HashSet;

/// A one-round micro proof system over a tiny token alphabet: single-token
/// input x with explicit distribution, single-token output y, a fixed query
/// token, single-token answer a. The honest generator is an explicit
/// distribution over (y, a) per input; the accept set is explicit.
#[derive(Debug, Clone)]
pub struct MicroSystem {
    pub vocab: usize,
    pub inputs: Vec<(Token, f64)>,
    pub query: Token,
    /// Honest generator: for each input, a distribution over (y, a).
    pub honest: Vec<(Token, Vec<((Token, Token), f64)>)>,
    /// Accepted (x, y, a) triples; must cover the honest support.
    pub accept: HashSet<(Token, Token, Token)>,
}

impl MicroSystem {
    /// The default instance used by the lemma checks: alphabet of 3 tokens,
    /// two inputs, honest support of two transcripts per input, and an
    /// accept set strictly larger than the honest support (so the two
    /// gradients genuinely differ).
    pub fn standard() -> Self {
        let mut accept = HashSet::new();
        // honest support
        accept.insert((0, 1, 0));
        accept.insert((0, 2, 1));
        accept.insert((1, 0, 2));
        accept.insert((1, 1, 1));
        // extra accepting transcripts no honest prover emits
        accept.insert((0, 0, 0));
        accept.insert((1, 2, 2));
        MicroSystem {
            vocab: 3,
            inputs: vec![(0, 0.6), (1, 0.4)],
            query: 2,
            honest: vec![
                (0, vec![((1, 0), 0.7), ((2, 1), 0.3)]),
                (1, vec![((0, 2), 0.5), ((1, 1), 0.5)]),
            ],
            accept,
        }
    }

    fn honest_for(&self, x: Token) -> &[((Token, Token), f64)] {
        &self.honest.iter().find(|(i, _)| *i == x).expect("input covered").1
    }

    /// Probability the model assigns to continuing `[x]` with `y` and then
    /// `[x, y, query]` with `a`.
    fn transcript_prob(
        &self,
        model: &dyn SeqModel,
        theta: &[f64],
        x: Token,
        y: Token,
        a: Token,
    ) -> Result<f64, ModelError> {
        let p_y = log_softmax_at(&model.next_logits(theta, &[x])?, y as usize).exp();
        let p_a = log_softmax_at(&model.next_logits(theta, &[x, y, self.query])?, a as usize).exp();
        Ok(p_y * p_a)
    }

    /// Agreement A(theta): the probability that the model's transcript
    /// matches the honest generator's, jointly over x, the honest draw and
    /// the model draw.
    pub fn agreement(&self, model: &dyn SeqModel, theta: &[f64]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for &(x, px) in &self.inputs {
            for &((y, a), p_star) in self.honest_for(x) {
                total += px * p_star * self.transcript_prob(model, theta, x, y, a)?;
            }
        }
        Ok(total)
    }

    /// Verifiability ver(theta): the probability the model's own rollout is
    /// accepted, enumerated over every transcript.
    pub fn verifiability(&self, model: &dyn SeqModel, theta: &[f64]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for &(x, px) in &self.inputs {
            for y in 0..self.vocab as Token {
                for a in 0..self.vocab as Token {
                    if self.accept.contains(&(x, y, a)) {
                        total += px * self.transcript_prob(model, theta, x, y, a)?;
                    }
                }
            }
        }
        Ok(total)
    }

    fn update_direction(
        &self,
        model: &dyn SeqModel,
        theta: &[f64],
        x: Token,
        y: Token,
        a: Token,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let prob = self.transcript_prob(model, theta, x, y, a)?;
        let mut dir = model.grad_log_prob(theta, &[x], y)?;
        let d_a = model.grad_log_prob(theta, &[x, y, self.query], a)?;
        for (u, v) in dir.iter_mut().zip(d_a) {
            *u += v;
        }
        Ok((prob, dir))
    }

    /// Exactly-enumerated expectation of the faithful TL update: over x and
    /// honest transcripts, the alpha-product times the gradient-log sum.
    pub fn expected_tl_update(&self, model: &dyn SeqModel, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; model.param_dim()];
        for &(x, px) in &self.inputs {
            for &((y, a), p_star) in self.honest_for(x) {
                let (alpha_product, dir) = self.update_direction(model, theta, x, y, a)?;
                for (o, d) in out.iter_mut().zip(dir) {
                    *o += px * p_star * alpha_product * d;
                }
            }
        }
        Ok(out)
    }

    /// Exactly-enumerated expectation of the accept-gated RLVF update:
    /// over x and the model's own transcript distribution.
    pub fn expected_rlvf_update(&self, model: &dyn SeqModel, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; model.param_dim()];
        for &(x, px) in &self.inputs {
            for y in 0..self.vocab as Token {
                for a in 0..self.vocab as Token {
                    if !self.accept.contains(&(x, y, a)) {
                        continue;
                    }
                    let (prob, dir) = self.update_direction(model, theta, x, y, a)?;
                    for (o, d) in out.iter_mut().zip(dir) {
                        *o += px * prob * d;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Honest transcripts as maskable training examples, with their
    /// generator probabilities: `[x, y, q, a]`, mask on y and a.
    pub fn honest_examples(&self) -> Vec<(crate::model::TrainExample, f64, f64)> {
        let mut out = Vec::new();
        for &(x, px) in &self.inputs {
            for &((y, a), p_star) in self.honest_for(x) {
                out.push((
                    crate::model::TrainExample {
                        tokens: vec![x, y, self.query, a],
                        mask: vec![false, true, false, true],
                    },
                    px,
                    p_star,
                ));
            }
        }
        out
    }
}

/// Central finite-difference gradient of a scalar function of theta.
pub fn fd_gradient(
    mut f: impl FnMut(&[f64]) -> Result<f64, ModelError>,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>, ModelError> {
    let mut grad = Vec::with_capacity(theta.len());
    let mut work = theta.to_vec();
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let plus = f(&work)?;
        work[i] = theta[i] - h;
        let minus = f(&work)?;
        work[i] = theta[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

pub fn l2_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[derive(Debug, Clone)]
pub struct LemmaReport {
    /// Worst relative L2 error across the checked parameter points.
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub passed: bool,
}

fn random_theta(dim: usize, rng: &mut crate::Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

/// Check the TL gradient identity at `n_thetas` random parameter points:
/// the enumerated expected update must match the finite-difference gradient
/// of the agreement.
pub fn check_tl_lemma(
    model: &dyn SeqModel,
    micro: &MicroSystem,
    n_thetas: usize,
    seed: u64,
    tol: f64,
) -> Result<LemmaReport, ModelError> {
    let mut rng = crate::stream_rng(seed, 8, 0);
    let mut max_rel = 0.0f64;
    for _ in 0..n_thetas {
        let theta = random_theta(model.param_dim(), &mut rng);
        let expected = micro.expected_tl_update(model, &theta)?;
        let fd = fd_gradient(|t| micro.agreement(model, t), &theta, 1e-5)?;
        max_rel = max_rel.max(l2_relative_error(&expected, &fd));
    }
    Ok(LemmaReport { max_rel_err: max_rel, tol, checked: n_thetas, passed: max_rel < tol })
}

/// Check the RLVF gradient identity against the verifiability gradient.
pub fn check_rlvf_lemma(
    model: &dyn SeqModel,
    micro: &MicroSystem,
    n_thetas: usize,
    seed: u64,
    tol: f64,
) -> Result<LemmaReport, ModelError> {
    let mut rng = crate::stream_rng(seed, 9, 0);
    let mut max_rel = 0.0f64;
    for _ in 0..n_thetas {
        let theta = random_theta(model.param_dim(), &mut rng);
        let expected = micro.expected_rlvf_update(model, &theta)?;
        let fd = fd_gradient(|t| micro.verifiability(model, t), &theta, 1e-5)?;
        max_rel = max_rel.max(l2_relative_error(&expected, &fd));
    }
    Ok(LemmaReport { max_rel_err: max_rel, tol, checked: n_thetas, passed: max_rel < tol })
}

/// Finite-difference check of the neural backend's `grad_log_prob` on a
/// random coordinate subset; per-coordinate mixed tolerance.
pub fn check_neural_fd(n_coords: usize, seed: u64, tol: f64) -> Result<LemmaReport, ModelError> {
    let model = crate::model::NeuralModel::new(crate::model::NeuralConfig {
        vocab: 5,
        window: 8,
        width: 8,
        layers: 2,
        heads: 2,
        mlp_ratio: 2,
    })?;
    let theta = model.init_params(seed);
    let mut rng = crate::stream_rng(seed, 10, 0);
    let context: Vec<Token> = vec![1, 4, 2, 0];
    let token: Token = 3;
    let analytic = model.grad_log_prob(&theta, &context, token)?;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for _ in 0..n_coords {
        let i = rng.gen_range(0..model.param_dim());
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let lp = log_softmax_at(&model.next_logits(&plus, &context)?, token as usize);
        let lm = log_softmax_at(&model.next_logits(&minus, &context)?, token as usize);
        let fd = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-3);
        max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
    }
    Ok(LemmaReport { max_rel_err: max_rel, tol, checked: n_coords, passed: max_rel < tol })
}

/// Convenience for the softmax sanity part of the gradcheck command.
pub fn softmax_normalization_error(model: &dyn SeqModel, theta: &[f64], contexts: &[Vec<Token>]) -> Result<f64, ModelError> {
    let mut worst = 0.0f64;
    for ctx in contexts {
        let p = softmax(&model.next_logits(theta, ctx)?);
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}
