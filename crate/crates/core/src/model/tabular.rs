//! Tabular softmax backend: one logit row per context k-gram.
//!
//! The point of this backend is exact analysis: its transcript distribution
//! can be enumerated in closed form and its gradients are the textbook
//! softmax gradient, which makes it the reference instance for the gradient
//! lemma checks.

use super::{log_softmax_at, softmax, BatchGrad, ModelError, SeqModel, TrainExample};
use crate::Token;

/// Order-k tabular model over a vocabulary of `vocab` tokens.
///
/// The logit table has one row per context key; the key is the last k
/// tokens. Contexts shorter than k share rows with contexts left-padded by
/// token 0 (a deliberate, documented convention: the micro-systems used for
/// exact enumeration always condition on at least k tokens, so no collision
/// arises there).
#[derive(Debug, Clone)]
pub struct TabularModel {
    vocab: usize,
    order: usize,
}

impl TabularModel {
    pub fn new(vocab: usize, order: usize) -> Self {
        assert!(vocab >= 1, "vocabulary must be non-empty");
        assert!(order >= 1, "order must be at least 1");
        Self { vocab, order }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Row index of a context: base-|vocab| value of its last `order`
    /// tokens, left-padded with token 0.
    pub fn context_row(&self, context: &[Token]) -> usize {
        let mut idx = 0usize;
        for i in 0..self.order {
            let pad = self.order.saturating_sub(context.len());
            let tok = if i < pad { 0 } else { context[context.len() - self.order + i] as usize };
            idx = idx * self.vocab + tok;
        }
        idx
    }

    fn check(&self, theta: &[f64], context: &[Token]) -> Result<(), ModelError> {
        if theta.len() != self.param_dim() {
            return Err(ModelError::BadTheta { expected: self.param_dim(), got: theta.len() });
        }
        for &t in context {
            if t as usize >= self.vocab {
                return Err(ModelError::TokenOutOfRange(t, self.vocab));
            }
        }
        Ok(())
    }
}

impl SeqModel for TabularModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn window(&self) -> usize {
        4096
    }

    fn param_dim(&self) -> usize {
        self.vocab.pow(self.order as u32) * self.vocab
    }

    fn descriptor(&self) -> String {
        format!("tabular vocab={} order={}", self.vocab, self.order)
    }

    fn init_params(&self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.param_dim()]
    }

    fn next_logits(&self, theta: &[f64], context: &[Token]) -> Result<Vec<f64>, ModelError> {
        self.check(theta, context)?;
        let row = self.context_row(context);
        Ok(theta[row * self.vocab..(row + 1) * self.vocab].to_vec())
    }

    fn grad_log_prob(&self, theta: &[f64], context: &[Token], token: Token) -> Result<Vec<f64>, ModelError> {
        self.check(theta, context)?;
        if token as usize >= self.vocab {
            return Err(ModelError::TokenOutOfRange(token, self.vocab));
        }
        let row = self.context_row(context);
        let probs = softmax(&theta[row * self.vocab..(row + 1) * self.vocab]);
        let mut grad = vec![0.0; self.param_dim()];
        for (j, &p) in probs.iter().enumerate() {
            grad[row * self.vocab + j] = -p;
        }
        grad[row * self.vocab + token as usize] += 1.0;
        Ok(grad)
    }

    fn weighted_masked_grad(
        &self,
        theta: &[f64],
        batch: &[TrainExample],
        weight_fn: &dyn Fn(usize, f64) -> f64,
    ) -> Result<BatchGrad, ModelError> {
        // First pass: row indices and per-example sum of target log-probs.
        let mut rows: Vec<Vec<(usize, usize)>> = Vec::with_capacity(batch.len());
        let mut log_alpha = vec![0.0f64; batch.len()];
        let mut masked_tokens = 0usize;
        for (e, ex) in batch.iter().enumerate() {
            self.check(theta, &ex.tokens)?;
            let mut positions = Vec::new();
            for s in 1..ex.tokens.len() {
                if !ex.mask[s] {
                    continue;
                }
                masked_tokens += 1;
                let row = self.context_row(&ex.tokens[..s]);
                let target = ex.tokens[s] as usize;
                log_alpha[e] += log_softmax_at(&theta[row * self.vocab..(row + 1) * self.vocab], target);
                positions.push((row, target));
            }
            rows.push(positions);
        }
        let weights: Vec<f64> = (0..batch.len()).map(|e| weight_fn(e, log_alpha[e])).collect();
        // Second pass: sparse accumulation of w_e * (indicator - softmax).
        let mut direction = vec![0.0f64; self.param_dim()];
        for (e, positions) in rows.iter().enumerate() {
            let w = weights[e];
            if w == 0.0 {
                continue;
            }
            for &(row, target) in positions {
                let probs = softmax(&theta[row * self.vocab..(row + 1) * self.vocab]);
                for (j, &p) in probs.iter().enumerate() {
                    direction[row * self.vocab + j] -= w * p;
                }
                direction[row * self.vocab + target] += w;
            }
        }
        Ok(BatchGrad { direction, example_log_alpha: log_alpha, example_weight: weights, masked_tokens })
    }
}
