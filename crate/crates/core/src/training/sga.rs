//! Generic stochastic gradient ascent and the concave bound harness.
//!
//! The scaffold starts at the origin, steps along a sampled gradient
//! estimate, and returns the iterate average. With a concave objective,
//! bounded estimator norm B_lip, an optimum inside radius B_norm, and the
//! rate `B_norm / (B_lip * sqrt(N))`, the expected value of the averaged
//! iterate is within `B_norm * B_lip / sqrt(N)` of the optimum.

use super::{TrainError, STREAM_SGA};
use rand::Rng as _;

#[derive(Debug, Clone, Copy)]
pub struct SgaConfig {
    pub lr: f64,
    pub iters: usize,
    /// Abort if an estimate exceeds this norm: the bound's hypothesis is
    /// violated and the guarantee is void.
    pub norm_bound: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SgaResult {
    /// `(1/N) * sum_i theta_i`, the scaffold's output.
    pub average: Vec<f64>,
    pub last: Vec<f64>,
}

/// Run SGA from the origin. The estimator receives the current iterate and
/// an RNG; determinism in `seed` is the caller's contract.
pub fn sga_run(
    dim: usize,
    config: &SgaConfig,
    seed: u64,
    mut estimator: impl FnMut(&[f64], &mut crate::Rng) -> Vec<f64>,
) -> Result<SgaResult, TrainError> {
    if !(config.lr > 0.0) || config.iters < 1 {
        return Err(TrainError::Config(format!(
            "sga needs lr > 0 and iters >= 1, got lr={} iters={}",
            config.lr, config.iters
        )));
    }
    let mut rng = crate::stream_rng(seed, STREAM_SGA, 0);
    let mut theta = vec![0.0f64; dim];
    let mut sum = vec![0.0f64; dim];
    for i in 0..config.iters {
        let v = estimator(&theta, &mut rng);
        debug_assert_eq!(v.len(), dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !n.is_finite() {
            return Err(TrainError::NonFinite { iteration: i });
        }
        if let Some(bound) = config.norm_bound {
            if n > bound {
                return Err(TrainError::UnboundedStep { iteration: i, norm: n, bound });
            }
        }
        for j in 0..dim {
            theta[j] += config.lr * v[j];
            sum[j] += theta[j];
        }
    }
    let average = sum.iter().map(|s| s / config.iters as f64).collect();
    Ok(SgaResult { average, last: theta })
}

/// Configuration for the 1-d concave check: maximize
/// `f(w) = 1 - (w - w_star)^2` from noisy unbiased gradients.
#[derive(Debug, Clone, Copy)]
pub struct ConcaveHarness {
    pub w_star: f64,
    /// Half-width of the uniform gradient noise.
    pub noise: f64,
    pub iters: usize,
    pub b_norm: f64,
    pub b_lip: f64,
    /// Independent runs averaged to estimate the expectation.
    pub runs: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConcaveOutcome {
    pub mean_f: f64,
    pub f_star: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Estimate `E[f(theta_bar)]` over independent SGA runs at the prescribed
/// rate and compare to `f(w_star) - b_norm * b_lip / sqrt(N)`.
pub fn concave_bound_check(h: &ConcaveHarness, seed: u64) -> Result<ConcaveOutcome, TrainError> {
    assert!(h.w_star.abs() < h.b_norm, "the optimum must lie inside the norm ball");
    let f = |w: f64| 1.0 - (w - h.w_star) * (w - h.w_star);
    let lr = h.b_norm / (h.b_lip * (h.iters as f64).sqrt());
    let config = SgaConfig { lr, iters: h.iters, norm_bound: Some(h.b_lip) };
    let mut total = 0.0;
    for run in 0..h.runs {
        let w_star = h.w_star;
        let noise = h.noise;
        let result = sga_run(1, &config, crate::derive_seed(seed, STREAM_SGA, run as u64), |w, rng| {
            let g = -2.0 * (w[0] - w_star);
            vec![g + rng.gen_range(-noise..noise)]
        })?;
        total += f(result.average[0]);
    }
    let mean_f = total / h.runs as f64;
    let f_star = f(h.w_star);
    let bound = f_star - h.b_norm * h.b_lip / (h.iters as f64).sqrt();
    Ok(ConcaveOutcome { mean_f, f_star, bound, holds: mean_f >= bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_linear_estimator_converges() {
        // v = -(w - c): iterates follow w_i = c (1 - (1-lr)^i) exactly.
        let c = 1.5f64;
        let lr = 0.2f64;
        let n = 50usize;
        let r = sga_run(1, &SgaConfig { lr, iters: n, norm_bound: None }, 0, |w, _| vec![-(w[0] - c)])
            .unwrap();
        let q = 1.0 - lr;
        let last_expect = c * (1.0 - q.powi(n as i32));
        assert!((r.last[0] - last_expect).abs() < 1e-12);
        // closed-form iterate average
        let avg_expect = c - (c / (n as f64)) * (q * (1.0 - q.powi(n as i32)) / lr);
        assert!((r.average[0] - avg_expect).abs() < 1e-12, "{} vs {avg_expect}", r.average[0]);
    }

    #[test]
    fn single_iteration_returns_scaled_first_estimate() {
        let r = sga_run(3, &SgaConfig { lr: 0.25, iters: 1, norm_bound: None }, 0, |_, _| vec![4.0, -8.0, 0.0])
            .unwrap();
        assert_eq!(r.average, vec![1.0, -2.0, 0.0]);
        assert_eq!(r.average, r.last);
    }

    #[test]
    fn norm_bound_violation_aborts() {
        let err = sga_run(1, &SgaConfig { lr: 0.1, iters: 5, norm_bound: Some(1.0) }, 0, |_, _| vec![3.0])
            .unwrap_err();
        match err {
            TrainError::UnboundedStep { iteration, norm, bound } => {
                assert_eq!(iteration, 0);
                assert_eq!(norm, 3.0);
                assert_eq!(bound, 1.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn concave_bound_holds_on_sample_configs() {
        for (i, (w_star, noise, iters)) in
            [(0.4, 0.5, 100usize), (-0.3, 0.25, 400), (0.0, 0.75, 225)].into_iter().enumerate()
        {
            let h = ConcaveHarness { w_star, noise, iters, b_norm: 1.0, b_lip: 4.0, runs: 30 };
            let out = concave_bound_check(&h, 1000 + i as u64).unwrap();
            assert!(out.holds, "config {i}: mean {} below bound {}", out.mean_f, out.bound);
        }
    }
}
