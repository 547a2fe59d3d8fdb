//! Pre-validation of the RLVF amplification path: train a short base run,
//! snapshot inside the 40-60% verifiability band, then continue with
//! verifier-gated updates and report the trajectory.

use selfprove_core::data::LogUniformSampler;
use selfprove_core::encoding::Vocabulary;
use selfprove_core::eval::{evaluate, run_gcd_stream, GcdRecipe};
use selfprove_core::proof_system::BezoutVerifier;
use selfprove_core::training::{
    train, GcdRolloutProtocol, LrSchedule, OptimizerKind, TrainArtifacts, TrainMode, TrainTask,
};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed = env("SEED", 0u64);
    let mut base_recipe = GcdRecipe {
        max: 100,
        base: 10,
        cutoff: 0,
        n_train: 0,
        iters: env("BASE_ITERS", 1_600),
        batch: 64,
        lr: 1.5e-3,
        optimizer: OptimizerKind::AdamW { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.1 },
        schedule: LrSchedule::Cosine { warmup: 100, final_frac: 0.1 },
        clip: Some(2.0),
        mode: TrainMode::TlCrossEntropy,
        width: 64,
        layers: 2,
        heads: 4,
        mlp_ratio: 4,
        eval_n: 1000,
        eval_every: 100,
        stream: true,
    };
    base_recipe.eval_every = env("BASE_EVAL_EVERY", 100);
    let dir = tempfile::tempdir().unwrap();
    let artifacts = TrainArtifacts { metrics_path: None, snapshot_dir: Some(dir.path().to_path_buf()) };
    let base = run_gcd_stream(&base_recipe, seed, &artifacts).unwrap();
    let band = base
        .result
        .rows
        .iter()
        .find(|r| r.verifiability.map(|v| (0.40..=0.60).contains(&v)).unwrap_or(false))
        .expect("no snapshot in band");
    eprintln!("base band snapshot: iter {} ver {:.4}", band.iter, band.verifiability.unwrap());
    let snapshot = dir.path().join(format!("snapshot-{:08}.ckpt", band.iter));
    let (model_box, _s, theta0) = selfprove_core::model::load_checkpoint(&snapshot).unwrap();
    let model = model_box.as_ref();

    let vocab = Vocabulary::new(10, 0).unwrap();
    let verifier = BezoutVerifier::new(vocab.clone());
    let protocol = GcdRolloutProtocol {
        vocab: vocab.clone(),
        sampler: LogUniformSampler::new(100).unwrap(),
        verifier: BezoutVerifier::new(vocab.clone()),
        max_new: 24,
    };
    let optimizer = if env("RLVF_ADAM", 0u64) == 1 {
        OptimizerKind::AdamW { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    } else {
        OptimizerKind::Sgd
    };
    let config = selfprove_core::training::TrainConfig {
        mode: TrainMode::Rlvf,
        lr: env("RLVF_LR", 1e-4),
        iters: env("RLVF_ITERS", 2_000),
        batch: env("RLVF_BATCH", 16),
        iterate_rule: selfprove_core::training::IterateRule::Last,
        seed,
        optimizer,
        schedule: LrSchedule::Constant,
        eval_every: env("RLVF_EVAL_EVERY", 500),
        clip: Some(2.0),
    };
    let t0 = std::time::Instant::now();
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        evaluate(model, theta, &verifier, &base.held_out, seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };
    let result = train(model, theta0, &config, &TrainTask::Rlvf(&protocol), &mut hook, &TrainArtifacts::default()).unwrap();
    for row in &result.rows {
        eprintln!(
            "rlvf iter {:>6}  accept {:>7}  corr {:>7}  ver {:>7}",
            row.iter,
            row.accept_rate.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.correctness.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.verifiability.map(|v| format!("{v:.4}")).unwrap_or_default(),
        );
    }
    let after = evaluate(model, &result.theta, &verifier, &base.held_out, seed).unwrap();
    eprintln!(
        "RLVF FINAL ver {:.4} (base {:.4}, gain {:+.4}) wall={:.1}s ({:.1} ms/iter)",
        after.verifiability(),
        band.verifiability.unwrap(),
        after.verifiability() - band.verifiability.unwrap(),
        t0.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64() * 1000.0 / config.iters as f64,
    );
}
