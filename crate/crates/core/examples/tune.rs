//! Scratch driver for sizing desk-scale runs. Reads hyperparameters from
//! environment variables so sweeps are one-line shell loops.

use selfprove_core::data::{held_out_inputs, LogUniformSampler};
use selfprove_core::encoding::Vocabulary;
use selfprove_core::eval::{evaluate, run_gcd_training, GcdRecipe};
use selfprove_core::proof_system::BezoutVerifier;
use selfprove_core::model::SeqModel;
use selfprove_core::training::{
    train, OptimizerKind, TlSource, TrainArtifacts, TrainMode, TrainTask,
};
use std::time::Instant;

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Fresh-sample training with a seed-disjoint (not de-duplicated) held-out
/// set; mirrors the sampler pathway of the CLI.
fn run_stream(recipe: &GcdRecipe, seed: u64) {
    let vocab = Vocabulary::new(recipe.base, recipe.cutoff).unwrap();
    let sampler = LogUniformSampler::new(recipe.max).unwrap();
    // pad length: worst-case layout for this (max, base, cutoff)
    let digits = selfprove_core::encoding::digits_upper_bound(recipe.max, recipe.base);
    let pad_len = (2 + digits) * (5 + 3 * recipe.cutoff);
    let model = recipe.model_for(pad_len).unwrap();
    let held_out = held_out_inputs(recipe.max, recipe.eval_n, seed, &Default::default()).unwrap();
    let verifier = BezoutVerifier::new(vocab.clone());
    let mut hook = |theta: &[f64]| -> Option<(f64, f64)> {
        evaluate(&model, theta, &verifier, &held_out, seed)
            .ok()
            .map(|r| (r.correctness(), r.verifiability()))
    };
    let t0 = Instant::now();
    let config = recipe.train_config(seed);
    let source = TlSource::Stream { sampler: &sampler, vocab: &vocab, pad_len };
    let result = train(&model, model.init_params(seed), &config, &TrainTask::Tl(source), &mut hook, &TrainArtifacts::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for row in &result.rows {
        eprintln!(
            "iter {:>6}  loss {:>9}  corr {:>7}  ver {:>7}",
            row.iter,
            row.loss.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.correctness.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.verifiability.map(|v| format!("{v:.4}")).unwrap_or_default(),
        );
    }
    let report = evaluate(&model, &result.theta, &verifier, &held_out, seed).unwrap();
    eprintln!(
        "FINAL corr={:.4} ver={:.4} decode_failures={} n={} wall={dt:.1}s ({:.1} ms/iter)",
        report.correctness(),
        report.verifiability(),
        report.decode_failures,
        report.n,
        dt * 1000.0 / recipe.iters as f64,
    );
}

fn main() {
    let recipe = GcdRecipe {
        max: env("MAX", 100),
        base: env("BASE", 10),
        cutoff: env("CUTOFF", 0),
        n_train: env("N_TRAIN", 20_000),
        iters: env("ITERS", 2_000),
        batch: env("BATCH", 64),
        lr: env("LR", 1e-3),
        optimizer: OptimizerKind::AdamW {
            beta1: env("BETA1", 0.9),
            beta2: env("BETA2", 0.95),
            eps: 1e-8,
            weight_decay: env("WD", 0.0),
        },
        schedule: if env("COSINE", 0u64) == 1 {
            selfprove_core::training::LrSchedule::Cosine { warmup: env("WARMUP", 100), final_frac: env("FINAL_FRAC", 0.1) }
        } else {
            selfprove_core::training::LrSchedule::Constant
        },
        clip: Some(env("CLIP", 2.0)),
        mode: TrainMode::TlCrossEntropy,
        width: env("WIDTH", 64),
        layers: env("LAYERS", 2),
        heads: env("HEADS", 4),
        mlp_ratio: env("MLP", 4),
        eval_n: env("EVAL_N", 1_000),
        eval_every: env("EVAL_EVERY", 200),
        stream: false,
    };
    let seed = env("SEED", 0u64);
    let sgd = env("SGD", 0u64);
    let recipe = if sgd == 1 {
        GcdRecipe { optimizer: OptimizerKind::Sgd, ..recipe }
    } else {
        recipe
    };
    eprintln!("recipe: {recipe:?} seed={seed}");
    if env("SAMPLER", 0u64) == 1 {
        run_stream(&recipe, seed);
        return;
    }
    let t0 = Instant::now();
    let run = run_gcd_training(&recipe, seed, &TrainArtifacts::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for row in &run.result.rows {
        eprintln!(
            "iter {:>6}  loss {:>9}  corr {:>7}  ver {:>7}",
            row.iter,
            row.loss.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.correctness.map(|v| format!("{v:.4}")).unwrap_or_default(),
            row.verifiability.map(|v| format!("{v:.4}")).unwrap_or_default(),
        );
    }
    eprintln!(
        "FINAL corr={:.4} ver={:.4} decode_failures={} n={} wall={dt:.1}s ({:.1} ms/iter)",
        run.final_report.correctness(),
        run.final_report.verifiability(),
        run.final_report.decode_failures,
        run.final_report.n,
        dt * 1000.0 / recipe.iters as f64,
    );
}
