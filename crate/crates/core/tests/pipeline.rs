//! Cross-module integration: dataset files feeding training feeding
//! evaluation, checkpoint round trips through the training loop, and the
//! RLVF loop improving an enumerable micro-system end to end.

use selfprove_core::data::{generate_dataset, Dataset};
use selfprove_core::encoding::Vocabulary;
use selfprove_core::eval::{evaluate, HonestReplayModel};
use selfprove_core::model::{load_checkpoint, save_checkpoint, SeqModel, TabularModel, TrainExample};
use selfprove_core::proof_system::{BezoutVerifier, TableVerifier};
use selfprove_core::training::{
    rlvf_batch_step, train, IterateRule, LrSchedule, MicroRolloutProtocol,
    OptimizerKind, TlSource, TrainArtifacts, TrainConfig, TrainMode, TrainTask,
};
use std::collections::HashSet;

fn tl_config(iters: usize, batch: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::TlCrossEntropy,
        lr,
        iters,
        batch,
        iterate_rule: IterateRule::Last,
        seed,
        optimizer: OptimizerKind::Sgd,
        schedule: LrSchedule::Constant,
        eval_every: 0,
        clip: None,
    }
}

#[test]
fn dataset_to_training_to_eval_improves_tabular_model() {
    // Small world (max 12) where an order-3 tabular model can pick up real
    // signal from the dataset within seconds.
    let dataset = generate_dataset(12, 10, 0, 3_000, 1).unwrap();
    let model = TabularModel::new(dataset.vocab.size(), 3);
    let verifier = BezoutVerifier::new(dataset.vocab.clone());
    let held_out = selfprove_core::data::held_out_inputs(12, 60, 99, &HashSet::new()).unwrap();

    let theta0 = model.init_params(0);
    let before = evaluate(&model, &theta0, &verifier, &held_out, 0).unwrap();

    let result = train(
        &model,
        theta0,
        &tl_config(600, 16, 0.8, 5),
        &TrainTask::Tl(TlSource::Dataset(&dataset)),
        &mut |_| None,
        &TrainArtifacts::default(),
    )
    .unwrap();
    let after = evaluate(&model, &result.theta, &verifier, &held_out, 0).unwrap();
    assert!(
        after.correct > before.correct,
        "correctness did not improve: {} -> {}",
        before.correct,
        after.correct
    );
    assert!(after.verifiable >= before.verifiable);
    assert!(after.verifiable <= after.correct);
}

#[test]
fn checkpoint_resumes_training() {
    let dataset = generate_dataset(15, 10, 0, 500, 2).unwrap();
    let model = TabularModel::new(dataset.vocab.size(), 2);
    let dir = tempfile::tempdir().unwrap();

    let first = train(
        &model,
        model.init_params(0),
        &tl_config(20, 8, 0.5, 7),
        &TrainTask::Tl(TlSource::Dataset(&dataset)),
        &mut |_| None,
        &TrainArtifacts::default(),
    )
    .unwrap();
    let ckpt = dir.path().join("half.ckpt");
    save_checkpoint(&ckpt, &model, 7, &first.theta).unwrap();
    let (loaded_model, seed, theta_resumed) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(seed, 7);
    assert_eq!(loaded_model.descriptor(), model.descriptor());
    for (a, b) in theta_resumed.iter().zip(&first.theta) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    // warm-started training continues from the loaded parameters
    let resumed = train(
        loaded_model.as_ref(),
        theta_resumed,
        &tl_config(20, 8, 0.5, 8),
        &TrainTask::Tl(TlSource::Dataset(&dataset)),
        &mut |_| None,
        &TrainArtifacts::default(),
    )
    .unwrap();
    assert!(resumed.theta.iter().zip(&first.theta).any(|(a, b)| a != b));
}

#[test]
fn rlvf_improves_micro_system_verifiability() {
    // Accept set: y must echo the input, the answer is free. An untrained
    // uniform model accepts 1/3 of the time; RLVF should push it up.
    let mut accept = HashSet::new();
    for x in 0..3u32 {
        for a in 0..3u32 {
            accept.insert((vec![x], vec![x], vec![a]));
        }
    }
    let verifier = TableVerifier { queries: vec![vec![2]], query_len: 1, answer_len: 1, accept };
    let protocol = MicroRolloutProtocol {
        inputs: vec![(0, 0.5), (1, 0.5)],
        verifier,
        y_len: 1,
    };
    let model = TabularModel::new(3, 1);
    let mut theta = model.init_params(0);

    let mut accepted_early = 0usize;
    let mut accepted_late = 0usize;
    let n_iters = 300usize;
    for i in 0..n_iters {
        let out = rlvf_batch_step(&model, &mut theta, &protocol, 0.4, 8, i as u64, i).unwrap();
        if i < 50 {
            accepted_early += out.accepted;
        }
        if i >= n_iters - 50 {
            accepted_late += out.accepted;
        }
    }
    assert!(
        accepted_late > accepted_early + 40,
        "acceptance rate did not improve: early {accepted_early}, late {accepted_late} (of 400 each)"
    );
}

#[test]
fn honest_oracle_end_to_end_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("dataset.txt");
    let vocab_path = dir.path().join("vocab.txt");
    generate_dataset(60, 10, 2, 300, 9).unwrap().save(&ds_path, &vocab_path).unwrap();
    let ds = Dataset::load(&ds_path).unwrap();
    let vocab = ds.vocab.clone();
    let verifier = BezoutVerifier::new(vocab.clone());
    let oracle = HonestReplayModel::new(vocab);
    let held = selfprove_core::data::held_out_inputs(60, 50, 9, &ds.input_pairs()).unwrap();
    let report = evaluate(&oracle, &[], &verifier, &held, 0).unwrap();
    assert_eq!((report.correct, report.verifiable), (50, 50));
}

#[test]
fn faithful_and_cross_entropy_modes_differ_only_by_weights() {
    let vocab = Vocabulary::new(10, 0).unwrap();
    let dataset = generate_dataset(10, 10, 0, 100, 3).unwrap();
    let model = TabularModel::new(vocab.size(), 1);
    let ex = TrainExample {
        tokens: dataset.records[0].seq.tokens.clone(),
        mask: dataset.records[0].seq.mask.clone(),
    };
    let theta = model.init_params(0);
    let faithful = model
        .weighted_masked_grad(&theta, &[ex.clone()], &|_, la| la.exp())
        .unwrap();
    let ce = model.weighted_masked_grad(&theta, &[ex], &|_, _| 1.0).unwrap();
    let alpha = faithful.example_weight[0];
    assert!(alpha > 0.0 && alpha < 1.0);
    for (f, c) in faithful.direction.iter().zip(&ce.direction) {
        assert!((f - alpha * c).abs() < 1e-12);
    }
}
