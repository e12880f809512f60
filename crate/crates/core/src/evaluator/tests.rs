use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::random_image;

fn tiny_desc(actions: usize, dropout_p: f64) -> ModelDescriptor {
    ModelDescriptor {
        architecture: Architecture {
            conv_channels: vec![2, 3],
            head_hidden: 5,
        },
        catalog: "custom".into(),
        actions,
        input_resolution: 6,
        dropout_p,
    }
}

fn random_rho(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let raw: Vec<f32> = (0..n).map(|_| rng.random::<f32>() + 0.01).collect();
    let sum: f32 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn random_batch(seed: u64, actions: usize, size: usize) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| Triplet {
            image: Arc::new(random_image(seed + i as u64, 6, 6)),
            ret: rng.random::<f64>(),
            rho: random_rho(&mut rng, actions),
        })
        .collect()
}

#[test]
fn output_is_distribution_and_bounded() {
    let eval = Evaluator::new(tiny_desc(7, 0.0), 3).unwrap();
    for seed in 0..5 {
        let out = eval.forward(&random_image(seed, 9, 7)).unwrap();
        let sum: f64 = out.policy.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(out.policy.iter().all(|&p| p >= 0.0));
        assert!(out.value > 0.0 && out.value < 1.0);
    }
}

#[test]
fn inference_forward_is_deterministic() {
    let eval = Evaluator::new(tiny_desc(4, 0.6), 11).unwrap();
    let img = random_image(1, 6, 6);
    let a = eval.forward(&img).unwrap();
    let b = eval.forward(&img).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    for (x, y) in a.policy.iter().zip(&b.policy) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn dropout_with_zero_probability_equals_inference_exactly() {
    let eval = Evaluator::new(tiny_desc(4, 0.0), 5).unwrap();
    let img = random_image(2, 6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trained = forward_with_dropout(&eval, &img, &mut rng).unwrap();
    let plain = eval.forward(&img).unwrap();
    assert_eq!(trained.value.to_bits(), plain.value.to_bits());
    for (x, y) in trained.policy.iter().zip(&plain.policy) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn dropout_actually_perturbs() {
    let eval = Evaluator::new(tiny_desc(4, 0.6), 5).unwrap();
    let img = random_image(2, 6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trained = forward_with_dropout(&eval, &img, &mut rng).unwrap();
    let plain = eval.forward(&img).unwrap();
    assert!(trained.policy != plain.policy || trained.value != plain.value);
}

#[test]
fn loss_examples() {
    // v = r and a one-hot rho matched by the policy: both terms vanish
    let out = EvaluatorOutput {
        policy: vec![1.0, 0.0, 0.0],
        value: 0.7,
    };
    let loss = Evaluator::loss(&out, 0.7, &[1.0, 0.0, 0.0], 1.0).unwrap();
    assert!(loss.abs() < 1e-9);

    // v = 0.5, r = 1, lambda = 1, rho = pi: 0.25 plus the entropy of rho
    let pi = [0.3f64, 0.2, 0.5];
    let out = EvaluatorOutput {
        policy: pi.to_vec(),
        value: 0.5,
    };
    let rho: Vec<f32> = pi.iter().map(|&p| p as f32).collect();
    let expected = 0.25
        + pi
            .iter()
            .zip(&rho)
            .map(|(&p, &q)| -(q as f64) * (p + 1e-12).ln())
            .sum::<f64>();
    let loss = Evaluator::loss(&out, 1.0, &rho, 1.0).unwrap();
    assert!((loss - expected).abs() < 1e-12);

    // length mismatch is an error
    assert!(Evaluator::loss(&out, 1.0, &[0.5, 0.5], 1.0).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    // Seeds frozen to a configuration where no activation sits inside the
    // finite-difference window of a rectifier boundary; near a kink the
    // central difference itself is invalid (one-sided slope).
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
    let mut eval = Evaluator::new(tiny_desc(3, 0.0), 0).unwrap();
    let img = random_image(0, 6, 6);
    let rho = random_rho(&mut rng, 3);
    let target_r = rng.random::<f64>();
    let lambda = 0.5 + rng.random::<f64>();

    let (_, grads) = eval.loss_and_gradients(&img, target_r, &rho, lambda).unwrap();
    let h = 1e-3;
    let mut max_rel = 0.0f64;
    for t in 0..eval.tensors().len() {
        for i in 0..eval.tensors()[t].len() {
            eval.nudge_param(t, i, h);
            let plus = eval.loss_for(&img, target_r, &rho, lambda).unwrap();
            eval.nudge_param(t, i, -2.0 * h);
            let minus = eval.loss_for(&img, target_r, &rho, lambda).unwrap();
            eval.nudge_param(t, i, h);
            let fd = (plus - minus) / (2.0 * h);
            let g = grads[t][i];
            let denom = g.abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((g - fd).abs() / denom);
        }
    }
    assert!(max_rel <= 1e-4, "max relative error {max_rel}");
}

#[test]
fn save_load_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let eval = Evaluator::new(tiny_desc(4, 0.6), 5).unwrap();
    let p1 = dir.path().join("a.model");
    let p2 = dir.path().join("b.model");
    eval.save(&p1).unwrap();
    let loaded = Evaluator::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.descriptor(), eval.descriptor());
}

#[test]
fn load_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let eval = Evaluator::new(tiny_desc(4, 0.6), 5).unwrap();
    let path = dir.path().join("m.model");
    eval.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    // bad magic
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    match Evaluator::load(&path) {
        Err(Error::ModelFormat { detail, .. }) => assert!(detail.contains("magic")),
        other => panic!("expected magic error, got {other:?}"),
    }

    // version mismatch
    let mut bad = bytes.clone();
    bad[4] = 99;
    std::fs::write(&path, &bad).unwrap();
    match Evaluator::load(&path) {
        Err(Error::ModelFormat { detail, .. }) => assert!(detail.contains("version")),
        other => panic!("expected version error, got {other:?}"),
    }

    // truncated tensor payload: the error names the tensor
    let bad = bytes[..bytes.len() - 3].to_vec();
    std::fs::write(&path, &bad).unwrap();
    match Evaluator::load(&path) {
        Err(Error::ModelFormat { detail, .. }) => {
            assert!(detail.contains("value.fc2.bias"), "{detail}")
        }
        other => panic!("expected truncation error, got {other:?}"),
    }

    // trailing garbage
    let mut bad = bytes.clone();
    bad.extend_from_slice(&[1, 2, 3]);
    std::fs::write(&path, &bad).unwrap();
    match Evaluator::load(&path) {
        Err(Error::ModelFormat { detail, .. }) => assert!(detail.contains("trailing")),
        other => panic!("expected trailing-bytes error, got {other:?}"),
    }
}

#[test]
fn load_rejects_descriptor_catalog_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut desc = tiny_desc(37, 0.0);
    desc.catalog = "fivek".into(); // fivek has 29 actions, not 37
    let eval = Evaluator::new(desc, 5).unwrap();
    let path = dir.path().join("m.model");
    eval.save(&path).unwrap();
    assert!(matches!(
        Evaluator::load(&path),
        Err(Error::ModelFormat { .. })
    ));
}

#[test]
fn catalog_action_count_is_enforced() {
    let mut desc = tiny_desc(29, 0.0);
    desc.catalog = "fivek".into();
    let eval = Evaluator::new(desc, 5).unwrap();
    eval.validate_catalog(&crate::ops::Catalog::fivek()).unwrap();
    match eval.validate_catalog(&crate::ops::Catalog::lol()) {
        Err(Error::ModelCatalogMismatch {
            model_actions: 29,
            catalog_actions: 37,
            ..
        }) => {}
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn zero_learning_rate_only_applies_weight_decay() {
    let batch = random_batch(6, 4, 3);

    let cfg = TrainConfig {
        learning_rate: 0.0,
        weight_decay: 0.01,
        ..TrainConfig::default()
    };
    let mut eval = Evaluator::new(tiny_desc(4, 0.0), 5).unwrap();
    let before: Vec<Vec<f64>> = eval.tensors().iter().map(|t| t.data.clone()).collect();
    let mut trainer = Trainer::new(cfg, &eval);
    trainer.train_step(&mut eval, &batch).unwrap();
    for (t, old_tensor) in eval.tensors().iter().zip(&before) {
        for (&new, &old) in t.data.iter().zip(old_tensor) {
            assert_eq!(new.to_bits(), (old - 0.01 * old).to_bits());
        }
    }

    // with weight decay also zero the step is a bit-exact no-op
    let cfg = TrainConfig {
        learning_rate: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut eval = Evaluator::new(tiny_desc(4, 0.0), 5).unwrap();
    let before: Vec<Vec<f64>> = eval.tensors().iter().map(|t| t.data.clone()).collect();
    let mut trainer = Trainer::new(cfg, &eval);
    trainer.train_step(&mut eval, &batch).unwrap();
    for (t, old_tensor) in eval.tensors().iter().zip(&before) {
        for (&new, &old) in t.data.iter().zip(old_tensor) {
            assert_eq!(new.to_bits(), old.to_bits());
        }
    }
}

#[test]
fn training_is_deterministic_under_equal_seeds() {
    let batch = random_batch(14, 4, 4);
    let run = || {
        let mut eval = Evaluator::new(tiny_desc(4, 0.6), 21).unwrap();
        let mut trainer = Trainer::new(
            TrainConfig {
                seed: 3,
                ..TrainConfig::default()
            },
            &eval,
        );
        for _ in 0..4 {
            trainer.train_step(&mut eval, &batch).unwrap();
        }
        eval
    };
    let a = run();
    let b = run();
    for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
        for (x, y) in ta.data.iter().zip(&tb.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn loss_is_non_increasing_on_a_fixed_batch() {
    let batch = random_batch(30, 4, 4);
    let mut eval = Evaluator::new(tiny_desc(4, 0.0), 8).unwrap();
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &eval);
    let losses: Vec<f64> = (0..25)
        .map(|_| trainer.train_step(&mut eval, &batch).unwrap())
        .collect();
    for k in 5..losses.len() - 1 {
        assert!(
            losses[k + 1] <= losses[k],
            "loss increased at step {k}: {losses:?}"
        );
    }
}

#[test]
fn non_finite_loss_names_the_batch_index() {
    let mut eval = Evaluator::new(tiny_desc(4, 0.0), 8).unwrap();
    eval.nudge_param(0, 0, f64::NAN);
    let batch = random_batch(2, 4, 3);
    let mut trainer = Trainer::new(TrainConfig::default(), &eval);
    match trainer.train_step(&mut eval, &batch) {
        Err(Error::NonFiniteLoss { batch_index: 0 }) => {}
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn empty_batch_is_rejected() {
    let mut eval = Evaluator::new(tiny_desc(4, 0.0), 8).unwrap();
    let mut trainer = Trainer::new(TrainConfig::default(), &eval);
    assert!(trainer.train_step(&mut eval, &[]).is_err());
}
