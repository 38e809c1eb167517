use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::finite_difference_check;

fn toy_line() -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..20).map(|i| -1.0 + 2.0 * i as f64 / 19.0).collect();
    let ys = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    (xs, ys)
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let spec = MlpSpec::new(3, &[5, 4], 2);
    let a = Mlp::init(spec.clone(), 7).unwrap();
    let b = Mlp::init(spec.clone(), 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, Mlp::init(spec.clone(), 8).unwrap());
    for l in 0..spec.depth() {
        let (w, bias) = a.layer(l);
        let (n_in, n_out) = spec.layer_dims()[l];
        let bound = glorot_bound(n_in, n_out);
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(bias.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn glorot_bound_for_two_by_three() {
    assert_relative_eq!(glorot_bound(2, 3), 1.2f64.sqrt(), max_relative = 1e-15);
    assert_relative_eq!(glorot_bound(2, 3), 1.0954, epsilon = 1e-4);
}

#[test]
fn spec_validation() {
    assert!(MlpSpec::new(2, &[4, 4, 4, 4], 1).validate().is_ok());
    assert!(MlpSpec::new(2, &[4, 4, 4, 4, 4], 1).validate().is_err());
    assert!(MlpSpec::new(2, &[4, 0], 1).validate().is_err());
    assert!(MlpSpec::new(0, &[4], 1).validate().is_err());
    assert_eq!(MlpSpec::new(3, &[5], 2).n_params(), 3 * 5 + 5 + 5 * 2 + 2);
}

#[test]
fn zero_weights_give_output_bias() {
    let spec = MlpSpec::new(3, &[4], 2);
    let mut net = Mlp::zeros(spec).unwrap();
    let (_, b) = net.layer_mut(1);
    b.copy_from_slice(&[0.25, -1.5]);
    assert_eq!(net.forward(&[0.3, -2.0, 9.0]).unwrap(), vec![0.25, -1.5]);
}

#[test]
fn identity_tanh_layer_at_origin() {
    // One hidden layer with W = I, b = 0 feeding a linear identity output.
    let spec = MlpSpec::new(2, &[2], 2);
    let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let net = Mlp::from_params(spec, params).unwrap();
    assert_eq!(net.forward(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn hand_built_one_two_one() {
    // hidden: w = [0.5, -1.0], b = [0.1, 0.2]; output: w = [2.0, 3.0], b = -0.5
    let spec = MlpSpec::new(1, &[2], 1);
    let params = vec![0.5, -1.0, 0.1, 0.2, 2.0, 3.0, -0.5];
    let net = Mlp::from_params(spec, params).unwrap();
    let x = 0.8;
    let h1 = (0.5 * x + 0.1f64).tanh();
    let h2 = (-1.0 * x + 0.2f64).tanh();
    let expected = 2.0 * h1 + 3.0 * h2 - 0.5;
    assert_eq!(net.forward(&[x]).unwrap(), vec![expected]);
}

#[test]
fn forward_rejects_wrong_dimension() {
    let net = Mlp::init(MlpSpec::new(3, &[2], 1), 0).unwrap();
    assert!(matches!(
        net.forward(&[1.0, 2.0]),
        Err(NeuralError::Dimension { expected: 3, found: 2 })
    ));
}

#[test]
fn tape_forward_matches_plain_forward() {
    let spec = MlpSpec {
        hidden_activation: Activation::Sigmoid,
        ..MlpSpec::new(3, &[6, 5], 2)
    };
    let net = Mlp::init(spec, 11).unwrap();
    let xs = [0.1, -0.4, 2.0, 1.5, 0.0, -0.3, 0.7, 0.7, 0.7];
    let tape = Tape::new();
    let p = tape.param_block(&net.params).unwrap();
    let x = tape.constant_block(&xs).unwrap();
    let out = net.forward_tape(&tape, p, x).unwrap();
    let plain = net.forward_batch(&xs);
    for (a, b) in out.values().iter().zip(&plain) {
        assert_relative_eq!(*a, *b, max_relative = 1e-14);
    }
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
    assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
    assert!(matches!(
        mse_loss::<f64>(&[], &[]),
        Err(NeuralError::EmptyBatch)
    ));
    assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn random_three_layer_mlp_gradient_matches_finite_differences() {
    let spec = MlpSpec::new(3, &[5, 4, 3], 1);
    let net = Mlp::init(spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let xs: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let err = finite_difference_check(
        |tape, p| -> Result<_, NeuralError> {
            let params = tape.stack(p);
            let inputs = tape.constant_block(&xs)?;
            let out = net.forward_tape(tape, params, inputs)?;
            mse_loss(&out.vars(), &ys)
        },
        &net.params,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn mse_grad_matches_tape_gradient_layout() {
    let net = Mlp::init(MlpSpec::new(2, &[3], 1), 5).unwrap();
    let xs = [0.5, -0.5, 1.0, 0.25];
    let ys = [1.0, -1.0];
    let mut tape = Tape::new();
    let (loss, grad) = net.mse_grad(&mut tape, &xs, &ys).unwrap();
    assert_relative_eq!(loss, net.mse(&xs, &ys).unwrap(), max_relative = 1e-14);
    let h = 1e-6;
    for i in 0..net.params.len() {
        let mut up = net.clone();
        up.params[i] += h;
        let mut down = net.clone();
        down.params[i] -= h;
        let fd = (up.mse(&xs, &ys).unwrap() - down.mse(&xs, &ys).unwrap()) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", grad[i]);
    }
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut opt = Adam::new(AdamConfig::default(), 2);
    opt.first_moment = vec![0.4, -0.2];
    opt.second_moment = vec![0.01, 0.04];
    let mut p = vec![1.0, 2.0];
    opt.step(&mut p, &[0.0, 0.0], None).unwrap();
    assert_relative_eq!(opt.first_moment[0], 0.36, max_relative = 1e-15);
    assert_relative_eq!(opt.second_moment[1], 0.04 * 0.999, max_relative = 1e-15);
    assert_eq!(opt.step_count, 1);
    // Decayed moments still move the parameters; a fresh optimizer does not.
    let mut fresh = Adam::new(AdamConfig::default(), 2);
    let mut q = vec![1.0, 2.0];
    fresh.step(&mut q, &[0.0, 0.0], None).unwrap();
    assert_eq!(q, vec![1.0, 2.0]);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut opt = Adam::new(AdamConfig::with_learning_rate(0.01), 3);
    let mut p = vec![0.0; 3];
    opt.step(&mut p, &[3.0, -0.002, 50.0], None).unwrap();
    assert_relative_eq!(p[0], -0.01, max_relative = 1e-6);
    assert_relative_eq!(p[1], 0.01, max_relative = 1e-4);
    assert_relative_eq!(p[2], -0.01, max_relative = 1e-6);
}

#[test]
fn adam_two_steps_by_hand() {
    let cfg = AdamConfig {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let mut opt = Adam::new(cfg, 1);
    let mut p = vec![1.0];
    opt.step(&mut p, &[2.0], None).unwrap();
    opt.step(&mut p, &[2.0], None).unwrap();
    // m1 = 0.2, v1 = 0.004, m̂ = 2, v̂ = 4 → Δ = 0.1·2/(2+1e-8)
    // m2 = 0.38, v2 = 0.007996, m̂ = 0.38/0.19 = 2, v̂ = 0.007996/0.001999 = 4
    let step = 0.1 * 2.0 / (2.0 + 1e-8);
    assert_relative_eq!(p[0], 1.0 - 2.0 * step, max_relative = 1e-14);
    assert_relative_eq!(opt.first_moment[0], 0.38, max_relative = 1e-14);
    assert_relative_eq!(opt.second_moment[0], 0.007996, max_relative = 1e-12);
}

#[test]
fn adam_refuses_non_finite_gradient() {
    let mut opt = Adam::new(AdamConfig::default(), 2);
    let mut p = vec![1.0, 1.0];
    let before = opt.clone();
    let err = opt.step(&mut p, &[0.1, f64::NAN], None).unwrap_err();
    assert!(matches!(err, NeuralError::NonFiniteGradient { index: 1 }));
    assert_eq!(opt, before);
    assert_eq!(p, vec![1.0, 1.0]);
}

#[test]
fn adam_mask_freezes_entries() {
    let mut opt = Adam::new(AdamConfig::default(), 3);
    let mut p = vec![1.0, 1.0, 1.0];
    opt.step(&mut p, &[1.0, 1.0, 1.0], Some(&[true, false, true])).unwrap();
    assert_eq!(p[1], 1.0);
    assert_eq!(opt.first_moment[1], 0.0);
    assert!(p[0] < 1.0 && p[2] < 1.0);
}

#[test]
fn trailing_layer_mask_covers_last_layers() {
    let spec = MlpSpec::new(2, &[3, 2], 1);
    let mask = spec.trailing_layer_mask(1);
    let off = spec.layer_offsets()[2];
    assert_eq!(mask.len(), spec.n_params());
    assert!(mask[..off].iter().all(|m| !m));
    assert!(mask[off..].iter().all(|m| *m));
    assert!(spec.trailing_layer_mask(3).iter().all(|m| *m));
}

#[test]
fn learns_a_line() {
    let (xs, ys) = toy_line();
    let mut net = Mlp::init(MlpSpec::new(1, &[8], 1), 1).unwrap();
    let control = EpochControl {
        epochs: 2000,
        batch_size: 20,
        seed: 0,
    };
    let trace = fit_regression(
        &mut net,
        &xs,
        &ys,
        AdamConfig::with_learning_rate(0.01),
        &control,
        None,
        None,
    )
    .unwrap();
    assert_eq!(trace.train.len(), 2000);
    let mse = net.mse(&xs, &ys).unwrap();
    assert!(mse < 1e-3, "final mse {mse}");
    assert!(trace.train[1999] <= trace.train[0]);
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let (xs, ys) = toy_line();
    let mut net = Mlp::init(MlpSpec::new(1, &[4], 1), 2).unwrap();
    let before = net.clone();
    let control = EpochControl {
        epochs: 0,
        batch_size: 4,
        seed: 0,
    };
    let trace = fit_regression(
        &mut net,
        &xs,
        &ys,
        AdamConfig::default(),
        &control,
        None,
        None,
    )
    .unwrap();
    assert!(trace.train.is_empty());
    assert_eq!(net, before);
}

#[test]
fn training_is_bit_reproducible() {
    let (xs, ys) = toy_line();
    let run = || {
        let mut net = Mlp::init(MlpSpec::new(1, &[6, 3], 1), 4).unwrap();
        let control = EpochControl {
            epochs: 50,
            batch_size: 4,
            seed: 9,
        };
        let trace = fit_regression(
            &mut net,
            &xs,
            &ys,
            AdamConfig::with_learning_rate(0.02),
            &control,
            None,
            Some((&xs, &ys)),
        )
        .unwrap();
        (net, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a.params, b.params);
    assert_eq!(ta, tb);
    assert_eq!(ta.validation.len(), 50);
}

#[test]
fn divergence_reports_epoch() {
    let (_, ys) = toy_line();
    let mut params = vec![0.0];
    let mut opt = Adam::new(AdamConfig::default(), 1);
    let control = EpochControl {
        epochs: 10,
        batch_size: 20,
        seed: 0,
    };
    let mut calls = 0;
    let err = train_loop::<NeuralError, _, _>(
        &mut params,
        &mut opt,
        None,
        &control,
        ys.len(),
        |_, _| {
            calls += 1;
            Ok((if calls == 3 { f64::INFINITY } else { 1.0 }, vec![0.1]))
        },
        |_| Ok(None),
    )
    .unwrap_err();
    assert!(matches!(err, NeuralError::Diverged { epoch: 3, .. }));
}

#[test]
fn batches_are_contiguous_and_cover_everything() {
    let batches = contiguous_batches(23, 5, 3);
    assert_eq!(batches.len(), 5);
    let mut starts: Vec<_> = batches.iter().map(|r| r.start).collect();
    starts.sort();
    assert_eq!(starts, vec![0, 5, 10, 15, 20]);
    assert_eq!(batches.iter().map(|r| r.len()).sum::<usize>(), 23);
    assert_eq!(batches, contiguous_batches(23, 5, 3));
}

#[test]
fn text_round_trip_is_bit_exact() {
    let net = Mlp::init(MlpSpec::new(3, &[7, 2], 2), 21).unwrap();
    let text = net.to_text();
    assert!(text.contains("layer0.weight.6.2 = "));
    assert!(text.contains("layer2.bias.1 = "));
    let back = Mlp::from_text(&text).unwrap();
    assert_eq!(back.spec, net.spec);
    for (a, b) in back.params.iter().zip(&net.params) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let linear = Mlp::init(MlpSpec::new(2, &[], 1), 0).unwrap();
    assert_eq!(Mlp::from_text(&linear.to_text()).unwrap(), linear);
    assert!(Mlp::from_text("input_dim = 2\n").is_err());
}

proptest! {
    #[test]
    fn loss_is_permutation_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
        seed in any::<u64>(),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let a = mse_loss(&p, &t).unwrap();
        let b = mse_loss(&pp, &tt).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}
