//! Finite-difference checks of backward on non-default shapes and the mean
//! reduction.

use ankleband::nn::{cross_entropy, Mode, Model, ModelConfig, Reduction, TensorRole};
use ankleband::training::init_weights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(config: ModelConfig, n: usize, reduction: Reduction, seed: u64) -> f64 {
    let mut model: Model<f64> = init_weights(config, seed).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for role in [TensorRole::Bn1Gamma, TensorRole::Bn2Gamma] {
        for g in model.tensor_mut(role).iter_mut() {
            *g = rng.random_range(0.5..1.5);
        }
    }
    let input: Vec<f64> = (0..n * config.input_len())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let classes: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..config.classes))
        .collect();
    let loss = |m: &Model<f64>| {
        let out = m.forward(&input, Mode::Train).unwrap();
        cross_entropy(&out.probs, &classes, config.classes, reduction).unwrap()
    };
    let out = model.forward(&input, Mode::Train).unwrap();
    let grads = model
        .backward(out.trace.as_ref().unwrap(), &classes, reduction)
        .unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    for (ti, &role) in TensorRole::TRAINABLE.iter().enumerate() {
        assert_eq!(analytic[ti].len(), model.tensor(role).len());
        for i in 0..analytic[ti].len() {
            let p = model.tensor(role)[i];
            let h = 1e-5 * p.abs().max(1.0);
            let mut at = |x: f64| {
                model.tensor_mut(role)[i] = x;
                loss(&model)
            };
            let numeric = (at(p - 2.0 * h) - 8.0 * at(p - h) + 8.0 * at(p + h) - at(p + 2.0 * h))
                / (12.0 * h);
            model.tensor_mut(role)[i] = p;
            let a = analytic[ti][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn small_model_sum_and_mean() {
    let config = ModelConfig {
        k: 15,
        conv_out_channels: 3,
        hidden: 7,
        ..ModelConfig::default()
    };
    for (seed, reduction) in [(1, Reduction::Sum), (2, Reduction::Mean)] {
        let worst = check(config, 6, reduction, seed);
        assert!(worst < 1e-4, "{reduction:?}: {worst:e}");
    }
}

#[test]
fn overlapping_kernel_and_two_sample_batch() {
    let config = ModelConfig {
        k: 20,
        conv_out_channels: 4,
        conv_kernel: 5,
        conv_stride: 2,
        hidden: 6,
        classes: 3,
        ..ModelConfig::default()
    };
    let worst = check(config, 2, Reduction::Sum, 3);
    assert!(worst < 1e-4, "{worst:e}");
}
