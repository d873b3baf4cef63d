//! Supervised training: fan-in uniform initialization, bias-corrected Adam,
//! and a seeded mini-batch loop over labeled windows.

use crate::gesture::NUM_CLASSES;
use crate::labeling::{class_histogram, LabeledWindow};
use crate::nn::{
    argmax, cross_entropy, Gradients, Mode, Model, ModelConfig, NnError, Reduction, TensorRole,
};
use crate::runtime::bundle::{self, BundleError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains only class {0}; at least two classes are required")]
    SingleClass(usize),
    #[error("window length {got} does not match model input length {expected}")]
    WindowLength { got: usize, expected: usize },
    #[error("non-finite gradient in {0}; step rejected")]
    NonFiniteGradient(&'static str),
    #[error("optimizer state does not match the model")]
    StateMismatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_epsilon: f32,
    pub seed: u64,
    pub shuffle: bool,
    pub reduction: Reduction,
    pub model: ModelConfig,
    /// Permits `epochs = 0`, returning the initialized model.
    pub debug_allow_zero_epochs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            reduction: Reduction::Sum,
            model: ModelConfig::default(),
            debug_allow_zero_epochs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 && !self.debug_allow_zero_epochs {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Adam moments for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = TensorRole::TRAINABLE
            .iter()
            .map(|&r| vec![0.0; model.tensor(r).len()])
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One bias-corrected Adam update of the trainable tensors. Running
/// batch-norm statistics are not touched. Non-finite gradients leave model and
/// state unchanged.
pub fn adam_step(
    model: &mut Model<f32>,
    grads: &Gradients<f32>,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (role, g) in TensorRole::TRAINABLE.iter().zip(grads.tensors()) {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(role.name()));
        }
    }
    let grad_tensors = grads.tensors();
    let params = model.trainable_mut();
    if state.first_moment.len() != params.len()
        || params
            .iter()
            .zip(&state.first_moment)
            .any(|(p, m)| p.len() != m.len())
    {
        return Err(TrainError::StateMismatch);
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (t, param) in params.into_iter().enumerate() {
        let g = grad_tensors[t];
        let m = &mut state.first_moment[t];
        let v = &mut state.second_moment[t];
        for i in 0..param.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
    Ok(())
}

/// Uniform `±1/sqrt(fan_in)` weights and biases; batch norm starts as the
/// identity (gamma 1, beta 0, running mean 0, running variance 1).
pub fn init_weights(config: ModelConfig, seed: u64) -> Result<Model<f32>, NnError> {
    let mut model = Model::<f32>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_fan_in = (config.in_channels * config.conv_kernel) as f32;
    let fills = [
        (TensorRole::ConvWeight, conv_fan_in),
        (TensorRole::Fc1Weight, config.flat() as f32),
        (TensorRole::Fc1Bias, config.flat() as f32),
        (TensorRole::Fc2Weight, config.hidden as f32),
        (TensorRole::Fc2Bias, config.hidden as f32),
    ];
    for (role, fan_in) in fills {
        if fan_in == 0.0 {
            continue;
        }
        let bound = 1.0 / fan_in.sqrt();
        for v in model.tensor_mut(role).iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Loss summed over every training window of the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub class_histogram: [usize; NUM_CLASSES],
    /// Summed eval-mode loss of the freshly initialized model.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub rejected_steps: usize,
    pub config: TrainConfig,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Eval-mode summed loss and accuracy of `model` over `windows`.
pub fn evaluate_loss(
    model: &Model<f32>,
    windows: &[&LabeledWindow],
) -> Result<(f64, f64), NnError> {
    let mut ws = crate::nn::Workspace::new(&model.config);
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for w in windows {
        model.infer_into(w.window.values(), &mut ws)?;
        loss += cross_entropy(ws.probs(), &[w.class], model.config.classes, Reduction::Sum)? as f64;
        if argmax(ws.probs()) == w.class {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / windows.len().max(1) as f64))
}

/// Splits `n` shuffled indices into batches of `size`; a trailing batch of a
/// single sample is merged into the previous one (batch norm needs two).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

/// Trains a fresh model on `windows`. The result is a pure function of
/// `(windows, cfg)`.
pub fn fit(
    windows: &[&LabeledWindow],
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainReport), TrainError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let expected = cfg.model.input_len();
    if let Some(w) = windows.iter().find(|w| w.window.values().len() != expected) {
        return Err(TrainError::WindowLength {
            got: w.window.values().len(),
            expected,
        });
    }
    let histogram = class_histogram(windows.iter().copied());
    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| histogram[c] > 0).collect();
    if present.len() < 2 {
        return Err(TrainError::SingleClass(present[0]));
    }
    log::info!(
        "training on {} windows, class histogram {histogram:?}",
        windows.len()
    );

    let mut model = init_weights(cfg.model, cfg.seed)?;
    let (initial_loss, _) = evaluate_loss(&model, windows)?;
    let mut state = OptimizerState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut input: Vec<f32> = Vec::with_capacity(cfg.batch_size * expected * 2);
    let mut labels: Vec<usize> = Vec::with_capacity(cfg.batch_size * 2);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut rejected = 0usize;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss = 0.0f64;
        let mut correct = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            input.clear();
            labels.clear();
            for &i in batch {
                input.extend_from_slice(windows[i].window.values());
                labels.push(windows[i].class);
            }
            let out = model.forward(&input, Mode::Train)?;
            let trace = out.trace.expect("train mode returns a trace");
            loss += cross_entropy(&out.probs, &labels, cfg.model.classes, cfg.reduction)? as f64;
            for (row, &y) in out.probs.chunks(cfg.model.classes).zip(&labels) {
                if argmax(row) == y {
                    correct += 1;
                }
            }
            let grads = model.backward(&trace, &labels, cfg.reduction)?;
            match adam_step(&mut model, &grads, &mut state, cfg) {
                Ok(()) => model.update_running_stats(&trace),
                Err(TrainError::NonFiniteGradient(layer)) => {
                    log::warn!("epoch {epoch}: non-finite gradient in {layer}, step skipped");
                    rejected += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let accuracy = correct as f64 / windows.len() as f64;
        log::info!(
            "epoch {}: loss {loss:.3}, accuracy {accuracy:.4}",
            epoch + 1
        );
        epochs.push(EpochStats {
            epoch: epoch + 1,
            loss,
            accuracy,
        });
    }

    let report = TrainReport {
        samples: windows.len(),
        class_histogram: histogram,
        initial_loss,
        epochs,
        steps: state.step,
        rejected_steps: rejected,
        config: *cfg,
    };
    Ok((model, report))
}

const CHECKPOINT_MAGIC: [u8; 4] = *b"AKO1";

/// Weight bundle followed by `AKO1`, the Adam step (u64), both moment sets as
/// little-endian f32 in trainable-tensor order, and a CRC-32 of the appended
/// section.
pub fn encode_checkpoint(model: &Model<f32>, state: &OptimizerState) -> Vec<u8> {
    let mut out = bundle::export_weights(model).bytes;
    let tail_start = out.len();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&state.step.to_le_bytes());
    for moments in [&state.first_moment, &state.second_moment] {
        for t in moments {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out[tail_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, OptimizerState), TrainError> {
    let bundle_len = bundle::bundle_len(bytes)?;
    if bytes.len() < bundle_len {
        return Err(BundleError::SizeMismatch {
            expected: bundle_len,
            found: bytes.len(),
        }
        .into());
    }
    let model = bundle::import_weights(&bytes[..bundle_len])?;
    let tail = &bytes[bundle_len..];
    let mut state = OptimizerState::new(&model);
    let moment_values: usize = state.first_moment.iter().map(Vec::len).sum::<usize>() * 2;
    let expected = 4 + 8 + moment_values * 4 + 4;
    if tail.len() != expected {
        return Err(BundleError::SizeMismatch {
            expected: bundle_len + expected,
            found: bytes.len(),
        }
        .into());
    }
    if tail[..4] != CHECKPOINT_MAGIC {
        return Err(BundleError::BadMagic.into());
    }
    let body = &tail[..tail.len() - 4];
    let stored = u32::from_le_bytes(tail[tail.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(BundleError::ChecksumMismatch.into());
    }
    state.step = u64::from_le_bytes(tail[4..12].try_into().unwrap());
    let mut off = 12;
    for moments in [&mut state.first_moment, &mut state.second_moment] {
        for t in moments.iter_mut() {
            for v in t.iter_mut() {
                *v = f32::from_le_bytes(tail[off..off + 4].try_into().unwrap());
                off += 4;
            }
        }
    }
    Ok((model, state))
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    state: &OptimizerState,
) -> Result<(), TrainError> {
    std::fs::write(path, encode_checkpoint(model, state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, OptimizerState), TrainError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::Window;

    fn toy_model() -> Model<f32> {
        init_weights(ModelConfig::default(), 1).unwrap()
    }

    fn unit_grads(model: &Model<f32>, value: f32) -> Gradients<f32> {
        let t = |r: TensorRole| vec![value; model.tensor(r).len()];
        Gradients {
            conv_w: t(TensorRole::ConvWeight),
            bn1_gamma: t(TensorRole::Bn1Gamma),
            bn1_beta: t(TensorRole::Bn1Beta),
            fc1_w: t(TensorRole::Fc1Weight),
            fc1_b: t(TensorRole::Fc1Bias),
            bn2_gamma: t(TensorRole::Bn2Gamma),
            bn2_beta: t(TensorRole::Bn2Beta),
            fc2_w: t(TensorRole::Fc2Weight),
            fc2_b: t(TensorRole::Fc2Bias),
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut model = toy_model();
        let before = model.clone();
        let mut state = OptimizerState::new(&model);
        {
            let g = unit_grads(&model, 1.0);
            adam_step(&mut model, &g, &mut state, &cfg).unwrap();
        }
        assert_eq!(state.step, 1);
        for role in TensorRole::TRAINABLE {
            for (a, b) in model.tensor(role).iter().zip(before.tensor(role)) {
                assert!(((b - a) - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate + 1e-7);
            }
        }
        assert_eq!(model.bn1.running_mean, before.bn1.running_mean);
        assert_eq!(model.bn2.running_var, before.bn2.running_var);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut model = toy_model();
        let mut state = OptimizerState::new(&model);
        {
            let g = unit_grads(&model, 0.5);
            adam_step(&mut model, &g, &mut state, &cfg).unwrap();
        }
        let snapshot = model.clone();
        let m_before = state.first_moment[0][0];
        {
            let g = unit_grads(&model, 0.0);
            adam_step(&mut model, &g, &mut state, &cfg).unwrap();
        }
        assert!((state.first_moment[0][0] - 0.9 * m_before).abs() < 1e-9);
        // the decayed moment still carries momentum, so compare a fresh state
        let mut fresh = OptimizerState::new(&snapshot);
        let mut still = snapshot.clone();
        {
            let g = unit_grads(&snapshot, 0.0);
            adam_step(&mut still, &g, &mut fresh, &cfg).unwrap();
        }
        assert_eq!(still, snapshot);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let cfg = TrainConfig::default();
        let base = toy_model();
        let g = unit_grads(&base, 0.3);
        let run = || {
            let mut m = base.clone();
            let mut s = OptimizerState::new(&m);
            adam_step(&mut m, &g, &mut s, &cfg).unwrap();
            (m, s)
        };
        assert_eq!(run(), run());

        let mut bad = unit_grads(&base, 0.1);
        bad.fc1_b[3] = f32::NAN;
        let mut m = base.clone();
        let mut s = OptimizerState::new(&m);
        assert!(matches!(
            adam_step(&mut m, &bad, &mut s, &cfg),
            Err(TrainError::NonFiniteGradient("fc1_bias"))
        ));
        assert_eq!(m, base);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let m = toy_model();
        assert!(m.bn1.gamma.iter().all(|&g| g == 1.0));
        assert!(m.bn2.beta.iter().all(|&b| b == 0.0));
        assert!(m.conv_w.iter().all(|w| w.abs() <= 1.0 / 18f32.sqrt()));
        assert!(m.fc1_w.iter().all(|w| w.abs() <= 1.0 / 200f32.sqrt()));
        assert!(m.fc2_w.iter().all(|w| w.abs() <= 1.0 / 8.0));
        let other = init_weights(ModelConfig::default(), 2).unwrap();
        assert_ne!(m.conv_w, other.conv_w);
    }

    #[test]
    fn batching_keeps_short_tail() {
        let order: Vec<usize> = (0..129).collect();
        let b = batches(&order, 64);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![64, 65]);
        let order: Vec<usize> = (0..100).collect();
        assert_eq!(
            batches(&order, 64)
                .iter()
                .map(|x| x.len())
                .collect::<Vec<_>>(),
            vec![64, 36]
        );
    }

    fn window(class: usize, v: f32) -> LabeledWindow {
        LabeledWindow {
            subject_id: 0,
            window: Window::from_values(0, 0.0, 0.59, vec![v; 360]),
            class,
            overlap_score: 1.0,
        }
    }

    #[test]
    fn fit_refuses_degenerate_sets() {
        let cfg = TrainConfig::default();
        assert!(matches!(fit(&[], &cfg), Err(TrainError::EmptyDataset)));
        let ws = [window(2, 0.1), window(2, 0.2)];
        let refs: Vec<&LabeledWindow> = ws.iter().collect();
        assert!(matches!(fit(&refs, &cfg), Err(TrainError::SingleClass(2))));
        let zero = TrainConfig { epochs: 0, ..cfg };
        assert!(matches!(fit(&refs, &zero), Err(TrainError::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig::default();
        let mut model = toy_model();
        let mut state = OptimizerState::new(&model);
        {
            let g = unit_grads(&model, 0.7);
            adam_step(&mut model, &g, &mut state, &cfg).unwrap();
        }
        let bytes = encode_checkpoint(&model, &state);
        let (m2, s2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m2, model);
        assert_eq!(s2, state);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 1;
        assert!(decode_checkpoint(&bad).is_err());
    }
}
