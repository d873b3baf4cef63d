//! The gesture classifier: Conv1D → BatchNorm+ReLU → Linear → BatchNorm+ReLU
//! → Linear → softmax, with hand-written forward and backward passes.
//!
//! With the default configuration the layer sizes are fixed by the published
//! parameter counts. Six input channels and ten output channels with 180
//! weights leave a kernel of 3 and no bias; a 60-step input mapped to 20 output
//! steps without padding leaves a stride of 3. The flattened conv output is
//! channel-major (`channel * 20 + step`); exported weights depend on it.
//!
//! Batch-norm layers are counted with four tensors (gamma, beta, running mean,
//! running variance), which is how the total of 14,425 parameters arises.
//!
//! Everything is generic over [`Real`] so the same code runs in f32 (training
//! and inference) and in f64 (gradient checking).

mod kernels;

use crate::gesture::NUM_CLASSES;
use crate::imu::CHANNELS;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use thiserror::Error;

pub(crate) use kernels::{batch_norm_relu_eval, conv1d, linear, softmax};

/// Floating-point element type of a model.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input has {got} values, not a multiple of one {per_sample}-value window")]
    InputShape { got: usize, per_sample: usize },
    #[error("training-mode forward needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite values after layer {0}")]
    NonFinite(&'static str),
    #[error("class {class} at position {index} is out of range")]
    BadClass { index: usize, class: usize },
    #[error("trace and labels disagree: {0}")]
    ContractViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub in_channels: usize,
    pub conv_out_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    pub classes: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 60,
            in_channels: CHANNELS,
            conv_out_channels: 10,
            conv_kernel: 3,
            conv_stride: 3,
            hidden: 64,
            classes: NUM_CLASSES,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Parameter count of each layer, running statistics included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerCounts {
    pub conv: usize,
    pub bn1: usize,
    pub fc1: usize,
    pub bn2: usize,
    pub fc2: usize,
}

impl LayerCounts {
    pub fn total(&self) -> usize {
        self.conv + self.bn1 + self.fc1 + self.bn2 + self.fc2
    }

    pub fn rows(&self) -> [(&'static str, usize); 5] {
        [
            ("Conv1D", self.conv),
            ("BatchNorm", self.bn1),
            ("Linear", self.fc1),
            ("BatchNorm", self.bn2),
            ("Linear", self.fc2),
        ]
    }
}

impl ModelConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: String| Err(NnError::Config(m));
        if self.in_channels == 0 || self.classes < 2 {
            return err(format!(
                "need input channels and at least 2 classes ({} / {})",
                self.in_channels, self.classes
            ));
        }
        if self.conv_kernel == 0 || self.conv_stride == 0 {
            return err("conv kernel and stride must be positive".into());
        }
        if self.k < self.conv_kernel {
            return err(format!(
                "window of {} steps is shorter than the conv kernel {}",
                self.k, self.conv_kernel
            ));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return err("batch-norm epsilon must be positive and momentum in [0, 1]".into());
        }
        Ok(())
    }

    /// Number of conv output steps: `(k - kernel) / stride + 1`.
    pub fn conv_len(&self) -> usize {
        (self.k - self.conv_kernel) / self.conv_stride + 1
    }

    /// Length of the flattened conv output.
    pub fn flat(&self) -> usize {
        self.conv_out_channels * self.conv_len()
    }

    pub fn input_len(&self) -> usize {
        self.k * self.in_channels
    }

    pub fn layer_counts(&self) -> LayerCounts {
        let flat = self.flat();
        LayerCounts {
            conv: self.conv_out_channels * self.in_channels * self.conv_kernel,
            bn1: 4 * flat,
            fc1: flat * self.hidden + self.hidden,
            bn2: 4 * self.hidden,
            fc2: self.hidden * self.classes + self.classes,
        }
    }
}

/// Role of each stored tensor, in the fixed serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TensorRole {
    ConvWeight,
    Bn1Gamma,
    Bn1Beta,
    Bn1RunningMean,
    Bn1RunningVar,
    Fc1Weight,
    Fc1Bias,
    Bn2Gamma,
    Bn2Beta,
    Bn2RunningMean,
    Bn2RunningVar,
    Fc2Weight,
    Fc2Bias,
}

impl TensorRole {
    pub const ALL: [TensorRole; 13] = [
        TensorRole::ConvWeight,
        TensorRole::Bn1Gamma,
        TensorRole::Bn1Beta,
        TensorRole::Bn1RunningMean,
        TensorRole::Bn1RunningVar,
        TensorRole::Fc1Weight,
        TensorRole::Fc1Bias,
        TensorRole::Bn2Gamma,
        TensorRole::Bn2Beta,
        TensorRole::Bn2RunningMean,
        TensorRole::Bn2RunningVar,
        TensorRole::Fc2Weight,
        TensorRole::Fc2Bias,
    ];

    /// The tensors touched by gradient descent, in serialization order.
    pub const TRAINABLE: [TensorRole; 9] = [
        TensorRole::ConvWeight,
        TensorRole::Bn1Gamma,
        TensorRole::Bn1Beta,
        TensorRole::Fc1Weight,
        TensorRole::Fc1Bias,
        TensorRole::Bn2Gamma,
        TensorRole::Bn2Beta,
        TensorRole::Fc2Weight,
        TensorRole::Fc2Bias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TensorRole::ConvWeight => "conv_weight",
            TensorRole::Bn1Gamma => "bn1_gamma",
            TensorRole::Bn1Beta => "bn1_beta",
            TensorRole::Bn1RunningMean => "bn1_running_mean",
            TensorRole::Bn1RunningVar => "bn1_running_var",
            TensorRole::Fc1Weight => "fc1_weight",
            TensorRole::Fc1Bias => "fc1_bias",
            TensorRole::Bn2Gamma => "bn2_gamma",
            TensorRole::Bn2Beta => "bn2_beta",
            TensorRole::Bn2RunningMean => "bn2_running_mean",
            TensorRole::Bn2RunningVar => "bn2_running_var",
            TensorRole::Fc2Weight => "fc2_weight",
            TensorRole::Fc2Bias => "fc2_bias",
        }
    }

    /// Human-readable shape for manifests, e.g. `10x6x3`.
    pub fn shape(self, c: &ModelConfig) -> Vec<usize> {
        match self {
            TensorRole::ConvWeight => vec![c.conv_out_channels, c.in_channels, c.conv_kernel],
            TensorRole::Bn1Gamma
            | TensorRole::Bn1Beta
            | TensorRole::Bn1RunningMean
            | TensorRole::Bn1RunningVar => vec![c.flat()],
            TensorRole::Fc1Weight => vec![c.hidden, c.flat()],
            TensorRole::Fc1Bias
            | TensorRole::Bn2Gamma
            | TensorRole::Bn2Beta
            | TensorRole::Bn2RunningMean
            | TensorRole::Bn2RunningVar => vec![c.hidden],
            TensorRole::Fc2Weight => vec![c.classes, c.hidden],
            TensorRole::Fc2Bias => vec![c.classes],
        }
    }

    pub fn len(self, c: &ModelConfig) -> usize {
        self.shape(c).iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Real> BatchNorm<F> {
    fn identity(len: usize) -> Self {
        Self {
            gamma: vec![F::one(); len],
            beta: vec![F::zero(); len],
            running_mean: vec![F::zero(); len],
            running_var: vec![F::one(); len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    /// `out_ch × in_ch × kernel`, row-major.
    pub conv_w: Vec<F>,
    pub bn1: BatchNorm<F>,
    /// `hidden × flat`, row-major.
    pub fc1_w: Vec<F>,
    pub fc1_b: Vec<F>,
    pub bn2: BatchNorm<F>,
    /// `classes × hidden`, row-major.
    pub fc2_w: Vec<F>,
    pub fc2_b: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Reduction {
    /// Sum over the batch.
    #[default]
    Sum,
    Mean,
}

/// Activations cached by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub n: usize,
    input: Vec<F>,
    bn1: BnCache<F>,
    a1: Vec<F>,
    bn2: BnCache<F>,
    a2: Vec<F>,
    probs: Vec<F>,
}

#[derive(Debug, Clone)]
struct BnCache<F> {
    xhat: Vec<F>,
    /// Post-affine, pre-ReLU output; its sign is the ReLU mask.
    y: Vec<F>,
    inv_std: Vec<F>,
    mean: Vec<F>,
    var: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    pub logits: Vec<F>,
    pub probs: Vec<F>,
    pub trace: Option<ForwardTrace<F>>,
}

/// Gradients of the loss for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub conv_w: Vec<F>,
    pub bn1_gamma: Vec<F>,
    pub bn1_beta: Vec<F>,
    pub fc1_w: Vec<F>,
    pub fc1_b: Vec<F>,
    pub bn2_gamma: Vec<F>,
    pub bn2_beta: Vec<F>,
    pub fc2_w: Vec<F>,
    pub fc2_b: Vec<F>,
}

impl<F: Real> Gradients<F> {
    /// Tensors in [`TensorRole::TRAINABLE`] order.
    pub fn tensors(&self) -> [&[F]; 9] {
        [
            &self.conv_w,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.fc1_w,
            &self.fc1_b,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| kernels::all_finite(t))
    }
}

/// Scratch buffers for single-window inference.
#[derive(Debug, Clone)]
pub struct Workspace<F> {
    conv: Vec<F>,
    hidden: Vec<F>,
    logits: Vec<F>,
    probs: Vec<F>,
}

impl<F: Real> Workspace<F> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            conv: vec![F::zero(); config.flat()],
            hidden: vec![F::zero(); config.hidden],
            logits: vec![F::zero(); config.classes],
            probs: vec![F::zero(); config.classes],
        }
    }

    pub fn logits(&self) -> &[F] {
        &self.logits
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    /// Bytes held by the scratch buffers.
    pub fn bytes(&self) -> usize {
        (self.conv.len() + self.hidden.len() + self.logits.len() + self.probs.len())
            * std::mem::size_of::<F>()
    }
}

impl<F: Real> Model<F> {
    /// All weights zero, batch norm set to the identity transform.
    pub fn zeros(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let flat = config.flat();
        Ok(Self {
            config,
            conv_w: vec![
                F::zero();
                config.conv_out_channels * config.in_channels * config.conv_kernel
            ],
            bn1: BatchNorm::identity(flat),
            fc1_w: vec![F::zero(); config.hidden * flat],
            fc1_b: vec![F::zero(); config.hidden],
            bn2: BatchNorm::identity(config.hidden),
            fc2_w: vec![F::zero(); config.classes * config.hidden],
            fc2_b: vec![F::zero(); config.classes],
        })
    }

    pub fn tensor(&self, role: TensorRole) -> &[F] {
        match role {
            TensorRole::ConvWeight => &self.conv_w,
            TensorRole::Bn1Gamma => &self.bn1.gamma,
            TensorRole::Bn1Beta => &self.bn1.beta,
            TensorRole::Bn1RunningMean => &self.bn1.running_mean,
            TensorRole::Bn1RunningVar => &self.bn1.running_var,
            TensorRole::Fc1Weight => &self.fc1_w,
            TensorRole::Fc1Bias => &self.fc1_b,
            TensorRole::Bn2Gamma => &self.bn2.gamma,
            TensorRole::Bn2Beta => &self.bn2.beta,
            TensorRole::Bn2RunningMean => &self.bn2.running_mean,
            TensorRole::Bn2RunningVar => &self.bn2.running_var,
            TensorRole::Fc2Weight => &self.fc2_w,
            TensorRole::Fc2Bias => &self.fc2_b,
        }
    }

    pub fn tensor_mut(&mut self, role: TensorRole) -> &mut Vec<F> {
        match role {
            TensorRole::ConvWeight => &mut self.conv_w,
            TensorRole::Bn1Gamma => &mut self.bn1.gamma,
            TensorRole::Bn1Beta => &mut self.bn1.beta,
            TensorRole::Bn1RunningMean => &mut self.bn1.running_mean,
            TensorRole::Bn1RunningVar => &mut self.bn1.running_var,
            TensorRole::Fc1Weight => &mut self.fc1_w,
            TensorRole::Fc1Bias => &mut self.fc1_b,
            TensorRole::Bn2Gamma => &mut self.bn2.gamma,
            TensorRole::Bn2Beta => &mut self.bn2.beta,
            TensorRole::Bn2RunningMean => &mut self.bn2.running_mean,
            TensorRole::Bn2RunningVar => &mut self.bn2.running_var,
            TensorRole::Fc2Weight => &mut self.fc2_w,
            TensorRole::Fc2Bias => &mut self.fc2_b,
        }
    }

    /// Trainable tensors in [`TensorRole::TRAINABLE`] order.
    pub fn trainable_mut(&mut self) -> [&mut [F]; 9] {
        [
            &mut self.conv_w,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    /// Total stored values (trainable plus running statistics).
    pub fn param_count(&self) -> usize {
        TensorRole::ALL.iter().map(|&r| self.tensor(r).len()).sum()
    }

    /// Element-wise conversion to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        let c = |v: &[F]| -> Vec<G> {
            v.iter()
                .map(|x| G::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        let bn = |b: &BatchNorm<F>| BatchNorm {
            gamma: c(&b.gamma),
            beta: c(&b.beta),
            running_mean: c(&b.running_mean),
            running_var: c(&b.running_var),
        };
        Model {
            config: self.config,
            conv_w: c(&self.conv_w),
            bn1: bn(&self.bn1),
            fc1_w: c(&self.fc1_w),
            fc1_b: c(&self.fc1_b),
            bn2: bn(&self.bn2),
            fc2_w: c(&self.fc2_w),
            fc2_b: c(&self.fc2_b),
        }
    }

    fn batch_size(&self, input: &[F]) -> Result<usize, NnError> {
        let per = self.config.input_len();
        if per == 0 || input.len() % per != 0 {
            return Err(NnError::InputShape {
                got: input.len(),
                per_sample: per,
            });
        }
        Ok(input.len() / per)
    }

    fn conv_one(&self, window: &[F], out: &mut [F]) {
        let c = &self.config;
        conv1d(
            &self.conv_w,
            window,
            c.in_channels,
            c.conv_out_channels,
            c.conv_kernel,
            c.conv_stride,
            c.conv_len(),
            out,
        );
    }

    /// Eval-mode inference for one `k × channels` window into `ws`.
    pub fn infer_into(&self, window: &[F], ws: &mut Workspace<F>) -> Result<(), NnError> {
        let c = &self.config;
        let eps = F::lit(c.bn_epsilon);
        self.conv_one(window, &mut ws.conv);
        if !kernels::all_finite(&ws.conv) {
            return Err(NnError::NonFinite("conv1d"));
        }
        batch_norm_relu_eval(
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.bn1.running_mean,
            &self.bn1.running_var,
            eps,
            &mut ws.conv,
        );
        linear(&self.fc1_w, &self.fc1_b, &ws.conv, &mut ws.hidden);
        if !kernels::all_finite(&ws.hidden) {
            return Err(NnError::NonFinite("linear1"));
        }
        batch_norm_relu_eval(
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.bn2.running_mean,
            &self.bn2.running_var,
            eps,
            &mut ws.hidden,
        );
        linear(&self.fc2_w, &self.fc2_b, &ws.hidden, &mut ws.logits);
        if !kernels::all_finite(&ws.logits) {
            return Err(NnError::NonFinite("linear2"));
        }
        softmax(&ws.logits, &mut ws.probs);
        Ok(())
    }

    /// Forward pass over a batch laid out as `N × k × channels`.
    pub fn forward(&self, input: &[F], mode: Mode) -> Result<ForwardOutput<F>, NnError> {
        let n = self.batch_size(input)?;
        match mode {
            Mode::Eval => {
                let classes = self.config.classes;
                let per = self.config.input_len();
                let mut ws = Workspace::new(&self.config);
                let mut logits = Vec::with_capacity(n * classes);
                let mut probs = Vec::with_capacity(n * classes);
                for i in 0..n {
                    self.infer_into(&input[i * per..(i + 1) * per], &mut ws)?;
                    logits.extend_from_slice(&ws.logits);
                    probs.extend_from_slice(&ws.probs);
                }
                Ok(ForwardOutput {
                    logits,
                    probs,
                    trace: None,
                })
            }
            Mode::Train => self.forward_train(input, n),
        }
    }

    fn forward_train(&self, input: &[F], n: usize) -> Result<ForwardOutput<F>, NnError> {
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let c = self.config;
        let (per, flat, hidden, classes) = (c.input_len(), c.flat(), c.hidden, c.classes);
        let eps = F::lit(c.bn_epsilon);

        let mut z1 = vec![F::zero(); n * flat];
        for i in 0..n {
            self.conv_one(
                &input[i * per..(i + 1) * per],
                &mut z1[i * flat..(i + 1) * flat],
            );
        }
        if !kernels::all_finite(&z1) {
            return Err(NnError::NonFinite("conv1d"));
        }
        let (bn1, a1) = bn_relu_train(&self.bn1, &z1, n, flat, eps);

        let mut z2 = vec![F::zero(); n * hidden];
        for i in 0..n {
            linear(
                &self.fc1_w,
                &self.fc1_b,
                &a1[i * flat..(i + 1) * flat],
                &mut z2[i * hidden..(i + 1) * hidden],
            );
        }
        if !kernels::all_finite(&z2) {
            return Err(NnError::NonFinite("linear1"));
        }
        let (bn2, a2) = bn_relu_train(&self.bn2, &z2, n, hidden, eps);
        if !kernels::all_finite(&a2) {
            return Err(NnError::NonFinite("batchnorm2"));
        }

        let mut logits = vec![F::zero(); n * classes];
        let mut probs = vec![F::zero(); n * classes];
        for i in 0..n {
            let row = i * classes..(i + 1) * classes;
            linear(
                &self.fc2_w,
                &self.fc2_b,
                &a2[i * hidden..(i + 1) * hidden],
                &mut logits[row.clone()],
            );
            softmax(&logits[row.clone()], &mut probs[row]);
        }
        if !kernels::all_finite(&logits) {
            return Err(NnError::NonFinite("linear2"));
        }
        Ok(ForwardOutput {
            logits,
            probs: probs.clone(),
            trace: Some(ForwardTrace {
                n,
                input: input.to_vec(),
                bn1,
                a1,
                bn2,
                a2,
                probs,
            }),
        })
    }

    /// Folds the batch statistics of a training forward pass into the running
    /// estimates (`running = (1 - m)·running + m·batch`, unbiased variance).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<F>) {
        let m = F::lit(self.config.bn_momentum);
        let n = trace.n;
        let unbias = F::lit(n as f64 / (n as f64 - 1.0));
        for (bn, cache) in [(&mut self.bn1, &trace.bn1), (&mut self.bn2, &trace.bn2)] {
            for d in 0..bn.running_mean.len() {
                bn.running_mean[d] = (F::one() - m) * bn.running_mean[d] + m * cache.mean[d];
                bn.running_var[d] = (F::one() - m) * bn.running_var[d] + m * cache.var[d] * unbias;
            }
        }
    }

    /// Gradients of the cross-entropy loss with respect to every trainable
    /// tensor, given the trace of a training-mode forward on the same batch.
    pub fn backward(
        &self,
        trace: &ForwardTrace<F>,
        classes: &[usize],
        reduction: Reduction,
    ) -> Result<Gradients<F>, NnError> {
        let c = self.config;
        let n = trace.n;
        if classes.len() != n {
            return Err(NnError::ContractViolation(format!(
                "{} labels for a batch of {n}",
                classes.len()
            )));
        }
        if trace.input.len() != n * c.input_len() || trace.probs.len() != n * c.classes {
            return Err(NnError::ContractViolation(
                "trace was produced by a model of a different shape".into(),
            ));
        }
        let (per, flat, hidden, nc) = (c.input_len(), c.flat(), c.hidden, c.classes);
        let scale = match reduction {
            Reduction::Sum => F::one(),
            Reduction::Mean => F::one() / F::lit(n as f64),
        };

        // softmax + cross-entropy
        let mut d_logits = trace.probs.clone();
        for (i, &cls) in classes.iter().enumerate() {
            if cls >= nc {
                return Err(NnError::BadClass {
                    index: i,
                    class: cls,
                });
            }
            d_logits[i * nc + cls] -= F::one();
        }
        for v in d_logits.iter_mut() {
            *v = *v * scale;
        }

        let mut fc2_w = vec![F::zero(); nc * hidden];
        let mut fc2_b = vec![F::zero(); nc];
        let mut d_a2 = vec![F::zero(); n * hidden];
        for i in 0..n {
            let a = &trace.a2[i * hidden..(i + 1) * hidden];
            let da = &mut d_a2[i * hidden..(i + 1) * hidden];
            for j in 0..nc {
                let g = d_logits[i * nc + j];
                fc2_b[j] += g;
                let w_row = &self.fc2_w[j * hidden..(j + 1) * hidden];
                let gw_row = &mut fc2_w[j * hidden..(j + 1) * hidden];
                for h in 0..hidden {
                    gw_row[h] += g * a[h];
                    da[h] += g * w_row[h];
                }
            }
        }

        let (d_z2, bn2_gamma, bn2_beta) = bn_relu_backward(&self.bn2, &trace.bn2, &d_a2, n, hidden);

        let mut fc1_w = vec![F::zero(); hidden * flat];
        let mut fc1_b = vec![F::zero(); hidden];
        let mut d_a1 = vec![F::zero(); n * flat];
        for i in 0..n {
            let a = &trace.a1[i * flat..(i + 1) * flat];
            let da = &mut d_a1[i * flat..(i + 1) * flat];
            for j in 0..hidden {
                let g = d_z2[i * hidden + j];
                if g == F::zero() {
                    continue;
                }
                fc1_b[j] += g;
                let w_row = &self.fc1_w[j * flat..(j + 1) * flat];
                let gw_row = &mut fc1_w[j * flat..(j + 1) * flat];
                for f in 0..flat {
                    gw_row[f] += g * a[f];
                    da[f] += g * w_row[f];
                }
            }
        }

        let (d_z1, bn1_gamma, bn1_beta) = bn_relu_backward(&self.bn1, &trace.bn1, &d_a1, n, flat);

        let (ic, oc, kern, stride, len) = (
            c.in_channels,
            c.conv_out_channels,
            c.conv_kernel,
            c.conv_stride,
            c.conv_len(),
        );
        let mut conv_w = vec![F::zero(); oc * ic * kern];
        for i in 0..n {
            let x = &trace.input[i * per..(i + 1) * per];
            for o in 0..oc {
                for t in 0..len {
                    let g = d_z1[i * flat + o * len + t];
                    if g == F::zero() {
                        continue;
                    }
                    for j in 0..kern {
                        let row = &x[(t * stride + j) * ic..(t * stride + j + 1) * ic];
                        for ch in 0..ic {
                            conv_w[(o * ic + ch) * kern + j] += g * row[ch];
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            conv_w,
            bn1_gamma,
            bn1_beta,
            fc1_w,
            fc1_b,
            bn2_gamma,
            bn2_beta,
            fc2_w,
            fc2_b,
        })
    }
}

/// Training-mode batch norm (biased batch variance) followed by ReLU.
fn bn_relu_train<F: Real>(
    bn: &BatchNorm<F>,
    x: &[F],
    n: usize,
    dim: usize,
    eps: F,
) -> (BnCache<F>, Vec<F>) {
    let nf = F::lit(n as f64);
    let mut mean = vec![F::zero(); dim];
    for i in 0..n {
        for d in 0..dim {
            mean[d] += x[i * dim + d];
        }
    }
    for m in mean.iter_mut() {
        *m = *m / nf;
    }
    let mut var = vec![F::zero(); dim];
    for i in 0..n {
        for d in 0..dim {
            let c = x[i * dim + d] - mean[d];
            var[d] += c * c;
        }
    }
    for v in var.iter_mut() {
        *v = *v / nf;
    }
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![F::zero(); n * dim];
    let mut y = vec![F::zero(); n * dim];
    let mut out = vec![F::zero(); n * dim];
    for i in 0..n {
        for d in 0..dim {
            let idx = i * dim + d;
            xhat[idx] = (x[idx] - mean[d]) * inv_std[d];
            y[idx] = bn.gamma[d] * xhat[idx] + bn.beta[d];
            out[idx] = if y[idx] > F::zero() {
                y[idx]
            } else {
                F::zero()
            };
        }
    }
    (
        BnCache {
            xhat,
            y,
            inv_std,
            mean,
            var,
        },
        out,
    )
}

/// Backward through ReLU and training-mode batch norm. Returns the gradient
/// with respect to the BN input plus the gamma and beta gradients.
fn bn_relu_backward<F: Real>(
    bn: &BatchNorm<F>,
    cache: &BnCache<F>,
    d_out: &[F],
    n: usize,
    dim: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let mut dy = vec![F::zero(); n * dim];
    for idx in 0..n * dim {
        if cache.y[idx] > F::zero() {
            dy[idx] = d_out[idx];
        }
    }
    let mut d_gamma = vec![F::zero(); dim];
    let mut d_beta = vec![F::zero(); dim];
    for i in 0..n {
        for d in 0..dim {
            let idx = i * dim + d;
            d_gamma[d] += dy[idx] * cache.xhat[idx];
            d_beta[d] += dy[idx];
        }
    }
    let nf = F::lit(n as f64);
    let mut dx = vec![F::zero(); n * dim];
    for i in 0..n {
        for d in 0..dim {
            let idx = i * dim + d;
            dx[idx] = bn.gamma[d] * cache.inv_std[d] / nf
                * (nf * dy[idx] - d_beta[d] - cache.xhat[idx] * d_gamma[d]);
        }
    }
    (dx, d_gamma, d_beta)
}

/// Cross-entropy of `probs` (row-major `N × classes`) against `classes`.
///
/// A true-class probability of exactly zero is clamped to 1e-12.
pub fn cross_entropy<F: Real>(
    probs: &[F],
    classes: &[usize],
    num_classes: usize,
    reduction: Reduction,
) -> Result<F, NnError> {
    if probs.len() != classes.len() * num_classes {
        return Err(NnError::ContractViolation(format!(
            "{} probabilities for {} labels of {num_classes} classes",
            probs.len(),
            classes.len()
        )));
    }
    let floor = F::lit(1e-12);
    let mut total = F::zero();
    for (i, &cls) in classes.iter().enumerate() {
        if cls >= num_classes {
            return Err(NnError::BadClass {
                index: i,
                class: cls,
            });
        }
        let mut p = probs[i * num_classes + cls];
        if p < floor {
            log::warn!("true-class probability {:?} clamped to 1e-12", p);
            p = floor;
        }
        total += -p.ln();
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean if !classes.is_empty() => total / F::lit(classes.len() as f64),
        Reduction::Mean => total,
    })
}

/// Index of the largest value, first one on ties.
pub fn argmax<F: PartialOrd + Copy>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::<f64>::zeros(ModelConfig::default()).unwrap();
        for role in TensorRole::TRAINABLE {
            for v in m.tensor_mut(role).iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        for v in m.bn1.gamma.iter_mut().chain(m.bn2.gamma.iter_mut()) {
            *v = 1.0 + rng.random_range(-0.2..0.2);
        }
        m
    }

    fn random_batch(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * 360).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_counts_match_architecture_table() {
        let c = ModelConfig::default();
        assert_eq!(c.conv_len(), 20);
        assert_eq!(c.flat(), 200);
        let counts = c.layer_counts();
        assert_eq!(
            (counts.conv, counts.bn1, counts.fc1, counts.bn2, counts.fc2),
            (180, 800, 12_864, 256, 325)
        );
        assert_eq!(counts.total(), 14_425);
        assert_eq!(Model::<f32>::zeros(c).unwrap().param_count(), 14_425);
    }

    #[test]
    fn variant_counts() {
        let c = ModelConfig {
            hidden: 32,
            ..Default::default()
        };
        assert_eq!(c.layer_counts().total(), 180 + 800 + 6_432 + 128 + 165);
        assert_eq!(c.layer_counts().total(), 7_705);
        let c = ModelConfig {
            classes: 2,
            ..Default::default()
        };
        assert_eq!(c.layer_counts().fc2, 130);
    }

    #[test]
    fn zero_model_outputs_uniform() {
        let m = Model::<f32>::zeros(ModelConfig::default()).unwrap();
        let out = m.forward(&vec![0.0; 3 * 360], Mode::Eval).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
        assert!(out.probs.iter().all(|&p| (p - 0.2).abs() < 1e-7));
    }

    #[test]
    fn eval_probs_are_normalized() {
        let m = random_model(1).cast::<f32>();
        let x: Vec<f32> = random_batch(8, 2).iter().map(|&v| v as f32 * 2.0).collect();
        let out = m.forward(&x, Mode::Eval).unwrap();
        for row in out.probs.chunks(5) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn shape_errors() {
        let m = Model::<f32>::zeros(ModelConfig::default()).unwrap();
        assert!(matches!(
            m.forward(&[0.0; 100], Mode::Eval),
            Err(NnError::InputShape { .. })
        ));
        assert_eq!(
            m.forward(&[0.0; 360], Mode::Train).unwrap_err(),
            NnError::BatchTooSmall(1)
        );
    }

    #[test]
    fn non_finite_names_layer() {
        let mut m = Model::<f32>::zeros(ModelConfig::default()).unwrap();
        m.fc2_b[0] = f32::INFINITY;
        assert_eq!(
            m.forward(&[0.0; 360], Mode::Eval).unwrap_err(),
            NnError::NonFinite("linear2")
        );
    }

    #[test]
    fn loss_closed_forms() {
        let uniform = [0.2f64; 5];
        let l = cross_entropy(&uniform, &[3], 5, Reduction::Sum).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let two = [0.2f64; 10];
        let l = cross_entropy(&two, &[0, 4], 5, Reduction::Sum).unwrap();
        assert!((l - 3.2188758248682006).abs() < 1e-12);
        let l = cross_entropy(&two, &[0, 4], 5, Reduction::Mean).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let onehot = [0.0f64, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(
            cross_entropy(&onehot, &[2], 5, Reduction::Sum).unwrap(),
            0.0
        );
        // a zero true-class probability is clamped, not infinite
        let l = cross_entropy(&onehot, &[1], 5, Reduction::Sum).unwrap();
        assert!((l - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn train_mode_bn_normalizes_batch() {
        let m = random_model(3);
        let x = random_batch(16, 4);
        let out = m.forward(&x, Mode::Train).unwrap();
        let trace = out.trace.unwrap();
        for cache in [&trace.bn1, &trace.bn2] {
            let dim = cache.mean.len();
            for d in 0..dim {
                let col: Vec<f64> = (0..16).map(|i| cache.xhat[i * dim + d]).collect();
                let mean = col.iter().sum::<f64>() / 16.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
                assert!(mean.abs() < 1e-5);
                // eps in the denominator pulls the variance slightly below one
                let expected = cache.var[d] / (cache.var[d] + 1e-5);
                assert!((var - expected).abs() < 1e-5, "var {var} vs {expected}");
            }
        }
    }

    #[test]
    fn duplicated_batch_doubles_summed_gradients() {
        let m = random_model(5);
        let x = random_batch(4, 6);
        let y = [0usize, 2, 4, 1];
        let g1 = {
            let t = m.forward(&x, Mode::Train).unwrap().trace.unwrap();
            m.backward(&t, &y, Reduction::Sum).unwrap()
        };
        let mut x2 = x.clone();
        x2.extend_from_slice(&x);
        let y2: Vec<usize> = y.iter().chain(y.iter()).copied().collect();
        let g2 = {
            let t = m.forward(&x2, Mode::Train).unwrap().trace.unwrap();
            m.backward(&t, &y2, Reduction::Sum).unwrap()
        };
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((2.0 * u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn saturated_correct_predictions_give_tiny_fc2_gradients() {
        let mut m = random_model(7);
        let x = random_batch(4, 8);
        // push class 3 far above the rest through the output bias
        m.fc2_b = vec![0.0, 0.0, 0.0, 60.0, 0.0];
        let t = m.forward(&x, Mode::Train).unwrap().trace.unwrap();
        let g = m.backward(&t, &[3, 3, 3, 3], Reduction::Sum).unwrap();
        assert!(g.fc2_w.iter().chain(&g.fc2_b).all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn backward_rejects_mismatched_labels() {
        let m = random_model(9);
        let t = m
            .forward(&random_batch(4, 1), Mode::Train)
            .unwrap()
            .trace
            .unwrap();
        assert!(matches!(
            m.backward(&t, &[0, 1], Reduction::Sum),
            Err(NnError::ContractViolation(_))
        ));
        assert!(matches!(
            m.backward(&t, &[0, 1, 2, 7], Reduction::Sum),
            Err(NnError::BadClass { index: 3, class: 7 })
        ));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut m = random_model(11);
        let x = random_batch(4, 12);
        let t = m.forward(&x, Mode::Train).unwrap().trace.unwrap();
        m.update_running_stats(&t);
        for d in 0..200 {
            assert!((m.bn1.running_mean[d] - 0.1 * t.bn1.mean[d]).abs() < 1e-12);
            let expected = 0.9 + 0.1 * t.bn1.var[d] * 4.0 / 3.0;
            assert!((m.bn1.running_var[d] - expected).abs() < 1e-12);
        }
    }
}
