//! Per-sample layer kernels shared by the batch and streaming paths. Keeping a
//! single implementation is what makes streaming output bit-identical to
//! batch output.

use super::Real;

/// Strided, unpadded, bias-free 1-D convolution over a row-major
/// `steps × in_ch` input. Output is channel-major: `out[o * out_len + t]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d<F: Real>(
    weights: &[F],
    input: &[F],
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
    out: &mut [F],
) {
    for o in 0..out_ch {
        let w_o = &weights[o * in_ch * kernel..(o + 1) * in_ch * kernel];
        for t in 0..out_len {
            let mut acc = F::zero();
            for j in 0..kernel {
                let row = &input[(t * stride + j) * in_ch..(t * stride + j + 1) * in_ch];
                for c in 0..in_ch {
                    acc += w_o[c * kernel + j] * row[c];
                }
            }
            out[o * out_len + t] = acc;
        }
    }
}

/// `out = W · x + b` with `W` row-major `out.len() × x.len()`.
pub(crate) fn linear<F: Real>(weights: &[F], bias: &[F], x: &[F], out: &mut [F]) {
    let n_in = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * n_in..(j + 1) * n_in];
        let mut acc = F::zero();
        for (w, v) in row.iter().zip(x) {
            acc += *w * *v;
        }
        *o = acc + bias[j];
    }
}

/// Inference-mode batch normalization followed by ReLU, in place.
pub(crate) fn batch_norm_relu_eval<F: Real>(
    gamma: &[F],
    beta: &[F],
    mean: &[F],
    var: &[F],
    eps: F,
    x: &mut [F],
) {
    for d in 0..x.len() {
        let y = gamma[d] * (x[d] - mean[d]) / (var[d] + eps).sqrt() + beta[d];
        x[d] = if y > F::zero() { y } else { F::zero() };
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax<F: Real>(logits: &[F], probs: &mut [F]) {
    let max = logits
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut sum = F::zero();
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
}

pub(crate) fn all_finite<F: Real>(xs: &[F]) -> bool {
    xs.iter().all(|v| v.is_finite())
}
