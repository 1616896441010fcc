//! Primitive layer operations: valid-padding 1-D convolution, dense
//! affine map, max-pooling, ReLU, inverted dropout, softmax and
//! cross-entropy, each with its reverse-mode counterpart.
//!
//! Layout conventions, all row-major:
//! - convolution input `[length, in_channels]`
//! - convolution kernel `[kernel_size, in_channels, out_channels]`
//! - dense weight `[inputs, outputs]`, output `y = W^T x + b`

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Floor used when clamping probabilities inside [`cross_entropy`].
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Valid-padding cross-correlation with stride 1.
/// Output shape `[length - kernel_size + 1, out_channels]`.
pub fn conv1d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (l, cin) = (input.shape()[0], input.shape()[1]);
    let (k, kcin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    debug_assert_eq!(cin, kcin);
    debug_assert!(l >= k, "input length {l} shorter than kernel {k}");
    let lout = l - k + 1;

    let mut out = Tensor::zeros(&[lout, cout]);
    let x = input.data();
    let kd = kernel.data();
    let b = bias.data();
    let od = out.data_mut();
    for i in 0..lout {
        let row = &mut od[i * cout..(i + 1) * cout];
        row.copy_from_slice(b);
        for j in 0..k {
            let x_row = &x[(i + j) * cin..(i + j + 1) * cin];
            for (c, &xv) in x_row.iter().enumerate() {
                let k_row = &kd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                for (acc, &kv) in row.iter_mut().zip(k_row) {
                    *acc += xv * kv;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] with respect to input, kernel and
/// bias, given the upstream gradient on the output.
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (l, cin) = (input.shape()[0], input.shape()[1]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[2]);
    let lout = l - k + 1;
    debug_assert_eq!(grad_out.shape(), &[lout, cout]);

    let mut gin = Tensor::zeros(&[l, cin]);
    let mut gk = Tensor::zeros(&[k, cin, cout]);
    let mut gb = Tensor::zeros(&[cout]);
    let x = input.data();
    let kd = kernel.data();
    let go = grad_out.data();

    {
        let gbd = gb.data_mut();
        for i in 0..lout {
            let go_row = &go[i * cout..(i + 1) * cout];
            for (acc, &g) in gbd.iter_mut().zip(go_row) {
                *acc += g;
            }
        }
    }
    {
        let gkd = gk.data_mut();
        for i in 0..lout {
            let go_row = &go[i * cout..(i + 1) * cout];
            for j in 0..k {
                let x_row = &x[(i + j) * cin..(i + j + 1) * cin];
                for (c, &xv) in x_row.iter().enumerate() {
                    let gk_row = &mut gkd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                    for (acc, &g) in gk_row.iter_mut().zip(go_row) {
                        *acc += xv * g;
                    }
                }
            }
        }
    }
    {
        let gind = gin.data_mut();
        for i in 0..lout {
            let go_row = &go[i * cout..(i + 1) * cout];
            for j in 0..k {
                let gi_row = &mut gind[(i + j) * cin..(i + j + 1) * cin];
                for (c, acc) in gi_row.iter_mut().enumerate() {
                    let k_row = &kd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                    let mut s = 0.0;
                    for (&kv, &g) in k_row.iter().zip(go_row) {
                        s += kv * g;
                    }
                    *acc += s;
                }
            }
        }
    }
    (gin, gk, gb)
}

/// Affine map `y = W^T x + b` for weight `[n, m]`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (n, m) = (weight.shape()[0], weight.shape()[1]);
    debug_assert_eq!(input.len(), n);
    let mut out = Tensor::zeros(&[m]);
    let od = out.data_mut();
    od.copy_from_slice(bias.data());
    let w = weight.data();
    for (i, &xv) in input.data().iter().enumerate() {
        let w_row = &w[i * m..(i + 1) * m];
        for (acc, &wv) in od.iter_mut().zip(w_row) {
            *acc += xv * wv;
        }
    }
    out
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, m) = (weight.shape()[0], weight.shape()[1]);
    let mut gin = Tensor::zeros(&[n]);
    let mut gw = Tensor::zeros(&[n, m]);
    // Built without the finite check: a diverged forward pass must be
    // able to flow NaN through backward so training can report it.
    let mut gb = Tensor::zeros(&[m]);
    gb.data_mut().copy_from_slice(grad_out.data());
    let w = weight.data();
    let go = grad_out.data();
    let x = input.data();
    {
        let gwd = gw.data_mut();
        let gind = gin.data_mut();
        for i in 0..n {
            let w_row = &w[i * m..(i + 1) * m];
            let gw_row = &mut gwd[i * m..(i + 1) * m];
            let xv = x[i];
            let mut s = 0.0;
            for ((gwv, &wv), &g) in gw_row.iter_mut().zip(w_row).zip(go) {
                *gwv += xv * g;
                s += wv * g;
            }
            gind[i] = s;
        }
    }
    (gin, gw, gb)
}

/// Non-overlapping max pooling along the length axis. Output length is
/// `length / width` rounded down; a trailing remainder is dropped.
/// Also returns the flat input index of each selected maximum, which
/// [`maxpool1d_backward`] uses to route gradients.
pub fn maxpool1d_forward(input: &Tensor, width: usize) -> (Tensor, Vec<usize>) {
    let (l, c) = (input.shape()[0], input.shape()[1]);
    debug_assert!(width >= 1 && l >= width);
    let lout = l / width;
    let mut out = Tensor::zeros(&[lout, c]);
    let mut argmax = vec![0usize; lout * c];
    let x = input.data();
    let od = out.data_mut();
    for i in 0..lout {
        for ch in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for j in 0..width {
                let idx = (i * width + j) * c + ch;
                if x[idx] > best {
                    best = x[idx];
                    best_idx = idx;
                }
            }
            od[i * c + ch] = best;
            argmax[i * c + ch] = best_idx;
        }
    }
    (out, argmax)
}

pub fn maxpool1d_backward(argmax: &[usize], grad_out: &Tensor, input_shape: &[usize]) -> Tensor {
    let mut gin = Tensor::zeros(input_shape);
    let gind = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gind[idx] += g;
    }
    gin
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// ReLU gradient derived from the forward *output*: positions with
/// positive output pass the gradient, all others block it. The
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward_from_output(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(output.data()) {
        if ov <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Inverted dropout: each element independently survives with
/// probability `1 - rate` and is scaled by `1/(1 - rate)`, so the
/// expectation matches the identity map used at inference. The returned
/// mask holds the applied multiplier per element (0 or the scale) and
/// doubles as the backward-pass multiplier.
pub fn dropout_forward(x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>) {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return (x.clone(), vec![1.0; x.len()]);
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect();
    (apply_mask(x, &mask), mask)
}

pub fn apply_mask(x: &Tensor, mask: &[f64]) -> Tensor {
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    out
}

/// Numerically stable softmax: logits are shifted by their maximum
/// before exponentiation, so arbitrarily large inputs stay finite.
pub fn softmax(logits: &Tensor) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Cross-entropy of the true class probability, clamped below at
/// [`CE_PROB_FLOOR`] so the loss stays finite for any *valid*
/// probability. A NaN probability (diverged network) propagates as
/// NaN rather than being masked by the clamp — `f64::max` would
/// silently swallow it.
pub fn cross_entropy(probs: &[f64], true_class: usize) -> f64 {
    let p = probs[true_class];
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(CE_PROB_FLOOR).ln()
}

/// Gradient of cross-entropy with respect to the softmax *logits*:
/// `probs - one_hot(true_class)`.
pub fn softmax_ce_grad(probs: &[f64], true_class: usize) -> Tensor {
    // Built without the finite check: a diverged forward pass must be
    // able to flow NaN through backward so training can report it.
    let mut g = Tensor::zeros(&[probs.len()]);
    g.data_mut().copy_from_slice(probs);
    g.data_mut()[true_class] -= 1.0;
    g
}
