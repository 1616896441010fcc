//! Stage-based network container: an ordered stack of primitive layers
//! with a softmax classifier head and full reverse-mode gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::ops;
use super::tensor::Tensor;

/// One stage of the stack. Convolution and dense stages may fuse a ReLU
/// on their output; the final dense stage is expected to stay linear
/// because the network applies softmax to the last stage's output.
#[derive(Debug, Clone)]
pub enum StageOp {
    Conv1d { kernel: Tensor, bias: Tensor, relu: bool },
    Dense { weight: Tensor, bias: Tensor, relu: bool },
    MaxPool1d { width: usize },
    Dropout { rate: f64 },
    Flatten,
}

impl StageOp {
    /// Parameter tensors of this stage, `(weights, bias)`, if any.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            StageOp::Conv1d { kernel, bias, .. } => Some((kernel, bias)),
            StageOp::Dense { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            StageOp::Conv1d { kernel, bias, .. } => Some((kernel, bias)),
            StageOp::Dense { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }
}

/// Per-stage parameter gradients, aligned with `Network::stages`.
/// Entries are `None` for parameterless stages.
pub type Gradients = Vec<Option<(Tensor, Tensor)>>;

/// Activations captured by a training-mode forward pass, consumed by
/// [`Network::backward`]. `inputs[i]` is the tensor fed to stage `i`;
/// `outputs[i]` its post-activation result. Dropout multiplier masks are
/// kept so the same pass can be replayed deterministically.
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
    pub outputs: Vec<Tensor>,
    pub masks: Vec<Option<Vec<f64>>>,
    pub argmax: Vec<Option<Vec<usize>>>,
    pub probs: Vec<f64>,
}

/// Feed-forward classifier: a stack of [`StageOp`] terminated by an
/// implicit softmax over the last stage's (rank-1) output.
#[derive(Debug, Clone)]
pub struct Network {
    stages: Vec<StageOp>,
    input_shape: [usize; 2],
}

impl Network {
    /// Builds the network and validates the whole shape chain once, so
    /// the per-sample paths can use unchecked arithmetic.
    pub fn new(input_shape: [usize; 2], stages: Vec<StageOp>) -> Result<Self> {
        let net = Network { stages, input_shape };
        net.shape_chain()?;
        Ok(net)
    }

    pub fn stages(&self) -> &[StageOp] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [StageOp] {
        &mut self.stages
    }

    pub fn input_shape(&self) -> [usize; 2] {
        self.input_shape
    }

    /// Shape of every intermediate tensor, starting with the input and
    /// ending with the classifier logits. Errors if any stage cannot
    /// accept its predecessor's shape.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![vec![self.input_shape[0], self.input_shape[1]]];
        let mut cur = shapes[0].clone();
        for (idx, stage) in self.stages.iter().enumerate() {
            cur = match stage {
                StageOp::Conv1d { kernel, bias, .. } => {
                    let (k, cin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
                    if cur.len() != 2 || cur[1] != cin || cur[0] < k {
                        return Err(Error::numeric(format!(
                            "stage {idx}: conv kernel {:?} does not fit input {cur:?}",
                            kernel.shape()
                        )));
                    }
                    if bias.len() != cout {
                        return Err(Error::numeric(format!("stage {idx}: bias/kernel mismatch")));
                    }
                    vec![cur[0] - k + 1, cout]
                }
                StageOp::Dense { weight, bias, .. } => {
                    let (n, m) = (weight.shape()[0], weight.shape()[1]);
                    let flat: usize = cur.iter().product();
                    if cur.len() != 1 || flat != n {
                        return Err(Error::numeric(format!(
                            "stage {idx}: dense weight {:?} wants rank-1 input of {n}, got {cur:?}",
                            weight.shape()
                        )));
                    }
                    if bias.len() != m {
                        return Err(Error::numeric(format!("stage {idx}: bias/weight mismatch")));
                    }
                    vec![m]
                }
                StageOp::MaxPool1d { width } => {
                    if cur.len() != 2 || *width == 0 || cur[0] < *width {
                        return Err(Error::numeric(format!(
                            "stage {idx}: pool width {width} does not fit input {cur:?}"
                        )));
                    }
                    vec![cur[0] / width, cur[1]]
                }
                StageOp::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::numeric(format!(
                            "stage {idx}: dropout rate {rate} outside [0, 1)"
                        )));
                    }
                    cur
                }
                StageOp::Flatten => vec![cur.iter().product()],
            };
            shapes.push(cur.clone());
        }
        match shapes.last() {
            Some(last) if last.len() == 1 && last[0] >= 2 => Ok(shapes),
            other => Err(Error::numeric(format!(
                "network must end in a rank-1 logit vector of >= 2 classes, got {other:?}"
            ))),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.shape_chain().expect("validated at construction").last().unwrap()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.stages
            .iter()
            .filter_map(|s| s.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Inference-mode forward pass: dropout is the identity, no cache.
    pub fn forward_infer(&self, input: &Tensor) -> Vec<f64> {
        let mut cur = input.clone();
        for stage in &self.stages {
            cur = match stage {
                StageOp::Conv1d { kernel, bias, relu } => {
                    let y = ops::conv1d_forward(&cur, kernel, bias);
                    if *relu { ops::relu(&y) } else { y }
                }
                StageOp::Dense { weight, bias, relu } => {
                    let y = ops::dense_forward(&cur, weight, bias);
                    if *relu { ops::relu(&y) } else { y }
                }
                StageOp::MaxPool1d { width } => ops::maxpool1d_forward(&cur, *width).0,
                StageOp::Dropout { .. } => cur,
                StageOp::Flatten => cur.reshaped(&[cur.len()]),
            };
        }
        ops::softmax(&cur)
    }

    /// Training-mode forward pass: dropout masks are sampled from `rng`
    /// and every intermediate activation is cached for [`Self::backward`].
    pub fn forward_train(&self, input: &Tensor, rng: &mut ChaCha8Rng) -> ForwardCache {
        self.forward_cached(input, Some(rng), None)
    }

    /// Replays a training-mode pass under previously captured dropout
    /// masks. Finite-difference checks rely on this to keep the
    /// stochastic part of the function frozen across evaluations.
    pub fn forward_masked(&self, input: &Tensor, masks: &[Option<Vec<f64>>]) -> Vec<f64> {
        self.forward_cached(input, None, Some(masks)).probs
    }

    fn forward_cached(
        &self,
        input: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
        fixed_masks: Option<&[Option<Vec<f64>>]>,
    ) -> ForwardCache {
        let n = self.stages.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            masks: vec![None; n],
            argmax: vec![None; n],
            probs: Vec::new(),
        };
        let mut cur = input.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            cache.inputs.push(cur.clone());
            cur = match stage {
                StageOp::Conv1d { kernel, bias, relu } => {
                    let y = ops::conv1d_forward(&cur, kernel, bias);
                    if *relu { ops::relu(&y) } else { y }
                }
                StageOp::Dense { weight, bias, relu } => {
                    let y = ops::dense_forward(&cur, weight, bias);
                    if *relu { ops::relu(&y) } else { y }
                }
                StageOp::MaxPool1d { width } => {
                    let (y, arg) = ops::maxpool1d_forward(&cur, *width);
                    cache.argmax[i] = Some(arg);
                    y
                }
                StageOp::Dropout { rate } => {
                    let mask = match fixed_masks {
                        Some(masks) => masks[i].clone().unwrap_or_else(|| vec![1.0; cur.len()]),
                        None => {
                            let rng = rng.as_deref_mut().expect("rng required to sample dropout");
                            sample_mask(cur.len(), *rate, rng)
                        }
                    };
                    let y = ops::apply_mask(&cur, &mask);
                    cache.masks[i] = Some(mask);
                    y
                }
                StageOp::Flatten => cur.reshaped(&[cur.len()]),
            };
            cache.outputs.push(cur.clone());
        }
        cache.probs = ops::softmax(&cur);
        cache
    }

    /// Cross-entropy loss and parameter gradients for one sample, from a
    /// cached training-mode pass. Starts from the fused softmax +
    /// cross-entropy identity `d loss / d logits = probs - one_hot`.
    pub fn backward(&self, cache: &ForwardCache, true_class: usize) -> (f64, Gradients) {
        let loss = ops::cross_entropy(&cache.probs, true_class);
        let mut grads: Gradients = vec![None; self.stages.len()];
        let mut g = ops::softmax_ce_grad(&cache.probs, true_class);
        for (i, stage) in self.stages.iter().enumerate().rev() {
            g = match stage {
                StageOp::Conv1d { kernel, relu, .. } => {
                    let g_act = if *relu {
                        ops::relu_backward_from_output(&cache.outputs[i], &g)
                    } else {
                        g
                    };
                    let g_act = g_act.reshaped(&[cache.outputs[i].shape()[0], cache.outputs[i].shape()[1]]);
                    let (gin, gk, gb) = ops::conv1d_backward(&cache.inputs[i], kernel, &g_act);
                    grads[i] = Some((gk, gb));
                    gin
                }
                StageOp::Dense { weight, relu, .. } => {
                    let g_act = if *relu {
                        ops::relu_backward_from_output(&cache.outputs[i], &g)
                    } else {
                        g
                    };
                    let (gin, gw, gb) = ops::dense_backward(&cache.inputs[i], weight, &g_act);
                    grads[i] = Some((gw, gb));
                    gin
                }
                StageOp::MaxPool1d { .. } => {
                    let arg = cache.argmax[i].as_ref().expect("pool cached argmax");
                    ops::maxpool1d_backward(arg, &g, cache.inputs[i].shape())
                }
                StageOp::Dropout { .. } => {
                    let mask = cache.masks[i].as_ref().expect("dropout cached mask");
                    ops::apply_mask(&g, mask)
                }
                StageOp::Flatten => g.reshaped(cache.inputs[i].shape()),
            };
        }
        (loss, grads)
    }
}

fn sample_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let scale = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_net() -> Network {
        // (4 x 1) -> conv(k=2, 2ch, relu) -> flatten -> dense(2)
        let kernel = Tensor::from_vec(&[2, 1, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let kbias = Tensor::from_vec(&[2], vec![0.1, -0.1]).unwrap();
        let weight = Tensor::from_vec(&[6, 2], (0..12).map(|i| (i as f64) * 0.1 - 0.5).collect()).unwrap();
        let wbias = Tensor::from_vec(&[2], vec![0.0, 0.2]).unwrap();
        Network::new(
            [4, 1],
            vec![
                StageOp::Conv1d { kernel, bias: kbias, relu: true },
                StageOp::Flatten,
                StageOp::Dense { weight, bias: wbias, relu: false },
            ],
        )
        .unwrap()
    }

    #[test]
    fn shape_chain_and_param_count() {
        let net = tiny_net();
        let shapes = net.shape_chain().unwrap();
        assert_eq!(shapes, vec![vec![4, 1], vec![3, 2], vec![6], vec![2]]);
        assert_eq!(net.parameter_count(), 4 + 2 + 12 + 2);
        assert_eq!(net.n_classes(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let kernel = Tensor::zeros(&[5, 1, 2]);
        let bias = Tensor::zeros(&[2]);
        let err = Network::new([4, 1], vec![StageOp::Conv1d { kernel, bias, relu: false }]);
        assert!(err.is_err());
    }

    #[test]
    fn forward_probs_sum_to_one() {
        let net = tiny_net();
        let x = Tensor::from_vec(&[4, 1], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let p = net.forward_infer(&x);
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn infer_is_deterministic() {
        let net = tiny_net();
        let x = Tensor::from_vec(&[4, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = net.forward_infer(&x);
        let b = net.forward_infer(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_zero_weights_gives_zero_weight_grads() {
        // With all-zero input and weights the logits are uniform, so the
        // logit gradient is nonzero, but every weight gradient must
        // vanish while bias gradients carry the signal.
        let kernel = Tensor::zeros(&[2, 1, 2]);
        let kbias = Tensor::zeros(&[2]);
        let weight = Tensor::zeros(&[6, 2]);
        let wbias = Tensor::zeros(&[2]);
        let net = Network::new(
            [4, 1],
            vec![
                StageOp::Conv1d { kernel, bias: kbias, relu: false },
                StageOp::Flatten,
                StageOp::Dense { weight, bias: wbias, relu: false },
            ],
        )
        .unwrap();
        let x = Tensor::zeros(&[4, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cache = net.forward_train(&x, &mut rng);
        let (loss, grads) = net.backward(&cache, 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (gw, gb) = grads[2].as_ref().unwrap();
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gb.iter().any(|&v| v != 0.0));
        let (gk, _) = grads[0].as_ref().unwrap();
        assert!(gk.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_replay_matches_train_pass() {
        let net = Network::new(
            [4, 1],
            vec![
                StageOp::Flatten,
                StageOp::Dropout { rate: 0.5 },
                StageOp::Dense {
                    weight: Tensor::from_vec(&[4, 2], vec![0.3; 8]).unwrap(),
                    bias: Tensor::zeros(&[2]),
                    relu: false,
                },
            ],
        )
        .unwrap();
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cache = net.forward_train(&x, &mut rng);
        let replay = net.forward_masked(&x, &cache.masks);
        assert_eq!(cache.probs, replay);
    }
}
