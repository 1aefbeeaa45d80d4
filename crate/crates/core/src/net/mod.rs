//! Deterministic forward/backward engine for the two bias-free architectures
//! (an MNIST MLP and a small CIFAR-10 CNN) plus the Adam optimizer and checkpoints.

mod adam;
mod checkpoint;
mod gemm;
mod kernels;
mod layer;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{deserialize, load_checkpoint, save_checkpoint, serialize, Checkpoint};
pub use layer::{Conv2d, Layer, LayerKind, Linear};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// 784 → 64 → 64 → 10 with ReLU between linear layers.
    MlpMnist,
    /// conv(3→16, 3×3, s1, p1) → ReLU → pool 2 → flatten → 4096 → 64 → 64 → 10.
    CnnCifar,
    /// Anything assembled by hand (tests, toy models).
    Custom,
}

impl Architecture {
    pub fn tag(self) -> u8 {
        match self {
            Architecture::MlpMnist => 1,
            Architecture::CnnCifar => 2,
            Architecture::Custom => 255,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Architecture::MlpMnist),
            2 => Some(Architecture::CnnCifar),
            255 => Some(Architecture::Custom),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::MlpMnist => "mlp-mnist",
            Architecture::CnnCifar => "cnn-cifar",
            Architecture::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mlp-mnist" | "mlp" | "mnist" => Some(Architecture::MlpMnist),
            "cnn-cifar" | "cnn" | "cifar" | "cifar10" => Some(Architecture::CnnCifar),
            _ => None,
        }
    }

    /// Per-example input extents.
    pub fn input_shape(self) -> Option<Vec<usize>> {
        match self {
            Architecture::MlpMnist => Some(vec![784]),
            Architecture::CnnCifar => Some(vec![3, 32, 32]),
            Architecture::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Zero mask over the feature axis of the activation entering layer `boundary`
/// (`boundary == layers.len()` addresses the logits).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    pub boundary: usize,
    pub keep: Vec<bool>,
}

/// Every layer-boundary activation of one forward pass: `activations[0]` is the
/// input batch and `activations[i + 1]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_logits(mut self) -> Tensor {
        self.activations.pop().expect("trace holds at least the input")
    }
}

/// PyTorch-default style init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

fn linear(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Layer {
    Layer::Linear(Linear::new(kaiming_uniform(&[out, inp], inp, rng)))
}

impl Network {
    /// Assembles a network, checking that every layer accepts its predecessor's output.
    pub fn new(arch: Architecture, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Network { arch, input_shape, layers };
        net.output_shape()?;
        Ok(net)
    }

    pub fn mlp_mnist(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            linear(64, 784, &mut rng),
            Layer::Relu,
            linear(64, 64, &mut rng),
            Layer::Relu,
            linear(NUM_CLASSES, 64, &mut rng),
        ];
        Network::new(Architecture::MlpMnist, vec![784], layers).expect("valid architecture")
    }

    pub fn cnn_cifar(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv2d::new(kaiming_uniform(&[16, 3, 3, 3], 27, &mut rng), 1, 1);
        let layers = vec![
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::MaxPool2d { size: 2 },
            Layer::Flatten,
            linear(64, 16 * 16 * 16, &mut rng),
            Layer::Relu,
            linear(64, 64, &mut rng),
            Layer::Relu,
            linear(NUM_CLASSES, 64, &mut rng),
        ];
        Network::new(Architecture::CnnCifar, vec![3, 32, 32], layers).expect("valid architecture")
    }

    pub fn for_architecture(arch: Architecture, seed: u64) -> Result<Self> {
        match arch {
            Architecture::MlpMnist => Ok(Network::mlp_mnist(seed)),
            Architecture::CnnCifar => Ok(Network::cnn_cifar(seed)),
            Architecture::Custom => Err(Error::InvalidArgument("custom networks are built by hand".into())),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-example extents at every layer boundary, input first.
    pub fn boundary_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        let mut cur = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Layer::Linear(l) => {
                    if cur != [l.in_features()] {
                        return Err(Error::Shape(format!("layer {i}: linear expects [{}], got {cur:?}", l.in_features())));
                    }
                    vec![l.out_features()]
                }
                Layer::Conv2d(c) => {
                    if cur.len() != 3 || cur[0] != c.in_channels() {
                        return Err(Error::Shape(format!("layer {i}: conv expects [{}, H, W], got {cur:?}", c.in_channels())));
                    }
                    let (kh, kw) = c.kernel();
                    if cur[1] + 2 * c.padding < kh || cur[2] + 2 * c.padding < kw {
                        return Err(Error::Shape(format!("layer {i}: input {cur:?} smaller than kernel")));
                    }
                    let (oh, ow) = c.output_hw(cur[1], cur[2]);
                    vec![c.out_channels(), oh, ow]
                }
                Layer::Relu => cur,
                Layer::MaxPool2d { size } => {
                    if cur.len() != 3 || *size == 0 || cur[1] < *size || cur[2] < *size {
                        return Err(Error::Shape(format!("layer {i}: max-pool {size} on {cur:?}")));
                    }
                    vec![cur[0], cur[1] / size, cur[2] / size]
                }
                Layer::Flatten => vec![cur.iter().product()],
            };
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.boundary_shapes()?.pop().expect("non-empty"))
    }

    /// Indices into `layers` of every linear layer, in order.
    pub fn linear_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Linear(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices into `layers` of every parameterized layer, in order.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.weight().is_some()).map(|(i, _)| i).collect()
    }

    pub fn linear(&self, index: usize) -> Option<&Linear> {
        match self.layers.get(index) {
            Some(Layer::Linear(l)) => Some(l),
            _ => None,
        }
    }

    pub fn linear_mut(&mut self, index: usize) -> Option<&mut Linear> {
        match self.layers.get_mut(index) {
            Some(Layer::Linear(l)) => Some(l),
            _ => None,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().filter_map(Layer::weight).map(Tensor::len).sum()
    }

    pub fn num_nonzero_weights(&self) -> usize {
        self.layers.iter().filter_map(Layer::weight).map(Tensor::count_nonzero).sum()
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            if let Some(g) = layer.grad_mut() {
                g.fill(0.0);
            }
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.is_empty() || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch {:?} does not match network input [N, {:?}]",
                shape, self.input_shape
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ActivationTrace> {
        self.forward_masked(batch, &[])
    }

    /// Forward pass that zeroes masked features at the given boundaries.
    pub fn forward_masked(&self, batch: &Tensor, masks: &[BoundaryMask]) -> Result<ActivationTrace> {
        self.check_batch(batch)?;
        let shapes = self.boundary_shapes()?;
        for m in masks {
            let shape = shapes
                .get(m.boundary)
                .ok_or_else(|| Error::InvalidArgument(format!("mask boundary {} out of range", m.boundary)))?;
            if shape.len() != 1 || shape[0] != m.keep.len() {
                return Err(Error::Shape(format!(
                    "mask of length {} at boundary {} with activation {:?}",
                    m.keep.len(),
                    m.boundary,
                    shape
                )));
            }
        }
        let apply = |boundary: usize, t: &mut Tensor| {
            for m in masks.iter().filter(|m| m.boundary == boundary) {
                let width = m.keep.len();
                for row in t.data_mut().chunks_mut(width) {
                    for (v, &keep) in row.iter_mut().zip(&m.keep) {
                        if !keep {
                            *v = 0.0;
                        }
                    }
                }
            }
        };

        let mut input = batch.clone();
        apply(0, &mut input);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let x = activations.last().expect("non-empty");
            let mut y = match layer {
                Layer::Linear(l) => kernels::linear_forward(l, x),
                Layer::Conv2d(c) => kernels::conv_forward(c, x),
                Layer::Relu => kernels::relu_forward(x),
                Layer::MaxPool2d { size } => kernels::maxpool_forward(x, *size),
                Layer::Flatten => {
                    let n = x.rows();
                    x.clone().reshape(&[n, x.row_len()])?
                }
            };
            y.ensure_finite("forward")?;
            apply(i + 1, &mut y);
            activations.push(y);
        }
        Ok(ActivationTrace { activations })
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(batch)?.into_logits())
    }

    /// Writes `∂L_CE/∂W` into every layer's grad and returns the mean cross-entropy.
    pub fn backward(&mut self, trace: &ActivationTrace, targets: &[usize]) -> Result<f64> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::Shape(format!(
                "trace has {} activations, network needs {}",
                trace.activations.len(),
                self.layers.len() + 1
            )));
        }
        let shapes = self.boundary_shapes()?;
        for (a, s) in trace.activations.iter().zip(&shapes) {
            if a.shape().is_empty() || a.shape()[1..] != s[..] {
                return Err(Error::Shape(format!("trace activation {:?} does not match {:?}", a.shape(), s)));
            }
        }
        let logits = trace.logits();
        if logits.rows() != targets.len() {
            return Err(Error::Shape(format!("{} targets for {} logits rows", targets.len(), logits.rows())));
        }
        let (loss, mut grad) = softmax_cross_entropy(logits, targets)?;

        for i in (0..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let need_dx = i > 0;
            let next = match &mut self.layers[i] {
                Layer::Linear(l) => kernels::linear_backward(l, x, &grad, need_dx),
                Layer::Conv2d(c) => kernels::conv_backward(c, x, &grad, need_dx),
                Layer::Relu => Some(kernels::relu_backward(x, &grad)),
                Layer::MaxPool2d { size } => Some(kernels::maxpool_backward(x, &grad, *size)),
                Layer::Flatten => Some(grad.clone().reshape(x.shape())?),
            };
            match next {
                Some(g) => grad = g,
                None => break,
            }
        }
        for layer in &self.layers {
            if let Some(g) = layer.grad() {
                g.ensure_finite("backward")?;
            }
        }
        Ok(loss)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let classes = logits.row_len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::InvalidArgument(format!("target {t} out of range for {classes} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss -= row[t] - max - log_sum;
        let g = &mut grad.data_mut()[r * classes..(r + 1) * classes];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max - log_sum).exp() / n as f64;
        }
        g[t] -= 1.0 / n as f64;
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }
    Ok((loss, grad))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
