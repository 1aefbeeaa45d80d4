use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::net::Linear;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilaritySource {
    Weight,
    GradientAccum,
}

impl SimilaritySource {
    pub fn name(self) -> &'static str {
        match self {
            SimilaritySource::Weight => "weight",
            SimilaritySource::GradientAccum => "gradient",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "weight" | "weights" => Some(SimilaritySource::Weight),
            "gradient" | "gradients" | "grad" => Some(SimilaritySource::GradientAccum),
            _ => None,
        }
    }
}

/// Non-negative `m × n` affinity between the `m` input and `n` output neurons of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
    pub source: SimilaritySource,
}

impl SimilarityMatrix {
    pub fn new(values: DMatrix<f64>, source: SimilaritySource) -> Result<Self> {
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("similarity entries must be finite and non-negative".into()));
        }
        Ok(SimilarityMatrix { values, source })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// A linear layer's `out × in` weight viewed as an `in × out` matrix (rows = input neurons).
pub fn layer_matrix(weight: &Tensor) -> DMatrix<f64> {
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    DMatrix::from_fn(inp, out, |i, j| w[j * inp + i])
}

/// Inverse of [`layer_matrix`]: writes an `in × out` matrix back into `out × in` layout.
pub fn matrix_to_layer(m: &DMatrix<f64>) -> Tensor {
    let (inp, out) = m.shape();
    let mut data = vec![0.0; inp * out];
    for j in 0..out {
        for i in 0..inp {
            data[j * inp + i] = m[(i, j)];
        }
    }
    Tensor::from_vec(&[out, inp], data).expect("consistent size")
}

/// `A = |W|` for an `m × n` (input × output) weight matrix.
pub fn weight_similarity(w: &DMatrix<f64>) -> SimilarityMatrix {
    SimilarityMatrix { values: w.abs(), source: SimilaritySource::Weight }
}

pub fn layer_weight_similarity(layer: &Linear) -> SimilarityMatrix {
    weight_similarity(&layer_matrix(&layer.weight))
}

/// Running sum of `|∂L/∂W|` for one linear layer, in the layer's `out × in` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    sum_abs: Tensor,
    steps: u64,
}

impl GradientAccumulator {
    pub fn new(weight_shape: &[usize]) -> Self {
        GradientAccumulator { sum_abs: Tensor::zeros(weight_shape), steps: 0 }
    }

    pub fn record(&mut self, grad: &Tensor) -> Result<()> {
        if grad.shape() != self.sum_abs.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match accumulator {:?}",
                grad.shape(),
                self.sum_abs.shape()
            )));
        }
        for (s, g) in self.sum_abs.data_mut().iter_mut().zip(grad.data()) {
            *s += g.abs();
        }
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn sum_abs(&self) -> &Tensor {
        &self.sum_abs
    }
}

/// Mean absolute recorded gradient, as an `in × out` similarity.
pub fn gradient_similarity(acc: &GradientAccumulator) -> Result<SimilarityMatrix> {
    if acc.steps == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let mut mean = layer_matrix(&acc.sum_abs);
    mean /= acc.steps as f64;
    Ok(SimilarityMatrix { values: mean, source: SimilaritySource::GradientAccum })
}
