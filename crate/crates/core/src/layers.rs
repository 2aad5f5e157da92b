//! Convolutional neuron layers: conventional and quadratic.
//!
//! A quadratic neuron computes
//! `sigma((w1*x + b1) .* (w2*x + b2) + w3*(x .* x) + b3)` where `*` is the
//! same-padded convolution and `.*` the Hadamard product; the activation is
//! applied by the surrounding node sequence, not here. ReLinear
//! initialization (`w2 = 0, b2 = 1, w3 = 0, b3 = 0`) makes a fresh quadratic
//! layer compute exactly the conventional layer `(w1, b1)`.

use rand::Rng as _;

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Learning-rate group of a parameter. Conventional parameters and the
/// quadratic `w1/b1` train at the base rate (0.001); the quadratic branches
/// `w2/b2/w3/b3` train at the reduced rate (0.0001).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrGroup {
    Base,
    Quad,
}

pub const LR_BASE: f64 = 0.001;
pub const LR_QUAD: f64 = 0.0001;

impl LrGroup {
    pub fn default_lr(self) -> f64 {
        match self {
            LrGroup::Base => LR_BASE,
            LrGroup::Quad => LR_QUAD,
        }
    }
}

/// Partition of a network's parameters into learning-rate groups, by
/// parameter index in the network's canonical walk order.
#[derive(Clone, Debug, Default)]
pub struct LrGroups {
    pub base: Vec<usize>,
    pub quad: Vec<usize>,
}

/// Fan-in-scaled uniform init: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel).map(|_| T::c(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("shape/data consistent")
}

/// A conventional convolutional neuron layer.
#[derive(Clone, Debug)]
pub struct ConvNeuronLayer<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub kernel: usize,
}

impl<T: Scalar> ConvNeuronLayer<T> {
    pub fn init(cin: usize, cout: usize, kernel: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        ConvNeuronLayer {
            w: kaiming_uniform(vec![cout, cin, kernel, kernel], fan_in, rng),
            b: Tensor::zeros(vec![cout]),
            kernel,
        }
    }

    pub fn wire(&self, tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        tape.conv2d(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.b.numel()
    }
}

/// A quadratic convolutional neuron layer with three filter banks.
#[derive(Clone, Debug)]
pub struct QuadNeuronLayer<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub w3: Tensor<T>,
    pub b3: Tensor<T>,
    pub kernel: usize,
}

/// Tape variables for the six quadratic parameters, in checkpoint order.
#[derive(Clone, Copy, Debug)]
pub struct QuadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl<T: Scalar> QuadNeuronLayer<T> {
    /// Construct from explicit tensors, validating that the three filter
    /// banks share one shape.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w1: Tensor<T>,
        b1: Tensor<T>,
        w2: Tensor<T>,
        b2: Tensor<T>,
        w3: Tensor<T>,
        b3: Tensor<T>,
        kernel: usize,
    ) -> Result<Self> {
        if w1.shape() != w2.shape() || w1.shape() != w3.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "quad_layer",
                detail: format!(
                    "filter banks differ: w1 {:?}, w2 {:?}, w3 {:?}",
                    w1.shape(),
                    w2.shape(),
                    w3.shape()
                ),
            });
        }
        if b1.shape() != b2.shape() || b1.shape() != b3.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "quad_layer",
                detail: "bias shapes differ".into(),
            });
        }
        Ok(QuadNeuronLayer { w1, b1, w2, b2, w3, b3, kernel })
    }

    /// ReLinear initialization: `w1, b1` conventional, `w2 = 0, b2 = 1,
    /// w3 = 0, b3 = 0`. The rng stream is consumed exactly as in
    /// [`ConvNeuronLayer::init`], so a quadratic layer and its conventional
    /// twin draw identical `w1`.
    pub fn relinear_init(cin: usize, cout: usize, kernel: usize, rng: &mut Rng) -> Self {
        let conv = ConvNeuronLayer::<T>::init(cin, cout, kernel, rng);
        QuadNeuronLayer {
            w1: conv.w,
            b1: conv.b,
            w2: Tensor::zeros(vec![cout, cin, kernel, kernel]),
            b2: Tensor::full(vec![cout], T::one()),
            w3: Tensor::zeros(vec![cout, cin, kernel, kernel]),
            b3: Tensor::zeros(vec![cout]),
            kernel,
        }
    }

    /// `(conv(x,w1)+b1) .* (conv(x,w2)+b2) + conv(x.*x, w3) + b3`.
    /// Biases broadcast per output channel inside each convolution.
    pub fn wire(&self, tape: &mut Tape<T>, x: Var, vars: QuadVars) -> Result<Var> {
        let lin1 = tape.conv2d(x, vars.w1, vars.b1)?;
        let lin2 = tape.conv2d(x, vars.w2, vars.b2)?;
        let xx = tape.hadamard(x, x)?;
        let sq = tape.conv2d(xx, vars.w3, vars.b3)?;
        let prod = tape.hadamard(lin1, lin2)?;
        tape.add(prod, sq)
    }

    pub fn param_count(&self) -> usize {
        3 * (self.w1.numel() + self.b1.numel())
    }
}
