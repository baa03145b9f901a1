//! Differentiable models `f_w(x) ∈ ℝᴷ` with exact per-example Jacobians.
//!
//! Parameters are a flat vector. For an [`Mlp`] the layout is fixed:
//! layers in forward order, and within a layer the `out × in` weight
//! matrix (row-major) followed by the `out` biases. Every posterior in the
//! crate indexes into this ordering.

use std::ops::{Deref, DerefMut};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::scalar::{axpy, dot, sigmoid, Scalar};

/// Flattened network weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T> Deref for ParamVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for ParamVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        ParamVector(v)
    }
}

/// `K×P` Jacobian `∇_w f_w(x)ᵀ` together with the output it linearizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian<T> {
    pub matrix: Matrix<T>,
    pub output: Vec<T>,
    pub input: Vec<T>,
}

/// A model that is differentiable in its parameters.
pub trait Model<T: Scalar>: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;

    fn forward(&self, w: &[T], x: &[T]) -> Result<Vec<T>>;

    /// Evaluates `f = f_w(x)`, asks `cotangent` for a vector `c(f)` and
    /// accumulates `∇_w f_w(x)ᵀ c` into `grad`. Returns `f`.
    fn forward_vjp(
        &self,
        w: &[T],
        x: &[T],
        cotangent: &mut dyn FnMut(&[T]) -> Result<Vec<T>>,
        grad: &mut [T],
    ) -> Result<Vec<T>>;

    fn jacobian(&self, w: &[T], x: &[T]) -> Result<Jacobian<T>>;

    fn init_params(&self, rng: &mut Rng) -> ParamVector<T>;

    fn check_dims(&self, w: &[T], x: &[T]) -> Result<()> {
        ensure_len("parameter vector", self.param_count(), w.len())?;
        ensure_len("model input", self.input_dim(), x.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Sigmoid => a * (T::one() - a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        MlpConfig {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer widths must be at least 1, got {self:?}"
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.output_dim);
        w
    }
}

/// Number of parameters `P = Σ_l (in_l + 1)·out_l`.
pub fn param_count(cfg: &MlpConfig) -> usize {
    cfg.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

/// Fully connected network; hidden layers use `cfg.activation`, the
/// output layer is affine. With no hidden layers it is a linear model.
#[derive(Clone, Debug)]
pub struct Mlp {
    cfg: MlpConfig,
    layers: Vec<Layer>,
    params: usize,
}

impl Mlp {
    pub fn new(cfg: MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for w in cfg.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                weights: offset,
                biases: offset + fan_in * fan_out,
            });
            offset += (fan_in + 1) * fan_out;
        }
        Ok(Mlp {
            cfg,
            layers,
            params: offset,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// Offset of the output layer's first parameter.
    pub fn output_layer_offset(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights)
    }

    /// Activations of every layer; the last entry is the output.
    fn activations<T: Scalar>(&self, w: &[T], x: &[T]) -> Vec<Vec<T>> {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut out = Vec::with_capacity(layer.fan_out);
            for o in 0..layer.fan_out {
                let row = &w[layer.weights + o * layer.fan_in..layer.weights + (o + 1) * layer.fan_in];
                let z = dot(row, input) + w[layer.biases + o];
                out.push(if l == last { z } else { self.cfg.activation.apply(z) });
            }
            acts.push(out);
        }
        acts
    }

    /// Back-propagates `cot` (a cotangent on the outputs) and accumulates
    /// the parameter gradient into `grad`.
    fn backward<T: Scalar>(&self, w: &[T], acts: &[Vec<T>], cot: &[T], grad: &mut [T]) {
        let mut delta = cot.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let off = layer.weights + o * layer.fan_in;
                axpy(d, input, &mut grad[off..off + layer.fan_in]);
                grad[layer.biases + o] += d;
            }
            if l > 0 {
                let mut prev = vec![T::zero(); layer.fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d != T::zero() {
                        let off = layer.weights + o * layer.fan_in;
                        axpy(d, &w[off..off + layer.fan_in], &mut prev);
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= self.cfg.activation.derivative_from_output(a);
                }
                delta = prev;
            }
        }
    }
}

impl<T: Scalar> Model<T> for Mlp {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    fn output_dim(&self) -> usize {
        self.cfg.output_dim
    }

    fn param_count(&self) -> usize {
        self.params
    }

    fn forward(&self, w: &[T], x: &[T]) -> Result<Vec<T>> {
        self.check_dims(w, x)?;
        Ok(self.activations(w, x).pop().expect("at least one layer"))
    }

    fn forward_vjp(
        &self,
        w: &[T],
        x: &[T],
        cotangent: &mut dyn FnMut(&[T]) -> Result<Vec<T>>,
        grad: &mut [T],
    ) -> Result<Vec<T>> {
        self.check_dims(w, x)?;
        ensure_len("gradient buffer", self.params, grad.len())?;
        let acts = self.activations(w, x);
        let f = acts.last().expect("output layer");
        let cot = cotangent(f)?;
        ensure_len("output cotangent", self.cfg.output_dim, cot.len())?;
        self.backward(w, &acts, &cot, grad);
        Ok(f.clone())
    }

    fn jacobian(&self, w: &[T], x: &[T]) -> Result<Jacobian<T>> {
        self.check_dims(w, x)?;
        let acts = self.activations(w, x);
        let k = self.cfg.output_dim;
        let mut matrix = Matrix::zeros(k, self.params);
        let mut unit = vec![T::zero(); k];
        for row in 0..k {
            unit[row] = T::one();
            self.backward(w, &acts, &unit, matrix.row_mut(row));
            unit[row] = T::zero();
        }
        Ok(Jacobian {
            matrix,
            output: acts.last().expect("output layer").clone(),
            input: x.to_vec(),
        })
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    fn init_params(&self, rng: &mut Rng) -> ParamVector<T> {
        let mut w = vec![T::zero(); self.params];
        for layer in &self.layers {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut w[layer.weights..layer.biases] {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        ParamVector(w)
    }
}

/// Linear basis-function model `f(x) = Φ(x)·w` where the input *is* the
/// row-major `K×P` feature matrix `Φ(x)`. Its Jacobian is `Φ(x)` exactly,
/// which makes it the reference instance for the equivalence results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearBasisModel {
    pub outputs: usize,
    pub params: usize,
}

impl LinearBasisModel {
    pub fn new(outputs: usize, params: usize) -> Self {
        LinearBasisModel { outputs, params }
    }
}

impl<T: Scalar> Model<T> for LinearBasisModel {
    fn input_dim(&self) -> usize {
        self.outputs * self.params
    }

    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn param_count(&self) -> usize {
        self.params
    }

    fn forward(&self, w: &[T], x: &[T]) -> Result<Vec<T>> {
        self.check_dims(w, x)?;
        Ok(x.chunks(self.params).map(|row| dot(row, w)).collect())
    }

    fn forward_vjp(
        &self,
        w: &[T],
        x: &[T],
        cotangent: &mut dyn FnMut(&[T]) -> Result<Vec<T>>,
        grad: &mut [T],
    ) -> Result<Vec<T>> {
        let f = self.forward(w, x)?;
        let cot = cotangent(&f)?;
        ensure_len("output cotangent", self.outputs, cot.len())?;
        for (row, &c) in x.chunks(self.params).zip(&cot) {
            axpy(c, row, grad);
        }
        Ok(f)
    }

    fn jacobian(&self, w: &[T], x: &[T]) -> Result<Jacobian<T>> {
        let output = self.forward(w, x)?;
        Ok(Jacobian {
            matrix: Matrix::from_vec(self.outputs, self.params, x.to_vec())?,
            output,
            input: x.to_vec(),
        })
    }

    fn init_params(&self, _rng: &mut Rng) -> ParamVector<T> {
        ParamVector(vec![T::zero(); self.params])
    }
}

/// Model output at `x`.
pub fn forward<T: Scalar, M: Model<T>>(model: &M, w: &[T], x: &[T]) -> Result<Vec<T>> {
    model.forward(w, x)
}

/// `K×P` Jacobian of the outputs at `x`, one reverse sweep per output.
pub fn jacobian<T: Scalar, M: Model<T>>(model: &M, w: &[T], x: &[T]) -> Result<Jacobian<T>> {
    model.jacobian(w, x)
}
