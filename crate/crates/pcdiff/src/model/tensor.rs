//! Minimal dense-tensor and linear-layer machinery with hand-written
//! reverse-mode gradients. Everything is f64; gradients accumulate into a
//! buffer stored next to each parameter so a batch can sum contributions
//! before one optimizer step.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::SizeMismatch {
                what: "tensor data",
                expected: n,
                got: data.len(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A trainable tensor plus its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(dims: &[usize]) -> Param {
        let value = Tensor::zeros(dims);
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    /// Xavier-uniform initialization for a [out, in] weight matrix.
    pub fn xavier(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Param {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let value = Tensor {
            dims: vec![out_dim, in_dim],
            data,
        };
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.value.data.iter().all(|v| v.is_finite())
    }
}

/// Anything exposing an ordered set of parameters. The visiting order is the
/// declaration order of the network's fields and must stay stable: the
/// optimizer state and the model file format are both indexed by it.
pub trait ParamSet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}

/// Pointwise nonlinearity used throughout the toy networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative with respect to the pre-activation input.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Activation> {
        match name {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidParameter(format!(
                "unknown activation '{other}' (expected silu, tanh, or relu)"
            ))),
        }
    }

    /// Stable numeric code used by the model file format.
    pub fn code(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Activation> {
        match code {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// Fully connected layer `y = W x + b`, weight stored [out, in] row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Linear {
        Linear {
            weight: Param::xavier(out_dim, in_dim, rng),
            bias: Param::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dims[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dims[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let inp = self.in_dim();
        debug_assert_eq!(x.len(), inp);
        let w = &self.weight.value.data;
        let mut y = self.bias.value.data.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * inp..(o + 1) * inp];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo += acc;
        }
        y
    }

    /// Accumulate dL/dW and dL/db from upstream gradient `dy` at cached input
    /// `x`; returns dL/dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), inp);
        debug_assert_eq!(dy.len(), out);
        let w = &self.weight.value.data;
        let mut dx = vec![0.0; inp];
        for o in 0..out {
            let g = dy[o];
            self.bias.grad[o] += g;
            let row = &w[o * inp..(o + 1) * inp];
            let grow = &mut self.weight.grad[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Helper for composing `visit_params` implementations.
pub(crate) fn visit_linear(linear: &Linear, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
    linear.visit(prefix, f);
}

pub(crate) fn visit_linear_mut(
    linear: &mut Linear,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Param),
) {
    linear.visit_mut(prefix, f);
}
