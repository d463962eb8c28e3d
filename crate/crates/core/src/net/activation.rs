use std::fmt;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

/// Layer nonlinearity. `Softmax` is only valid on the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// ELU with unit scale: `a` for `a > 0`, `e^a - 1` otherwise.
    Elu,
    Softmax,
}

impl Activation {
    pub fn is_elementwise(self) -> bool {
        self != Activation::Softmax
    }

    /// Applies the activation to a whole pre-activation vector.
    pub fn apply(self, a: &[f64]) -> Vec<f64> {
        match self {
            Activation::Softmax => softmax(a),
            act => a.iter().map(|&v| act.value(v)).collect(),
        }
    }

    /// Scalar value of an elementwise activation.
    pub fn value(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Elu => {
                if a > 0.0 {
                    a
                } else {
                    a.exp_m1()
                }
            }
            Activation::Softmax => panic!("softmax is not elementwise"),
        }
    }

    /// First and second derivatives at `a`. ReLU uses the subgradient 0 at the
    /// kink; ELU's second derivative at exactly 0 is the right limit 0.
    pub fn derivs(self, a: f64) -> (f64, f64) {
        match self {
            Activation::Identity => (1.0, 0.0),
            Activation::Tanh => {
                let t = a.tanh();
                let d1 = 1.0 - t * t;
                (d1, -2.0 * t * d1)
            }
            Activation::Relu => (if a > 0.0 { 1.0 } else { 0.0 }, 0.0),
            Activation::Elu => {
                if a > 0.0 {
                    (1.0, 0.0)
                } else if a == 0.0 {
                    (1.0, 0.0)
                } else {
                    let e = a.exp();
                    (e, e)
                }
            }
            Activation::Softmax => panic!("softmax is not elementwise"),
        }
    }
}

/// Elementwise first and second derivatives of `act` over a tensor.
pub fn activation_derivs(act: Activation, a: &Tensor) -> Result<(Tensor, Tensor)> {
    if !act.is_elementwise() {
        bail!(Usage, "softmax derivatives are handled by the loss heads");
    }
    let mut d1 = Tensor::zeros(a.shape());
    let mut d2 = Tensor::zeros(a.shape());
    for ((v, s1), s2) in a.data().iter().zip(d1.data_mut()).zip(d2.data_mut()) {
        (*s1, *s2) = act.derivs(*v);
    }
    Ok((d1, d2))
}

/// Numerically stable softmax.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Softmax => "softmax",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" | "linear" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "elu" => Activation::Elu,
            "softmax" => Activation::Softmax,
            other => bail!(Config, "unknown activation `{other}`"),
        })
    }
}
