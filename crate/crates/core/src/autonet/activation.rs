use num_traits::Float;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    Relu,
    Elu,
    Tanh,
    None,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Selu,
        Activation::Relu,
        Activation::Elu,
        Activation::Tanh,
        Activation::None,
    ];

    pub fn apply<F: Float>(self, x: F) -> F {
        match self {
            Activation::Selu => {
                let lambda = F::from(SELU_LAMBDA).unwrap();
                if x >= F::zero() {
                    lambda * x
                } else {
                    let alpha = F::from(SELU_ALPHA).unwrap();
                    lambda * (alpha * x.exp() - alpha)
                }
            }
            Activation::Relu => {
                if x >= F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            Activation::Elu => {
                if x >= F::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`. At the ReLU kink
    /// the right derivative is used.
    pub fn derivative<F: Float>(self, x: F) -> F {
        match self {
            Activation::Selu => {
                let lambda = F::from(SELU_LAMBDA).unwrap();
                if x >= F::zero() {
                    lambda
                } else {
                    lambda * F::from(SELU_ALPHA).unwrap() * x.exp()
                }
            }
            Activation::Relu => {
                if x >= F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Elu => {
                if x >= F::zero() {
                    F::one()
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::None => F::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Selu => "selu",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown activation `{s}` (expected selu, relu, elu, tanh or none)"))
    }
}
