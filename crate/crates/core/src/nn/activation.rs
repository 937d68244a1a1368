use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and post-activation `y`.
    /// ReLU's derivative at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

pub fn activation(input: &Tensor4, kind: Activation) -> Tensor4 {
    input.map(|x| kind.apply(x))
}

pub fn activation_backward(input: &Tensor4, output: &Tensor4, kind: Activation, grad_out: &Tensor4) -> Result<Tensor4> {
    input.check_same_dims(grad_out, "activation_backward")?;
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor4 {
        let n = v.len();
        Tensor4::from_vec([1, 1, 1, n], v).unwrap()
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let x = t(vec![-1.0, 0.0, 2.0]);
        let y = activation(&x, Activation::Relu);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = activation_backward(&x, &y, Activation::Relu, &t(vec![1.0; 3])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_values() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        // tanh(1) = (e^2 - 1) / (e^2 + 1), with e^2 from its power series
        let e2: f64 = (0..40)
            .fold((1.0, 1.0), |(sum, term), k| {
                let next = term * 2.0 / (k as f64 + 1.0);
                (sum + next, next)
            })
            .0;
        let reference = (e2 - 1.0) / (e2 + 1.0);
        assert!((Activation::Tanh.apply(1.0) - reference).abs() < 1e-15);
        assert!((reference - 0.761_594_155_955_764_9).abs() < 1e-15);
    }
}
