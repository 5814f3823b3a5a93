use rand::Rng;

use super::{shape_err, NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Slope 0.2 below zero.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

const LEAK: f64 = 0.2;

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let leak = T::lit(LEAK);
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::LeakyRelu => x.map(|v| if v > T::zero() { v } else { leak * v }),
        Activation::Tanh => x.map(T::tanh),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient through an activation given its input `x` and output `y`.
pub fn activation_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>, NnError> {
    if x.shape() != dy.shape() || y.shape() != dy.shape() {
        return shape_err("activation gradient shape");
    }
    let leak = T::lit(LEAK);
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xv, &yv), &g)| match kind {
            Activation::Relu => if xv > T::zero() { g } else { T::zero() },
            Activation::LeakyRelu => if xv > T::zero() { g } else { leak * g },
            Activation::Tanh => g * (T::one() - yv * yv),
            Activation::Sigmoid => g * yv * (T::one() - yv),
        })
        .collect();
    Tensor::from_vec(dy.shape(), data)
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`0` or `1 / (1 - rate)`) needed by the backward pass.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, rng: &mut impl Rng, mode: Mode) -> (Tensor<T>, Option<Vec<T>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if mode == Mode::Infer || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (Tensor::from_vec(x.shape(), data).unwrap(), Some(mask))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, dy: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(m) => Tensor::from_vec(dy.shape(), dy.data().iter().zip(m).map(|(&g, &k)| g * k).collect()).unwrap(),
    }
}
