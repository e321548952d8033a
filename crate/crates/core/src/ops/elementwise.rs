use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Relu6,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn eval<T: Real>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            Activation::Relu => x.max(zero),
            Activation::Relu6 => x.max(zero).min(T::from_f64(6.0)),
            Activation::Elu => {
                if x >= zero {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= zero {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            Activation::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Activation::Relu6 => {
                if x > zero && x < T::from_f64(6.0) {
                    one
                } else {
                    zero
                }
            }
            Activation::Elu => {
                if x >= zero {
                    one
                } else {
                    y + one
                }
            }
            Activation::Tanh => one - y * y,
            Activation::Sigmoid => y * (one - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "relu6" => Activation::Relu6,
            "elu" => Activation::Elu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            other => return Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        })
    }
}

pub fn apply_activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    input.map(|v| kind.eval(v))
}

pub(crate) fn activation_backward<T: Real>(
    kind: Activation,
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * kind.derivative(x, y))
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Same-rank broadcasting: each axis must match or be 1 on one side.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, "rank", a.len(), b.len()));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("axis {axis}"), x, y)),
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visits every output index together with the matching flat index into each operand.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(&out[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut ba, mut bb) = (0usize, 0usize);
    for o in 0..outer {
        for j in 0..last {
            f(o * last + j, ba + j * la, bb + j * lb);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Real>(
    op: BinaryOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| op.apply(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let out = broadcast_shape("broadcast", a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = op.apply(ad[ia], bd[ib]));
    Ok(Tensor::from_parts(out, data))
}

/// Gradients of a broadcasting binary op with respect to both operands.
pub(crate) fn broadcast_binary_backward<T: Real>(
    op: BinaryOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let out = grad_out.shape();
    let g = grad_out.data();
    if a.shape() == b.shape() {
        let (ga, gb): (Vec<T>, Vec<T>) = match op {
            BinaryOp::Add => (g.to_vec(), g.to_vec()),
            BinaryOp::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
            BinaryOp::Mul => (
                g.iter().zip(b.data()).map(|(&g, &y)| g * y).collect(),
                g.iter().zip(a.data()).map(|(&g, &x)| g * x).collect(),
            ),
        };
        return (
            Tensor::from_parts(a.shape().to_vec(), ga),
            Tensor::from_parts(b.shape().to_vec(), gb),
        );
    }
    let sa = broadcast_strides(a.shape(), out);
    let sb = broadcast_strides(b.shape(), out);
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(out, &sa, &sb, |o, ia, ib| {
        let go = g[o];
        match op {
            BinaryOp::Add => {
                ga[ia] = ga[ia] + go;
                gb[ib] = gb[ib] + go;
            }
            BinaryOp::Sub => {
                ga[ia] = ga[ia] + go;
                gb[ib] = gb[ib] - go;
            }
            BinaryOp::Mul => {
                ga[ia] = ga[ia] + go * bd[ib];
                gb[ib] = gb[ib] + go * ad[ia];
            }
        }
    });
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        let x = Tensor::<f64>::from_vec(vec![3], vec![-1.0, 3.0, 8.0]).unwrap();
        assert_eq!(apply_activation(&x, Activation::Relu6).data(), &[0.0, 3.0, 6.0]);
        assert_eq!(Activation::Sigmoid.eval(0.0f64), 0.5);
        assert_eq!(Activation::Elu.eval(0.0f64), 0.0);
        assert!((Activation::Elu.eval(-50.0f64) + 1.0).abs() < 1e-12);
        assert!((Activation::Sigmoid.eval(-800.0f64)).is_finite());
        assert!("swish".parse::<Activation>().is_err());
    }

    #[test]
    fn outer_product_by_broadcast() {
        let a = Tensor::<f32>::from_vec(vec![1, 2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(vec![1, 1, 3], vec![1.0, 10.0, 100.0]).unwrap();
        let y = broadcast_binary(BinaryOp::Mul, &a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert_eq!(y.data(), &[1.0, 10.0, 100.0, 2.0, 20.0, 200.0]);
        let g = Tensor::ones(&[1, 2, 3]).unwrap();
        let (ga, gb) = broadcast_binary_backward(BinaryOp::Mul, &a, &b, &g);
        assert_eq!(ga.data(), &[111.0, 111.0]);
        assert_eq!(gb.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_names_axis() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 4]).unwrap();
        let err = broadcast_binary(BinaryOp::Add, &a, &b).unwrap_err();
        assert!(err.to_string().contains("axis 1"));
    }
}
