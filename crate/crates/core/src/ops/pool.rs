use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Direction along which a feature map is collapsed.
///
/// `Horizontal` reduces across the width of each row (`N×C×H`), `Vertical`
/// reduces across the height of each column (`N×C×W`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

impl FromStr for PoolAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" | "h" => Ok(PoolAxis::Horizontal),
            "vertical" | "v" => Ok(PoolAxis::Vertical),
            other => Err(Error::InvalidArgument(format!("unknown pooling axis `{other}`"))),
        }
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(PoolKind::Avg),
            "max" => Ok(PoolKind::Max),
            other => Err(Error::InvalidArgument(format!("unknown pooling kind `{other}`"))),
        }
    }
}

/// Returns the pooled tensor and, for max pooling, the flat input index of each winner.
pub(crate) fn directional_pool_forward<T: Real>(
    x: &Tensor<T>,
    axis: PoolAxis,
    kind: PoolKind,
) -> Result<(Tensor<T>, Option<Vec<u32>>)> {
    let (n, c, h, w) = x.dims4("directional_pool")?;
    let (out_len, red_len) = match axis {
        PoolAxis::Horizontal => (h, w),
        PoolAxis::Vertical => (w, h),
    };
    let mut out = Vec::with_capacity(n * c * out_len);
    let mut argmax = (kind == PoolKind::Max).then(|| Vec::with_capacity(n * c * out_len));
    let inv = T::one() / T::from_f64(red_len as f64);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for o in 0..out_len {
            let idx = |r: usize| match axis {
                PoolAxis::Horizontal => base + o * w + r,
                PoolAxis::Vertical => base + r * w + o,
            };
            match kind {
                PoolKind::Avg => {
                    let s: T = (0..red_len).map(|r| data[idx(r)]).sum();
                    out.push(s * inv);
                }
                PoolKind::Max => {
                    let mut best = idx(0);
                    for r in 1..red_len {
                        let i = idx(r);
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    if let Some(a) = argmax.as_mut() {
                        a.push(best as u32);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, out_len], out), argmax))
}

pub(crate) fn directional_pool_backward<T: Real>(
    input_shape: &[usize],
    axis: PoolAxis,
    argmax: Option<&[u32]>,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    let g = grad_out.data();
    match argmax {
        Some(winners) => {
            for (&i, &gv) in winners.iter().zip(g) {
                dx[i as usize] = dx[i as usize] + gv;
            }
        }
        None => {
            let (out_len, red_len) = match axis {
                PoolAxis::Horizontal => (h, w),
                PoolAxis::Vertical => (w, h),
            };
            let inv = T::one() / T::from_f64(red_len as f64);
            for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(out_len)) {
                for (o, &gv) in gp.iter().enumerate() {
                    let share = gv * inv;
                    for r in 0..red_len {
                        let i = match axis {
                            PoolAxis::Horizontal => o * w + r,
                            PoolAxis::Vertical => r * w + o,
                        };
                        plane[i] = plane[i] + share;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Average or max pooling of an `N×C×H×W` map along one spatial direction.
pub fn directional_pool<T: Real>(input: &Tensor<T>, axis: PoolAxis, kind: PoolKind) -> Result<Tensor<T>> {
    directional_pool_forward(input, axis, kind).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::from_vec(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap()
    }

    #[test]
    fn small_examples() {
        let h = directional_pool(&sample(), PoolAxis::Horizontal, PoolKind::Avg).unwrap();
        assert_eq!(h.shape(), &[1, 1, 2]);
        assert_eq!(h.data(), &[1.5, 3.5]);
        let v = directional_pool(&sample(), PoolAxis::Vertical, PoolKind::Max).unwrap();
        assert_eq!(v.data(), &[3., 4.]);
    }

    #[test]
    fn unknown_axis_or_kind_is_an_error() {
        assert!("diagonal".parse::<PoolAxis>().is_err());
        assert!("median".parse::<PoolKind>().is_err());
        assert_eq!("max".parse::<PoolKind>().unwrap(), PoolKind::Max);
    }

    #[test]
    fn max_gradient_routes_to_winner() {
        let x = sample();
        let (_, arg) = directional_pool_forward(&x, PoolAxis::Vertical, PoolKind::Max).unwrap();
        let g = Tensor::from_vec(vec![1, 1, 2], vec![10., 20.]).unwrap();
        let dx = directional_pool_backward(x.shape(), PoolAxis::Vertical, arg.as_deref(), &g);
        assert_eq!(dx.data(), &[0., 0., 10., 20.]);
    }
}
