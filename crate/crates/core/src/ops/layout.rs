use crate::error::{Error, Result};
use crate::ops::split_axis;
use crate::tensor::{numel, Real, Tensor};

fn shuffle_plan(shape: &[usize], groups: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("channel_shuffle", "rank", ">= 2", shape.len()));
    }
    let c = shape[1];
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::shape("channel_shuffle", "channels (divisible by groups)", groups, c));
    }
    Ok((shape[0], c, numel(&shape[2..])))
}

/// Interleaves channel groups: channel `g·(C/groups)+i` moves to `i·groups+g`.
pub fn channel_shuffle<T: Real>(input: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, inner) = shuffle_plan(input.shape(), groups)?;
    let per = c / groups;
    let mut out = vec![T::zero(); input.len()];
    for b in 0..n {
        for g in 0..groups {
            for i in 0..per {
                let src = (b * c + g * per + i) * inner;
                let dst = (b * c + i * groups + g) * inner;
                out[dst..dst + inner].copy_from_slice(&input.data()[src..src + inner]);
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

pub(crate) fn shuffle_backward<T: Real>(grad_out: &Tensor<T>, groups: usize) -> Tensor<T> {
    let shape = grad_out.shape();
    let (n, c, inner) = (shape[0], shape[1], numel(&shape[2..]));
    let per = c / groups;
    let mut dx = vec![T::zero(); grad_out.len()];
    for b in 0..n {
        for g in 0..groups {
            for i in 0..per {
                let src = (b * c + g * per + i) * inner;
                let dst = (b * c + i * groups + g) * inner;
                dx[src..src + inner].copy_from_slice(&grad_out.data()[dst..dst + inner]);
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), dx)
}

pub(crate) fn concat<T: Real>(items: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    if axis >= first.rank() {
        return Err(Error::shape("concat", "axis", format!("< {}", first.rank()), axis));
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for t in items {
        if t.rank() != first.rank() {
            return Err(Error::shape("concat", "rank", first.rank(), t.rank()));
        }
        for d in 0..t.rank() {
            if d != axis && t.shape()[d] != first.shape()[d] {
                return Err(Error::shape("concat", format!("axis {d}"), first.shape()[d], t.shape()[d]));
            }
        }
        shape[axis] += t.shape()[axis];
    }
    let (outer, _, _) = split_axis(first.shape(), axis);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for t in items {
            let (_, len, inner) = split_axis(t.shape(), axis);
            out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn concat_backward<T: Real>(shapes: &[Vec<usize>], axis: usize, grad_out: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, total, inner) = split_axis(grad_out.shape(), axis);
    let mut offset = 0;
    shapes
        .iter()
        .map(|shape| {
            let len = shape[axis];
            let mut d = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                let start = (o * total + offset) * inner;
                d.extend_from_slice(&grad_out.data()[start..start + len * inner]);
            }
            offset += len;
            Tensor::from_parts(shape.clone(), d)
        })
        .collect()
}

/// Slice `[start, start+len)` along `axis`.
pub(crate) fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape("narrow", "axis", format!("< {}", x.rank()), axis));
    }
    if len == 0 || start + len > x.shape()[axis] {
        return Err(Error::shape(
            "narrow",
            format!("axis {axis} range"),
            format!("within {}", x.shape()[axis]),
            format!("{start}..{}", start + len),
        ));
    }
    let (outer, total, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        let s = (o * total + start) * inner;
        out.extend_from_slice(&x.data()[s..s + len * inner]);
    }
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn narrow_backward<T: Real>(input_shape: &[usize], axis: usize, start: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (outer, total, inner) = split_axis(input_shape, axis);
    let len = grad_out.shape()[axis];
    let mut dx = vec![T::zero(); numel(input_shape)];
    for o in 0..outer {
        let s = (o * total + start) * inner;
        dx[s..s + len * inner].copy_from_slice(&grad_out.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Sum along `axis`, keeping it with extent 1.
pub(crate) fn sum_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape("sum_axis", "axis", format!("< {}", x.rank()), axis));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for l in 0..len {
            let src = &x.data()[(o * len + l) * inner..][..inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn sum_axis_backward<T: Real>(input_shape: &[usize], axis: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(input_shape, axis);
    let mut dx = Vec::with_capacity(numel(input_shape));
    for o in 0..outer {
        let g = &grad_out.data()[o * inner..(o + 1) * inner];
        for _ in 0..len {
            dx.extend_from_slice(g);
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

pub(crate) fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape("softmax", "axis", format!("< {}", x.rank()), axis));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let max = (0..len).map(|l| out[at(l)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for l in 0..len {
                let e = (out[at(l)] - max).exp();
                out[at(l)] = e;
                total = total + e;
            }
            for l in 0..len {
                out[at(l)] = out[at(l)] / total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), grad_out.data());
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let dot: T = (0..len).map(|l| yd[at(l)] * gd[at(l)]).sum();
            for l in 0..len {
                dx[at(l)] = yd[at(l)] * (gd[at(l)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

/// Gathers the `k×k` zero-padded neighbourhood of every position:
/// `N×C×H×W → N×C×k²×H×W`, with offset `j = dy·k + dx`.
pub(crate) fn unfold<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("unfold")?;
    if k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("unfold kernel must be odd, got {k}")));
    }
    let r = (k / 2) as isize;
    let mut out = vec![T::zero(); n * c * k * k * h * w];
    for (plane, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(k * k * h * w)) {
        for j in 0..k * k {
            let (dy, dx) = ((j / k) as isize - r, (j % k) as isize - r);
            let slot = &mut dst[j * h * w..(j + 1) * h * w];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..w {
                    let sx = xx as isize + dx;
                    if sx >= 0 && sx < w as isize {
                        slot[y * w + xx] = plane[sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, k * k, h, w], out))
}

pub(crate) fn unfold_backward<T: Real>(input_shape: &[usize], k: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let r = (k / 2) as isize;
    let mut dx = vec![T::zero(); numel(input_shape)];
    for (plane, src) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(k * k * h * w)) {
        for j in 0..k * k {
            let (dy, ddx) = ((j / k) as isize - r, (j % k) as isize - r);
            let slot = &src[j * h * w..(j + 1) * h * w];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..w {
                    let sx = xx as isize + ddx;
                    if sx >= 0 && sx < w as isize {
                        let i = sy as usize * w + sx as usize;
                        plane[i] = plane[i] + slot[y * w + xx];
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Nearest-neighbour upsampling: every pixel becomes a `factor×factor` block.
pub fn upsample_nearest<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("upsample_nearest")?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in input.data().chunks_exact(h * w) {
        for y in 0..ho {
            let row = &plane[(y / factor) * w..(y / factor + 1) * w];
            for x in 0..wo {
                out.push(row[x / factor]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub(crate) fn upsample_backward<T: Real>(input_shape: &[usize], factor: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let wo = w * factor;
    let mut dx = vec![T::zero(); numel(input_shape)];
    for (plane, gp) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(h * w * factor * factor)) {
        for (i, &g) in gp.iter().enumerate() {
            let (y, x) = (i / wo, i % wo);
            let d = (y / factor) * w + x / factor;
            plane[d] = plane[d] + g;
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}
