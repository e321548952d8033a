use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Normalizes each `(sample, channel)` plane to zero mean and unit variance.
pub fn instance_norm<T: Real>(input: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    instance_norm_forward(input, eps).map(|(y, _)| y)
}

/// Returns the normalized tensor and the per-plane inverse standard deviations.
pub(crate) fn instance_norm_forward<T: Real>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4("instance_norm")?;
    let hw = h * w;
    let inv_len = T::one() / T::from_f64(hw as f64);
    let eps = T::from_f64(eps);
    let mut out = Vec::with_capacity(x.len());
    let mut inv_stds = Vec::with_capacity(n * c);
    for plane in x.data().chunks_exact(hw) {
        let mean = plane.iter().copied().sum::<T>() * inv_len;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
        let inv_std = T::one() / (var + eps).sqrt();
        out.extend(plane.iter().map(|&v| (v - mean) * inv_std));
        inv_stds.push(inv_std);
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), inv_stds))
}

/// `dx = inv_std · (dy − mean(dy) − y·mean(dy·y))` per plane.
pub(crate) fn instance_norm_backward<T: Real>(y: &Tensor<T>, inv_stds: &[T], grad_out: &Tensor<T>) -> Tensor<T> {
    let hw = y.shape()[2] * y.shape()[3];
    let inv_len = T::one() / T::from_f64(hw as f64);
    let mut dx = Vec::with_capacity(y.len());
    for ((yp, gp), &inv_std) in y.data().chunks_exact(hw).zip(grad_out.data().chunks_exact(hw)).zip(inv_stds) {
        let mean_g = gp.iter().copied().sum::<T>() * inv_len;
        let mean_gy = gp.iter().zip(yp).map(|(&g, &y)| g * y).sum::<T>() * inv_len;
        dx.extend(gp.iter().zip(yp).map(|(&g, &y)| inv_std * (g - mean_g - y * mean_gy)));
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}
