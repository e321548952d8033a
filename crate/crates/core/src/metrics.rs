//! Image quality metrics and visualization helpers.
//!
//! Metrics are computed in `[0, 1]` RGB space with peak 1.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10·log10(peak² / MSE)`; identical inputs give `+inf`.
pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("psnr", "operand shape", x.shape(), y.shape()));
    }
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Renders a dB value, using `inf` for the zero-error sentinel.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Channel-mean grayscale of a `C×H×W` image as `(h, w, pixels)`.
pub fn to_gray<T: Real>(img: &Tensor<T>, op: &'static str) -> Result<(usize, usize, Vec<f64>)> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape(op, "rank", 3, img.rank())),
    };
    let plane = h * w;
    let d = img.data();
    let gray = (0..plane)
        .map(|p| (0..c).map(|ch| d[ch * plane + p].as_f64()).sum::<f64>() / c as f64)
        .collect();
    Ok((h, w, gray))
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows of the channel-mean grayscale images.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("ssim", "operand shape", x.shape(), y.shape()));
    }
    let (h, w, gx) = to_gray(x, "ssim")?;
    let (_, _, gy) = to_gray(y, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&gx, h, w, &taps);
    let my = filter_valid(&gy, h, w, &taps);
    let mxx = filter_valid(&prod(&gx, &gx), h, w, &taps);
    let myy = filter_valid(&prod(&gy, &gy), h, w, &taps);
    let mxy = filter_valid(&prod(&gx, &gy), h, w, &taps);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mx.len())
        .map(|i| ssim_window(mx[i], my[i], mxx[i], myy[i], mxy[i], c1, c2))
        .sum();
    Ok(total / mx.len() as f64)
}

/// SSIM of one window from its weighted first and second moments.
pub fn ssim_window(mx: f64, my: f64, mxx: f64, myy: f64, mxy: f64, c1: f64, c2: f64) -> f64 {
    let (vx, vy, cxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Channel-mean absolute difference normalized by its maximum (all zeros when the inputs agree).
pub fn diff_map(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("diff_map", "operand shape", a.shape(), b.shape()));
    }
    let abs = a.zip_map(b, "diff_map", |p, q| (p - q).abs())?;
    let (h, w, mean) = to_gray(&abs, "diff_map")?;
    let peak = mean.iter().copied().fold(0.0, f64::max);
    let data = mean
        .iter()
        .map(|&v| if peak > 0.0 { (v / peak) as f32 } else { 0.0 })
        .collect();
    Tensor::from_vec(vec![1, h, w], data)
}

/// Blue-to-red ramp with a red channel that never decreases.
pub fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (4.0 * v - 1.5).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

/// A false-color rendering and how many inputs had to be clamped into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct JetImage {
    pub image: Tensor<f32>,
    pub clamped: usize,
}

/// Renders a `1×H×W` map in `[0, 1]` as a `3×H×W` jet image.
pub fn colorjet_render(map: &Tensor<f32>) -> Result<JetImage> {
    let (h, w) = match *map.shape() {
        [1, h, w] => (h, w),
        [c, _, _] => return Err(Error::shape("colorjet_render", "channels", 1, c)),
        _ => return Err(Error::shape("colorjet_render", "rank", 3, map.rank())),
    };
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    let mut clamped = 0;
    for (p, &v) in map.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            clamped += 1;
        }
        let v = if v.is_nan() { 0.0 } else { v };
        for (ch, c) in jet(v).into_iter().enumerate() {
            data[ch * plane + p] = c;
        }
    }
    Ok(JetImage {
        image: Tensor::from_vec(vec![3, h, w], data)?,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let x = Tensor::<f64>::zeros(&[1, 4]).unwrap();
        let y = Tensor::<f64>::full(&[1, 4], 0.1).unwrap();
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(format_db(f64::INFINITY), "inf");
        let one = Tensor::<f64>::ones(&[1, 4]).unwrap();
        assert!(psnr(&x, &one, 1.0).unwrap().abs() < 1e-12);
        assert!(psnr(&x, &Tensor::zeros(&[4]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn ssim_constant_images() {
        let x = Tensor::<f32>::zeros(&[3, 16, 16]).unwrap();
        let y = Tensor::<f32>::ones(&[3, 16, 16]).unwrap();
        let c1 = SSIM_K1 * SSIM_K1;
        assert!((ssim(&x, &y).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((ssim(&x, &y).unwrap() - 9.998e-5).abs() < 1e-7);
        assert!((ssim(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let small = Tensor::<f32>::zeros(&[3, 10, 16]).unwrap();
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn diff_map_examples() {
        let a = Tensor::from_fn(&[3, 2, 2], |i| i as f32 * 0.05).unwrap();
        assert!(diff_map(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.data_mut()[3] += 0.3;
        let d = diff_map(&a, &b).unwrap();
        assert_eq!(d.shape(), &[1, 2, 2]);
        assert_eq!(d.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn jet_anchors() {
        assert_eq!(jet(0.0), [0.0, 0.0, 0.5]);
        let mid = jet(0.5);
        assert!(mid[1] > mid[0] && mid[1] > mid[2]);
        assert_eq!(jet(1.0)[0], 1.0);
        let mut last = 0.0;
        for i in 0..=1000 {
            let r = jet(i as f32 / 1000.0)[0];
            assert!(r >= last);
            last = r;
        }
        let map = Tensor::from_vec(vec![1, 1, 3], vec![-0.5, 0.5, 2.0]).unwrap();
        let out = colorjet_render(&map).unwrap();
        assert_eq!(out.clamped, 2);
        assert_eq!(out.image.shape(), &[3, 1, 3]);
    }
}
