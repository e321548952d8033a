//! Whole-image inference and dataset evaluation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hazegen::DatasetItem;
use crate::metrics::{format_db, psnr, ssim};
use crate::network::HazeNet;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const REPORT_HEADER: &str = "id\tpsnr\tssim";

/// Outputs for one `3×H×W` image at its original size.
#[derive(Debug, Clone)]
pub struct Dehazed {
    pub final_image: Tensor<f32>,
    pub pseudo: Tensor<f32>,
    pub density: Option<Tensor<f32>>,
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

/// Reflect-pads the bottom and right edges of a `C×H×W` image up to multiples of `factor`.
pub fn pad_to_multiple(img: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("pad_to_multiple", "rank", 3, img.rank())),
    };
    let (ph, pw) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if ph == h && pw == w {
        return Ok(img.clone());
    }
    if ph - h >= h || pw - w >= w {
        let (width, extent) = if ph - h >= h { (ph - h, h) } else { (pw - w, w) };
        return Err(Error::ReflectPad {
            op: "pad_to_multiple",
            width,
            extent,
        });
    }
    let d = img.data();
    Tensor::from_fn(&[c, ph, pw], |i| {
        let (ch, rest) = (i / (ph * pw), i % (ph * pw));
        let (y, x) = (reflect(rest / pw, h), reflect(rest % pw, w));
        d[ch * h * w + y * w + x]
    })
}

/// Crops the top-left `h×w` window of a `C×H'×W'` tensor.
pub fn crop(t: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (c, th, tw) = match *t.shape() {
        [c, th, tw] if th >= h && tw >= w => (c, th, tw),
        _ => return Err(Error::shape("crop", "extent", [h, w], t.shape())),
    };
    let d = t.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, rest) = (i / (h * w), i % (h * w));
        d[ch * th * tw + (rest / w) * tw + rest % w]
    })
}

/// Runs the model on an image of any size, padding to the downsampling factor and cropping back.
pub fn dehaze_image(net: &HazeNet, store: &ParamStore<f32>, img: &Tensor<f32>) -> Result<Dehazed> {
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("dehaze_image", "rank", 3, img.rank())),
    };
    if c != 3 {
        return Err(Error::shape("dehaze_image", "channels", 3, c));
    }
    let padded = pad_to_multiple(img, net.cfg.downsample_factor)?;
    let out = net.run(store, &Tensor::stack(std::slice::from_ref(&padded))?)?;
    let first = |t: &Tensor<f32>| t.index_axis0(0).and_then(|t| crop(&t, h, w));
    Ok(Dehazed {
        final_image: first(&out.final_image)?,
        pseudo: first(&out.pseudo)?,
        density: out.density.map(|m| first(&m.map)).transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Checkpoint config block, echoed as comments.
    pub config: String,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>, config: String) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr,
            mean_ssim,
            config,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{REPORT_HEADER}");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{:.6}", r.id, format_db(r.psnr), r.ssim);
        }
        let _ = writeln!(s, "mean\t{}\t{:.6}", format_db(self.mean_psnr), self.mean_ssim);
        let _ = writeln!(s, "# count={} color_space=rgb peak=1", self.rows.len());
        for line in self.config.lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(s, "# {line}");
        }
        s
    }
}

/// Scores `D(x)` (clamped to `[0, 1]`) against the ground truth for every item, in input order.
pub fn evaluate(net: &HazeNet, store: &ParamStore<f32>, items: &[DatasetItem]) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::MissingData("nothing to evaluate".into()));
    }
    let rows = items
        .iter()
        .map(|item| {
            let out = dehaze_image(net, store, &item.hazy)?;
            let pred = out.final_image.map(|v| v.clamp(0.0, 1.0));
            Ok(MetricRow {
                id: item.id.clone(),
                psnr: psnr(&pred, &item.clean, 1.0)?,
                ssim: ssim(&pred, &item.clean)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(rows, net.cfg.to_kv()))
}
