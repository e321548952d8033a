//! Synthetic hazy data.
//!
//! Procedural clean scenes with a smooth depth field are degraded with the
//! atmospheric scattering model `I = J·t + A·(1−t)`, `t = exp(−β·d)`.
//! Pairs are stored on disk as
//! `{root}/{split}/{id}_hazy.ppm`, `{id}_gt.ppm`, `{id}_t.f32` plus a
//! `meta.tsv` holding `id A_r A_g A_b beta` per pair.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::io::{load_f32m, load_ppm, save_f32m, save_ppm};
use crate::tensor::Tensor;

pub const DEFAULT_T_MIN: f64 = 0.1;
pub const AIRLIGHT_RANGE: (f32, f32) = (0.7, 1.0);
/// Scattering coefficients drawn by [`sample_params`].
pub const DEFAULT_BETA_RANGE: (f32, f32) = (0.4, 1.6);
pub const MIN_SCENE_SIZE: usize = 16;

/// Clean image `J` (3×H×W) and normalized depth (1×H×W), both in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub clean: Tensor<f32>,
    pub depth: Tensor<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazeParams {
    pub atmospheric_light: [f32; 3],
    pub beta: f32,
}

impl HazeParams {
    pub fn new(atmospheric_light: [f32; 3], beta: f32) -> Result<Self> {
        let p = Self {
            atmospheric_light,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = AIRLIGHT_RANGE;
        if let Some(a) = self.atmospheric_light.iter().find(|a| !(lo..=hi).contains(*a)) {
            return Err(Error::InvalidArgument(format!(
                "atmospheric light component {a} outside [{lo}, {hi}]"
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 4.0) {
            return Err(Error::InvalidArgument(format!("beta must be in (0, 4], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Hazy image, its clean source, the transmission map, and the parameters used.
#[derive(Debug, Clone, PartialEq)]
pub struct HazyPair {
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub transmission: Tensor<f32>,
    pub params: HazeParams,
}

fn dims3(t: &Tensor<f32>, op: &'static str, channels: usize) -> Result<(usize, usize)> {
    match *t.shape() {
        [c, h, w] if c == channels => Ok((h, w)),
        [c, _, _] => Err(Error::shape(op, "channels", channels, c)),
        _ => Err(Error::shape(op, "rank", 3, t.rank())),
    }
}

/// `t = exp(−β·d)`.
pub fn transmission_from_depth(depth: &Tensor<f32>, beta: f32) -> Result<Tensor<f32>> {
    dims3(depth, "transmission_from_depth", 1)?;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let beta = beta as f64;
    Ok(depth.map(|d| (-beta * d as f64).exp() as f32))
}

/// Applies `I = J·t + A·(1−t)` with the transmission derived from the scene depth.
pub fn synthesize_hazy(scene: &Scene, params: HazeParams) -> Result<HazyPair> {
    params.validate()?;
    let (h, w) = dims3(&scene.clean, "synthesize_hazy", 3)?;
    let (dh, dw) = dims3(&scene.depth, "synthesize_hazy", 1)?;
    if (dh, dw) != (h, w) {
        return Err(Error::shape("synthesize_hazy", "depth size", (h, w), (dh, dw)));
    }
    let t = transmission_from_depth(&scene.depth, params.beta)?;
    let hazy = degrade(&scene.clean, &t, params.atmospheric_light)?;
    Ok(HazyPair {
        hazy,
        clean: scene.clean.clone(),
        transmission: t,
        params,
    })
}

/// Pointwise scattering model on explicit `J`, `t`, `A`.
pub fn degrade(clean: &Tensor<f32>, t: &Tensor<f32>, a: [f32; 3]) -> Result<Tensor<f32>> {
    let (h, w) = dims3(clean, "degrade", 3)?;
    if dims3(t, "degrade", 1)? != (h, w) {
        return Err(Error::shape("degrade", "transmission size", (1, h, w), t.shape()));
    }
    let plane = h * w;
    let (j, td) = (clean.data(), t.data());
    let data = (0..3 * plane)
        .map(|i| {
            let (tv, av) = (td[i % plane] as f64, a[i / plane] as f64);
            let v = j[i] as f64 * tv + av * (1.0 - tv);
            // Only rounding noise may leave the unit interval.
            if (-1e-6..0.0).contains(&v) || (1.0..1.0 + 1e-6).contains(&v) {
                v.clamp(0.0, 1.0) as f32
            } else {
                v as f32
            }
        })
        .collect();
    Tensor::from_vec(vec![3, h, w], data)
}

/// `J = (I − A·(1−t)) / t`, defined where `t ≥ t_min`.
pub fn invert_degradation(hazy: &Tensor<f32>, t: &Tensor<f32>, a: [f32; 3], t_min: f64) -> Result<Tensor<f32>> {
    let (h, w) = dims3(hazy, "invert_degradation", 3)?;
    if dims3(t, "invert_degradation", 1)? != (h, w) {
        return Err(Error::shape("invert_degradation", "transmission size", (1, h, w), t.shape()));
    }
    if let Some(&low) = t.data().iter().find(|&&v| (v as f64) < t_min) {
        return Err(Error::TransmissionFloor {
            t: low as f64,
            t_min,
        });
    }
    let plane = h * w;
    let (i_d, td) = (hazy.data(), t.data());
    let data = (0..3 * plane)
        .map(|i| {
            let (tv, av) = (td[i % plane] as f64, a[i / plane] as f64);
            ((i_d[i] as f64 - av * (1.0 - tv)) / tv) as f32
        })
        .collect();
    Tensor::from_vec(vec![3, h, w], data)
}

/// Bilinearly interpolated lattice noise in `[0, 1]` with a smoothstep fade.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, cells: usize) -> Self {
        let n = cells + 1;
        Self {
            cells,
            lattice: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 1;
        let (x, y) = (u * self.cells as f64, v * self.cells as f64);
        let (x0, y0) = ((x.floor() as usize).min(self.cells - 1), (y.floor() as usize).min(self.cells - 1));
        let fade = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (fade(x - x0 as f64), fade(y - y0 as f64));
        let l = |i: usize, j: usize| self.lattice[j * n + i];
        let top = l(x0, y0) * (1.0 - fx) + l(x0 + 1, y0) * fx;
        let bottom = l(x0, y0 + 1) * (1.0 - fx) + l(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn octaves(rng: &mut impl Rng, base_cells: usize, count: usize) -> Vec<(ValueNoise, f64)> {
    (0..count)
        .map(|o| (ValueNoise::new(rng, base_cells << o), 0.5f64.powi(o as i32)))
        .collect()
}

fn fbm(layers: &[(ValueNoise, f64)], u: f64, v: f64) -> f64 {
    let total: f64 = layers.iter().map(|(_, a)| a).sum();
    layers.iter().map(|(n, a)| a * n.at(u, v)).sum::<f64>() / total
}

struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    color: [f64; 3],
}

/// Deterministic procedural scene: textured sky-to-ground gradient, a few
/// flat-colored rectangles for sharp edges, and a smooth depth field that
/// grows toward the top of the frame.
pub fn generate_scene(seed: u64, h: usize, w: usize) -> Result<Scene> {
    if h < MIN_SCENE_SIZE || w < MIN_SCENE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "scene size {h}x{w} below minimum {MIN_SCENE_SIZE}x{MIN_SCENE_SIZE}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut color = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let (top, bottom) = (color(), color());
    let texture = octaves(&mut rng, 4, 4);
    let depth_noise = octaves(&mut rng, 2, 3);
    let rects: Vec<Rect> = (0..rng.random_range(3..=6))
        .map(|_| {
            let (cx, cy) = (rng.random::<f64>(), rng.random::<f64>());
            let (rw, rh) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
            Rect {
                x0: cx - rw / 2.0,
                y0: cy - rh / 2.0,
                x1: cx + rw / 2.0,
                y1: cy + rh / 2.0,
                color: [rng.random(), rng.random(), rng.random()],
            }
        })
        .collect();
    let tilt = rng.random_range(-0.3..0.3);

    let plane = h * w;
    let mut clean = vec![0f32; 3 * plane];
    let mut depth = vec![0f64; plane];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let tex = fbm(&texture, u, v);
            let mut rgb: [f64; 3] = std::array::from_fn(|c| {
                let base = top[c] * (1.0 - v) + bottom[c] * v;
                0.75 * base + 0.25 * tex
            });
            for r in &rects {
                if (r.x0..r.x1).contains(&u) && (r.y0..r.y1).contains(&v) {
                    rgb = std::array::from_fn(|c| 0.85 * r.color[c] + 0.15 * tex);
                }
            }
            let p = y * w + x;
            for c in 0..3 {
                clean[c * plane + p] = rgb[c].clamp(0.0, 1.0) as f32;
            }
            depth[p] = (1.0 - v) + tilt * (u - 0.5) + 0.5 * fbm(&depth_noise, u, v);
        }
    }
    let (lo, hi) = depth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let span = (hi - lo).max(1e-12);
    let depth = depth.iter().map(|&d| ((d - lo) / span) as f32).collect();
    Ok(Scene {
        clean: Tensor::from_vec(vec![3, h, w], clean)?,
        depth: Tensor::from_vec(vec![1, h, w], depth)?,
    })
}

/// Samples `A ∈ [0.7, 1]³` (near-gray airlight) and `β` uniformly from `beta_range`.
pub fn sample_params(rng: &mut impl Rng, beta_range: (f32, f32)) -> Result<HazeParams> {
    let (lo, hi) = AIRLIGHT_RANGE;
    let gray = rng.random_range(lo..=hi);
    let a = std::array::from_fn(|_| (gray + rng.random_range(-0.05..=0.05f32)).clamp(lo, hi));
    let beta = if beta_range.0 < beta_range.1 {
        rng.random_range(beta_range.0..=beta_range.1)
    } else {
        beta_range.0
    };
    HazeParams::new(a, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    None,
    Rot90,
    Rot180,
    Rot270,
    HFlip,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [Self::None, Self::Rot90, Self::Rot180, Self::Rot270, Self::HFlip];
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Rot90 => "rot90",
            Self::Rot180 => "rot180",
            Self::Rot270 => "rot270",
            Self::HFlip => "hflip",
        })
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation `{s}`")))
    }
}

/// Applies a geometric transform to every plane of a `C×H×W` tensor.
/// Rotations are counter-clockwise.
pub fn transform(t: &Tensor<f32>, op: AugmentOp) -> Result<Tensor<f32>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("augment", "rank", 3, t.rank())),
    };
    let src = t.data();
    let (oh, ow) = match op {
        AugmentOp::Rot90 | AugmentOp::Rot270 => (w, h),
        _ => (h, w),
    };
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = match op {
                    AugmentOp::None => (y, x),
                    AugmentOp::Rot90 => (x, w - 1 - y),
                    AugmentOp::Rot180 => (h - 1 - y, w - 1 - x),
                    AugmentOp::Rot270 => (h - 1 - x, y),
                    AugmentOp::HFlip => (y, w - 1 - x),
                };
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::from_vec(vec![c, oh, ow], out)
}

pub fn augment(pair: &HazyPair, op: AugmentOp) -> Result<HazyPair> {
    Ok(HazyPair {
        hazy: transform(&pair.hazy, op)?,
        clean: transform(&pair.clean, op)?,
        transmission: transform(&pair.transmission, op)?,
        params: pair.params,
    })
}

fn crop(t: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("crop", "rank", 3, t.rank())),
    };
    let d = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&d[row + x0..row + x0 + size]);
        }
    }
    Tensor::from_vec(vec![c, size, size], out)
}

/// Crops `count` congruent `size×size` patches at seeded uniform offsets.
pub fn extract_patches(pair: &HazyPair, size: usize, count: usize, seed: u64) -> Result<Vec<HazyPair>> {
    let (h, w) = dims3(&pair.hazy, "extract_patches", 3)?;
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!("patch size {size} must be a positive multiple of 4")));
    }
    if size > h.min(w) {
        return Err(Error::InvalidArgument(format!("patch size {size} exceeds image size {h}x{w}")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let y0 = rng.random_range(0..=h - size);
            let x0 = rng.random_range(0..=w - size);
            Ok(HazyPair {
                hazy: crop(&pair.hazy, y0, x0, size)?,
                clean: crop(&pair.clean, y0, x0, size)?,
                transmission: crop(&pair.transmission, y0, x0, size)?,
                params: pair.params,
            })
        })
        .collect()
}

/// Options for [`synthesize_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub scenes: usize,
    pub size: usize,
    pub seed: u64,
    pub beta_range: (f32, f32),
    pub split: String,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            scenes: 8,
            size: 64,
            seed: 0,
            beta_range: DEFAULT_BETA_RANGE,
            split: "train".into(),
        }
    }
}

/// Generates `opts.scenes` seeded pairs (in memory).
pub fn synthesize_pairs(opts: &SynthOptions) -> Result<Vec<HazyPair>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);
    (0..opts.scenes)
        .map(|_| {
            let scene = generate_scene(rng.random(), opts.size, opts.size)?;
            synthesize_hazy(&scene, sample_params(&mut rng, opts.beta_range)?)
        })
        .collect()
}

pub fn scene_id(index: usize) -> String {
    format!("{index:05}")
}

/// Writes pairs into `{root}/{split}` and returns the split directory.
pub fn write_dataset(root: &Path, split: &str, pairs: &[HazyPair]) -> Result<PathBuf> {
    let dir = root.join(split);
    fs::create_dir_all(&dir)?;
    let mut meta = String::from("id\tA_r\tA_g\tA_b\tbeta\n");
    for (i, pair) in pairs.iter().enumerate() {
        let id = scene_id(i);
        save_ppm(dir.join(format!("{id}_hazy.ppm")), &pair.hazy)?;
        save_ppm(dir.join(format!("{id}_gt.ppm")), &pair.clean)?;
        save_f32m(dir.join(format!("{id}_t.f32")), &pair.transmission)?;
        let [r, g, b] = pair.params.atmospheric_light;
        meta.push_str(&format!("{id}\t{r}\t{g}\t{b}\t{}\n", pair.params.beta));
    }
    fs::File::create(dir.join("meta.tsv"))?.write_all(meta.as_bytes())?;
    Ok(dir)
}

pub fn synthesize_dataset(root: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    write_dataset(root, &opts.split, &synthesize_pairs(opts)?)
}

/// One stored pair. Transmission and haze parameters are present for
/// synthesized data and may be missing for imported real pairs.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub hazy: Tensor<f32>,
    pub clean: Tensor<f32>,
    pub transmission: Option<Tensor<f32>>,
    pub params: Option<HazeParams>,
}

impl DatasetItem {
    pub fn from_pair(id: impl Into<String>, pair: HazyPair) -> Self {
        Self {
            id: id.into(),
            hazy: pair.hazy,
            clean: pair.clean,
            transmission: Some(pair.transmission),
            params: Some(pair.params),
        }
    }
}

fn parse_meta(text: &str) -> Result<Vec<(String, HazeParams)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<_> = lines.next().unwrap_or_default().split('\t').collect();
    if header != ["id", "A_r", "A_g", "A_b", "beta"] {
        return Err(Error::format("meta.tsv", format!("unexpected header {header:?}")));
    }
    lines
        .map(|line| {
            let cols: Vec<_> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::format("meta.tsv", format!("expected 5 columns: `{line}`")));
            }
            let num = |s: &str| {
                s.parse::<f32>()
                    .map_err(|_| Error::format("meta.tsv", format!("bad number `{s}`")))
            };
            let params = HazeParams::new([num(cols[1])?, num(cols[2])?, num(cols[3])?], num(cols[4])?)?;
            Ok((cols[0].to_string(), params))
        })
        .collect()
}

/// Loads every `{id}_hazy.ppm` / `{id}_gt.ppm` pair of `{root}/{split}`, sorted by id.
pub fn read_dataset(root: &Path, split: &str) -> Result<Vec<DatasetItem>> {
    let dir = root.join(split);
    if !dir.is_dir() {
        return Err(Error::MissingData(format!("dataset split {} does not exist", dir.display())));
    }
    let mut ids: Vec<String> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_hazy.ppm"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::MissingData(format!("no *_hazy.ppm files in {}", dir.display())));
    }
    let meta = match fs::read_to_string(dir.join("meta.tsv")) {
        Ok(text) => parse_meta(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    ids.into_iter()
        .map(|id| {
            let gt = dir.join(format!("{id}_gt.ppm"));
            if !gt.is_file() {
                return Err(Error::MissingData(format!("ground truth {} is missing", gt.display())));
            }
            let hazy = load_ppm(dir.join(format!("{id}_hazy.ppm")))?;
            let clean = load_ppm(gt)?;
            if hazy.shape() != clean.shape() {
                return Err(Error::shape("read_dataset", format!("pair {id}"), hazy.shape(), clean.shape()));
            }
            let t_path = dir.join(format!("{id}_t.f32"));
            let transmission = t_path.is_file().then(|| load_f32m(&t_path)).transpose()?;
            let params = meta.iter().find(|(m, _)| *m == id).map(|(_, p)| *p);
            Ok(DatasetItem {
                id,
                hazy,
                clean,
                transmission,
                params,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmission_examples() {
        let d = Tensor::from_vec(vec![1, 1, 2], vec![0.0, std::f32::consts::LN_2]).unwrap();
        let t = transmission_from_depth(&d, 1.0).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert!((t.data()[1] - 0.5).abs() < 1e-7);
        assert!(transmission_from_depth(&d, 0.0).is_err());
        assert!(transmission_from_depth(&d, -1.0).is_err());
    }

    #[test]
    fn degrade_arithmetic() {
        let j = Tensor::full(&[3, 1, 1], 0.2).unwrap();
        let t = Tensor::full(&[1, 1, 1], 0.5).unwrap();
        let i = degrade(&j, &t, [1.0; 3]).unwrap();
        assert!((i.data()[0] - 0.6).abs() < 1e-7);
        let opaque = degrade(&j, &Tensor::zeros(&[1, 1, 1]).unwrap(), [0.8, 0.9, 1.0]).unwrap();
        assert_eq!(opaque.data(), &[0.8, 0.9, 1.0]);
        let clear = degrade(&j, &Tensor::ones(&[1, 1, 1]).unwrap(), [0.8, 0.9, 1.0]).unwrap();
        assert_eq!(clear, j);
    }

    #[test]
    fn inversion_floor_and_identity() {
        let i = Tensor::from_fn(&[3, 2, 2], |k| 0.1 * k as f32 / 12.0 + 0.5).unwrap();
        let ones = Tensor::ones(&[1, 2, 2]).unwrap();
        assert_eq!(invert_degradation(&i, &ones, [0.9; 3], DEFAULT_T_MIN).unwrap(), i);
        let low = Tensor::full(&[1, 2, 2], 0.05).unwrap();
        let err = invert_degradation(&i, &low, [0.9; 3], DEFAULT_T_MIN).unwrap_err();
        assert!(err.to_string().contains("t_min = 0.1"), "{err}");
        let a = Tensor::full(&[3, 2, 2], 0.9).unwrap();
        let half = Tensor::full(&[1, 2, 2], 0.5).unwrap();
        let j = invert_degradation(&a, &half, [0.9; 3], DEFAULT_T_MIN).unwrap();
        assert!(j.max_abs_diff(&a).unwrap() < 1e-7);
    }

    #[test]
    fn scenes_are_deterministic_and_distinct() {
        let a = generate_scene(7, 32, 48).unwrap();
        assert_eq!(a, generate_scene(7, 32, 48).unwrap());
        assert_eq!(a.clean.shape(), &[3, 32, 48]);
        assert_eq!(a.depth.shape(), &[1, 32, 48]);
        for v in a.clean.data().iter().chain(a.depth.data()) {
            assert!((0.0..=1.0).contains(v));
        }
        let b = generate_scene(8, 32, 48).unwrap();
        let mad = a.clean.zip_map(&b.clean, "mad", |x, y| (x - y).abs()).unwrap().mean();
        assert!(mad > 0.01, "{mad}");
        assert!(generate_scene(1, 8, 32).is_err());
    }

    #[test]
    fn augment_group_laws() {
        let t = Tensor::from_fn(&[2, 3, 5], |i| i as f32).unwrap();
        let mut r = t.clone();
        for _ in 0..4 {
            r = transform(&r, AugmentOp::Rot90).unwrap();
        }
        assert_eq!(r, t);
        let f = transform(&transform(&t, AugmentOp::HFlip).unwrap(), AugmentOp::HFlip).unwrap();
        assert_eq!(f, t);
        let r90 = transform(&t, AugmentOp::Rot90).unwrap();
        assert_eq!(r90.shape(), &[2, 5, 3]);
        assert_eq!(transform(&r90, AugmentOp::Rot90).unwrap(), transform(&t, AugmentOp::Rot180).unwrap());
        let back = transform(&transform(&t, AugmentOp::Rot270).unwrap(), AugmentOp::Rot90).unwrap();
        assert_eq!(back, t);
        // 2x2 [[1,2],[3,4]] rotated counter-clockwise is [[2,4],[1,3]]
        let small = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(transform(&small, AugmentOp::Rot90).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        for op in AugmentOp::ALL {
            assert_eq!(op.to_string().parse::<AugmentOp>().unwrap(), op);
        }
    }

    #[test]
    fn patches() {
        let scene = generate_scene(3, 32, 32).unwrap();
        let pair = synthesize_hazy(&scene, HazeParams::new([0.9; 3], 1.0).unwrap()).unwrap();
        let full = extract_patches(&pair, 32, 3, 11).unwrap();
        assert!(full.iter().all(|p| *p == pair));
        let small = extract_patches(&pair, 16, 4, 5).unwrap();
        assert_eq!(small, extract_patches(&pair, 16, 4, 5).unwrap());
        assert_eq!(small[0].hazy.shape(), &[3, 16, 16]);
        assert!(extract_patches(&pair, 36, 1, 0).is_err());
        assert!(extract_patches(&pair, 18, 1, 0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(HazeParams::new([0.6, 0.8, 0.8], 1.0).is_err());
        assert!(HazeParams::new([0.8; 3], 0.0).is_err());
        assert!(HazeParams::new([0.8; 3], 4.5).is_err());
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for _ in 0..100 {
            sample_params(&mut rng, DEFAULT_BETA_RANGE).unwrap();
        }
    }
}
