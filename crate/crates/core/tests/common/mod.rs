//! Brute-force reference implementations shared by the integration tests.
//!
//! Everything here works on flat `f64` buffers with explicit index
//! arithmetic and never calls into the library's kernels.
#![allow(dead_code)]

use hazenet::hazegen::{scene_id, synthesize_pairs, DatasetItem, SynthOptions};
use hazenet::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), random_vec(rng, len, lo, hi)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mirror index without repeating the edge, for `i` in `-(n-1)..2n-1`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Zero,
    Reflect,
}

/// Direct-loop grouped cross-correlation with independent row/column padding.
#[allow(clippy::too_many_arguments)]
pub fn conv_ref(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    (pad_h, pad_w): (usize, usize),
    groups: usize,
    mode: Pad,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad_h - kh) / stride + 1;
    let ow = (w + 2 * pad_w - kw) / stride + 1;
    let cin_g = c / groups;
    let cout_g = co / groups;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            let g = o / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[o]);
                    for ci in 0..cin_g {
                        let ch = g * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad_h as isize;
                                let ix = (ox * stride + kx) as isize - pad_w as isize;
                                let v = match mode {
                                    Pad::Zero => {
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        x[((b * c + ch) * h + iy as usize) * w + ix as usize]
                                    }
                                    Pad::Reflect => {
                                        let (ry, rx) = (reflect_index(iy, h), reflect_index(ix, w));
                                        x[((b * c + ch) * h + ry) * w + rx]
                                    }
                                };
                                acc += weight[((o * cin_g + ci) * kh + ky) * kw + kx] * v;
                            }
                        }
                    }
                    out[((b * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Row-wise (`horizontal = true`, output `N×C×H`) or column-wise (`N×C×W`) pooling.
pub fn pool_ref(x: &[f64], (n, c, h, w): (usize, usize, usize, usize), horizontal: bool, max: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for plane in 0..n * c {
        let outer = if horizontal { h } else { w };
        for o in 0..outer {
            let vals: Vec<f64> = if horizontal {
                (0..w).map(|xx| x[plane * h * w + o * w + xx]).collect()
            } else {
                (0..h).map(|y| x[plane * h * w + y * w + o]).collect()
            };
            out.push(if max {
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            });
        }
    }
    out
}

/// Shuffle via an explicit `groups × per` matrix transpose of channel indices.
pub fn shuffle_ref(x: &[f64], n: usize, c: usize, inner: usize, groups: usize) -> Vec<f64> {
    let per = c / groups;
    let matrix: Vec<Vec<usize>> = (0..groups).map(|g| (0..per).map(|i| g * per + i).collect()).collect();
    let order: Vec<usize> = (0..per).flat_map(|i| matrix.iter().map(move |row| row[i])).collect();
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for &src in &order {
            out.extend_from_slice(&x[(b * c + src) * inner..(b * c + src + 1) * inner]);
        }
    }
    out
}

/// Mean SSIM using an explicit 2-D 11×11 Gaussian window and per-window loops.
pub fn ssim_ref(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let gray = |img: &[f64]| -> Vec<f64> {
        (0..h * w)
            .map(|p| (0..c).map(|ch| img[ch * h * w + p]).sum::<f64>() / c as f64)
            .collect()
    };
    let (gx, gy) = (gray(x), gray(y));
    let k = 11usize;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let p = (oy + i) * w + ox + j;
                    let wt = win[i * k + j];
                    mx += wt * gx[p];
                    my += wt * gy[p];
                }
            }
            for i in 0..k {
                for j in 0..k {
                    let p = (oy + i) * w + ox + j;
                    let wt = win[i * k + j];
                    sxx += wt * (gx[p] - mx).powi(2);
                    syy += wt * (gy[p] - my).powi(2);
                    sxy += wt * (gx[p] - mx) * (gy[p] - my);
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.tensor(id).data()
}

/// Step-by-step separable hybrid attention for one sample (`C×H×W`), returning `(output, attn)`.
#[allow(clippy::too_many_arguments)]
pub fn sha_ref(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    k: usize,
    shuffle_groups: Option<usize>,
    maxpool: bool,
    store: &ParamStore<f64>,
    prefix: &str,
) -> (Vec<f64>, Vec<f64>) {
    let hid = c / r;
    let at = |ch: usize, y: usize, xx: usize| x[(ch * h + y) * w + xx];
    // directional encodings, concatenated along the length axis
    let len = h + w;
    let mut joint = vec![0.0; c * len];
    for ch in 0..c {
        for y in 0..h {
            let row: Vec<f64> = (0..w).map(|xx| at(ch, y, xx)).collect();
            let mut v = row.iter().sum::<f64>() / w as f64;
            if maxpool {
                v += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            joint[ch * len + y] = v;
        }
        for xx in 0..w {
            let col: Vec<f64> = (0..h).map(|y| at(ch, y, xx)).collect();
            let mut v = col.iter().sum::<f64>() / h as f64;
            if maxpool {
                v += col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            joint[ch * len + h + xx] = v;
        }
    }
    if let Some(g) = shuffle_groups {
        joint = shuffle_ref(&joint, 1, c, len, g);
    }
    let rw = param(store, &format!("{prefix}sha.reduce.weight"));
    let rb = param(store, &format!("{prefix}sha.reduce.bias"));
    let mut reduced = vec![0.0; hid * len];
    for o in 0..hid {
        for l in 0..len {
            let s: f64 = rb[o] + (0..c).map(|ch| rw[o * c + ch] * joint[ch * len + l]).sum::<f64>();
            reduced[o * len + l] = s.clamp(0.0, 6.0);
        }
    }
    let sw = param(store, &format!("{prefix}sha.restore.weight"));
    let sb = param(store, &format!("{prefix}sha.restore.bias"));
    let restore = |start: usize, n: usize| -> Vec<f64> {
        let mut out = vec![0.0; c * n];
        let half = (k / 2) as isize;
        for o in 0..c {
            for l in 0..n {
                let mut acc = sb[o];
                for j in 0..hid {
                    for t in 0..k {
                        let src = l as isize + t as isize - half;
                        if src >= 0 && (src as usize) < n {
                            acc += sw[(o * hid + j) * k + t] * reduced[j * len + start + src as usize];
                        }
                    }
                }
                out[o * n + l] = acc;
            }
        }
        out
    };
    let (yh, yv) = (restore(0, h), restore(h, w));
    let mut attn = vec![0.0; c * h * w];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let a = sigmoid(yh[ch * h + y] * yv[ch * w + xx]);
                attn[(ch * h + y) * w + xx] = a;
                out[(ch * h + y) * w + xx] = a * at(ch, y, xx);
            }
        }
    }
    (out, attn)
}

fn elu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

fn instance_norm_ref(planes: &mut [f64], hw: usize) {
    for p in planes.chunks_exact_mut(hw) {
        let mean = p.iter().sum::<f64>() / hw as f64;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
        let s = (var + 1e-5).sqrt();
        p.iter_mut().for_each(|v| *v = (*v - mean) / s);
    }
}

fn pointwise(x: &[f64], cin: usize, hw: usize, weight: &[f64], bias: Option<&[f64]>, cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * hw];
    for o in 0..cout {
        for p in 0..hw {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..cin {
                acc += weight[o * cin + i] * x[i * hw + p];
            }
            out[o * hw + p] = acc;
        }
    }
    out
}

/// Per-pixel contextual block for one sample, written as explicit loops.
pub fn cot_ref(x: &[f64], c: usize, h: usize, w: usize, k: usize, groups: usize, store: &ParamStore<f64>) -> Vec<f64> {
    let hw = h * w;
    let pad = k / 2;
    let (mut keys, _, _) = conv_ref(
        x,
        (1, c, h, w),
        param(store, "cot.key.weight"),
        (c, k, k),
        None,
        1,
        (pad, pad),
        groups,
        Pad::Zero,
    );
    instance_norm_ref(&mut keys, hw);
    keys.iter_mut().for_each(|v| *v = elu(*v));
    let joint: Vec<f64> = keys.iter().chain(x.iter()).copied().collect();
    let hidden = (c / 4).max(1);
    let mut emb = pointwise(&joint, 2 * c, hw, param(store, "cot.embed.hidden.weight"), None, hidden);
    instance_norm_ref(&mut emb, hw);
    emb.iter_mut().for_each(|v| *v = elu(*v));
    let kk = k * k;
    let logits = pointwise(
        &emb,
        hidden,
        hw,
        param(store, "cot.embed.out.weight"),
        Some(param(store, "cot.embed.out.bias")),
        groups * kk,
    );
    let values = pointwise(x, c, hw, param(store, "cot.value.weight"), Some(param(store, "cot.value.bias")), c);
    let per = c / groups;
    let mut out = vec![0.0; c * hw];
    for y in 0..h {
        for xx in 0..w {
            for g in 0..groups {
                let row: Vec<f64> = (0..kk).map(|t| logits[(g * kk + t) * hw + y * w + xx]).collect();
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for ch in g * per..(g + 1) * per {
                    let mut acc = 0.0;
                    for (t, et) in e.iter().enumerate() {
                        let sy = y as isize + (t / k) as isize - pad as isize;
                        let sx = xx as isize + (t % k) as isize - pad as isize;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += et / z * values[ch * hw + sy as usize * w + sx as usize];
                        }
                    }
                    out[ch * hw + y * w + xx] = keys[ch * hw + y * w + xx] + acc;
                }
            }
        }
    }
    out
}

/// The seeded in-memory training set used by the overfit and ablation experiments.
pub fn overfit_items(opts: &SynthOptions) -> Vec<DatasetItem> {
    synthesize_pairs(opts)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, p)| DatasetItem::from_pair(scene_id(i), p))
        .collect()
}
