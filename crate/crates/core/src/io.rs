//! File formats: F32M tensors, binary PPM images, and SHAN checkpoints.
//!
//! All multi-byte integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const F32M_MAGIC: &[u8; 4] = b"F32M";
const F32M_VERSION: u32 = 1;
const SHAN_MAGIC: &[u8; 4] = b"SHAN";
const SHAN_VERSION: u32 = 1;
/// Refuse absurd headers before allocating.
const MAX_ELEMENTS: usize = 1 << 31;

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_shape(r: &mut impl Read, format: &'static str) -> Result<Vec<usize>> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format(format, format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|e| e as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
    match count {
        Some(c) if c > 0 && c <= MAX_ELEMENTS => Ok(shape),
        _ => Err(Error::format(format, format!("invalid extents {shape:?}"))),
    }
}

fn read_f32s(r: &mut impl Read, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::InvalidArgument(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    Ok(())
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_f32m(w: &mut impl Write, t: &Tensor<f32>) -> Result<()> {
    w.write_all(F32M_MAGIC)?;
    w.write_all(&F32M_VERSION.to_le_bytes())?;
    write_shape(w, t.shape())?;
    write_f32s(w, t.data())
}

pub fn read_f32m(r: &mut impl Read) -> Result<Tensor<f32>> {
    if &read_array::<4>(r)? != F32M_MAGIC {
        return Err(Error::format("F32M", "bad magic"));
    }
    let version = read_u32(r)?;
    if version != F32M_VERSION {
        return Err(Error::format("F32M", format!("unsupported version {version}")));
    }
    let shape = read_shape(r, "F32M")?;
    let data = read_f32s(r, shape.iter().product())?;
    Tensor::from_vec(shape, data)
}

pub fn save_f32m(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_f32m(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_f32m(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_f32m(&mut BufReader::new(File::open(path)?))
}

/// Writes a `3×H×W` tensor in `[0, 1]` as binary PPM. Values are clamped, then `round(255·x)`.
pub fn write_ppm(w: &mut impl Write, img: &Tensor<f32>) -> Result<()> {
    let (c, h, wd) = match *img.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("write_ppm", "rank", 3, img.rank())),
    };
    if c != 3 {
        return Err(Error::shape("write_ppm", "channels", 3, c));
    }
    write!(w, "P6\n{wd} {h}\n255\n")?;
    let plane = h * wd;
    let d = img.data();
    let mut bytes = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            let v = d[ch * plane + p];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            bytes.push((v * 255.0).round() as u8);
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn ppm_token(r: &mut impl Read) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        match byte[0] {
            b'#' if tok.is_empty() => {
                while byte[0] != b'\n' {
                    r.read_exact(&mut byte)?;
                }
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            b => tok.push(b as char),
        }
    }
}

/// Reads a binary PPM (P6, maxval ≤ 255) into a `3×H×W` tensor in `[0, 1]`.
pub fn read_ppm(r: &mut impl Read) -> Result<Tensor<f32>> {
    if ppm_token(r)? != "P6" {
        return Err(Error::format("PPM", "only binary P6 is supported"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let tok = ppm_token(r)?;
        tok.parse()
            .map_err(|_| Error::format("PPM", format!("bad {what} `{tok}`")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || w * h > MAX_ELEMENTS / 3 {
        return Err(Error::format("PPM", format!("invalid size {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("PPM", format!("maxval {maxval} unsupported (need 1..=255)")));
    }
    let mut bytes = vec![0u8; w * h * 3];
    r.read_exact(&mut bytes)?;
    let plane = w * h;
    let mut data = vec![0f32; plane * 3];
    for (p, px) in bytes.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + p] = px[ch] as f32 / maxval as f32;
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

pub fn save_ppm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read_ppm(&mut BufReader::new(File::open(path)?))
}

/// Decoded SHAN checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Parameters in lexicographic name order.
    pub params: Vec<(String, Tensor<f32>)>,
    /// `key=value` configuration block.
    pub config: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f32>, config: String) -> Self {
        let params = store
            .sorted_ids()
            .into_iter()
            .map(|id| {
                let p = store.get(id);
                (p.name.clone(), p.tensor.clone())
            })
            .collect();
        Self {
            params,
            config,
            seed: store.seed(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every stored tensor into `store`, which must hold exactly the same names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::format(
                "SHAN",
                format!("checkpoint has {} parameters, model expects {}", self.params.len(), store.len()),
            ));
        }
        for (name, t) in &self.params {
            let id = store.id(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let dst = store.tensor_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::shape("checkpoint", name.clone(), dst.shape(), t.shape()));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SHAN_MAGIC)?;
        w.write_all(&SHAN_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut sorted: Vec<_> = self.params.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, t) in sorted {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_shape(w, t.shape())?;
            write_f32s(w, t.data())?;
        }
        let cfg = self.config.as_bytes();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&self.seed.to_le_bytes())?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        if &read_array::<4>(r)? != SHAN_MAGIC {
            return Err(Error::format("SHAN", "bad magic"));
        }
        let version = read_u32(r)?;
        if version != SHAN_VERSION {
            return Err(Error::format("SHAN", format!("unsupported version {version}")));
        }
        let count = read_u64(r)?;
        if count > 1 << 20 {
            return Err(Error::format("SHAN", format!("implausible parameter count {count}")));
        }
        let mut params = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u16(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("SHAN", "parameter name is not UTF-8"))?;
            let shape = read_shape(r, "SHAN")?;
            let data = read_f32s(r, shape.iter().product())?;
            params.push((name, Tensor::from_vec(shape, data)?));
        }
        let cfg_len = read_u32(r)? as usize;
        if cfg_len > 1 << 20 {
            return Err(Error::format("SHAN", "config block too large"));
        }
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config = String::from_utf8(cfg).map_err(|_| Error::format("SHAN", "config block is not UTF-8"))?;
        let seed = read_u64(r)?;
        Ok(Self { params, config, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
