//! The end-to-end dehazing network.
//!
//! Shallow layers work at quarter resolution and produce a pseudo-haze-free
//! image `S(x)`. A density module compares `S(x)` with the hazy input and
//! predicts a sigmoid map `M`, which modulates the shallow features handed
//! to the full-resolution deep layers. The deep layers refine `S(x)` into
//! the final output `D(x)`.
//!
//! Images enter in `[0, 1]`, are mapped to `[−1, 1]` for the network, and
//! outputs are mapped back.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::attention::{Attention, AttentionKind, Sha, ShaConfig};
use crate::autograd::{Tape, Var};
use crate::blocks::{Aff, BlockConfig, Mhab, Mhac, Tail};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{Conv2d, ConvOptions};
use crate::ops::{Activation, PaddingSpec};
use crate::params::{Init, ParamBuilder, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub shallow_channels: usize,
    pub shallow_blocks: usize,
    pub deep_channels: usize,
    pub deep_blocks: usize,
    pub density_channels: usize,
    pub downsample_factor: usize,
    pub attention: AttentionKind,
    pub use_cot: bool,
    pub use_aff: bool,
    pub use_deep: bool,
    pub use_density: bool,
    pub sha_reduction: usize,
    pub sha_shuffle_groups: usize,
    pub sha_restore_kernel: usize,
    pub sha_maxpool: bool,
    pub sha_shuffle: bool,
    pub cot_kernel: usize,
    pub tail_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size network: 8 MHAC blocks at 256 channels, 10 MHAB blocks at 16 channels.
    pub fn full() -> Self {
        Self {
            shallow_channels: 256,
            shallow_blocks: 8,
            deep_channels: 16,
            deep_blocks: 10,
            density_channels: 64,
            downsample_factor: 4,
            attention: AttentionKind::Sha,
            use_cot: true,
            use_aff: true,
            use_deep: true,
            use_density: true,
            sha_reduction: 4,
            sha_shuffle_groups: 2,
            sha_restore_kernel: 3,
            sha_maxpool: true,
            sha_shuffle: true,
            cot_kernel: 3,
            tail_depth: 2,
        }
    }

    /// Same topology, scaled to train on a single CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            shallow_channels: 32,
            shallow_blocks: 2,
            deep_channels: 16,
            deep_blocks: 2,
            density_channels: 16,
            ..Self::full()
        }
    }

    /// Smallest valid network, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            shallow_channels: 8,
            shallow_blocks: 2,
            deep_channels: 4,
            deep_blocks: 2,
            density_channels: 4,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn sha(&self, channels: usize) -> ShaConfig {
        ShaConfig {
            channels,
            reduction: self.sha_reduction,
            shuffle_groups: self.sha_shuffle_groups,
            restore_kernel: self.sha_restore_kernel,
            enable_maxpool: self.sha_maxpool,
            enable_shuffle: self.sha_shuffle,
        }
    }

    pub fn block(&self, channels: usize) -> BlockConfig {
        BlockConfig {
            channels,
            cot_kernel: self.cot_kernel,
            cot_groups: 4,
            tail_depth: self.tail_depth,
            use_cot: self.use_cot,
            use_aff: self.use_aff,
            attention: self.attention,
            sha: self.sha(channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsample_factor != 4 {
            return Err(Error::Config(format!(
                "downsample_factor must be 4 (two stride-2 convolutions), got {}",
                self.downsample_factor
            )));
        }
        for (name, v) in [
            ("shallow_channels", self.shallow_channels),
            ("shallow_blocks", self.shallow_blocks),
            ("deep_channels", self.deep_channels),
            ("deep_blocks", self.deep_blocks),
            ("density_channels", self.density_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !self.shallow_channels.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "shallow_channels must be a multiple of 8, got {}",
                self.shallow_channels
            )));
        }
        if self.use_density && !self.use_deep {
            return Err(Error::Config("the density map feeds the deep layers; use_density requires use_deep".into()));
        }
        self.block(self.shallow_channels).validate()?;
        self.block(self.shallow_channels / 2).validate()?;
        if self.use_deep {
            BlockConfig {
                use_cot: false,
                ..self.block(self.deep_channels)
            }
            .validate()?;
        }
        if self.use_density {
            self.sha(self.density_channels).validate()?;
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("shallow_channels", self.shallow_channels.to_string());
        m.insert("shallow_blocks", self.shallow_blocks.to_string());
        m.insert("deep_channels", self.deep_channels.to_string());
        m.insert("deep_blocks", self.deep_blocks.to_string());
        m.insert("density_channels", self.density_channels.to_string());
        m.insert("downsample_factor", self.downsample_factor.to_string());
        m.insert("attention", self.attention.to_string());
        m.insert("use_cot", self.use_cot.to_string());
        m.insert("use_aff", self.use_aff.to_string());
        m.insert("use_deep", self.use_deep.to_string());
        m.insert("use_density", self.use_density.to_string());
        m.insert("sha_reduction", self.sha_reduction.to_string());
        m.insert("sha_shuffle_groups", self.sha_shuffle_groups.to_string());
        m.insert("sha_restore_kernel", self.sha_restore_kernel.to_string());
        m.insert("sha_maxpool", self.sha_maxpool.to_string());
        m.insert("sha_shuffle", self.sha_shuffle.to_string());
        m.insert("cot_kernel", self.cot_kernel.to_string());
        m.insert("tail_depth", self.tail_depth.to_string());
        m
    }

    /// `key=value` lines in key order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            v.parse().map_err(|_| Error::Config(format!("`{key}` expects true/false, got `{v}`")))
        }
        match key {
            "shallow_channels" => self.shallow_channels = num(key, value)?,
            "shallow_blocks" => self.shallow_blocks = num(key, value)?,
            "deep_channels" => self.deep_channels = num(key, value)?,
            "deep_blocks" => self.deep_blocks = num(key, value)?,
            "density_channels" => self.density_channels = num(key, value)?,
            "downsample_factor" => self.downsample_factor = num(key, value)?,
            "attention" => self.attention = value.parse()?,
            "use_cot" => self.use_cot = flag(key, value)?,
            "use_aff" => self.use_aff = flag(key, value)?,
            "use_deep" => self.use_deep = flag(key, value)?,
            "use_density" => self.use_density = flag(key, value)?,
            "sha_reduction" => self.sha_reduction = num(key, value)?,
            "sha_shuffle_groups" => self.sha_shuffle_groups = num(key, value)?,
            "sha_restore_kernel" => self.sha_restore_kernel = num(key, value)?,
            "sha_maxpool" => self.sha_maxpool = flag(key, value)?,
            "sha_shuffle" => self.sha_shuffle = flag(key, value)?,
            "cot_kernel" => self.cot_kernel = num(key, value)?,
            "tail_depth" => self.tail_depth = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::full();
        for (k, v) in crate::kv::parse(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
        }
        Ok(cfg)
    }
}

/// Single-channel haze density map with values strictly inside `(0, 1)`.
#[derive(Debug, Clone)]
pub struct DensityMap<T: Real> {
    pub map: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<T: Real> {
    /// Pseudo-haze-free image `S(x)`, `N×3×H×W` in image space.
    pub pseudo: Tensor<T>,
    /// Final output `D(x)`.
    pub final_image: Tensor<T>,
    /// Absent when the density path is disabled (equivalent to `M ≡ 1`).
    pub density: Option<DensityMap<T>>,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub input: Var,
    pub pseudo: Var,
    pub final_image: Var,
    pub density: Option<Var>,
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    attention: Attention,
}

impl Stage {
    fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(tape, x)?;
        let h = tape.activation(h, Activation::Relu6)?;
        self.attention.forward(tape, h)
    }
}

#[derive(Debug, Clone)]
pub struct ShallowLayers {
    stem: [Stage; 2],
    trunk: Vec<Mhac>,
    up: [Stage; 2],
    tail: Tail,
}

impl ShallowLayers {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.shallow_channels;
        let half = c / 2;
        b.scope("shallow", |b| {
            let stage = |b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, stride: usize| {
                b.scope(name, |b| {
                    Ok(Stage {
                        conv: Conv2d::new(b, "conv", cin, cout, 3, ConvOptions::same(3).stride(stride))?,
                        attention: Attention::new(b, cfg.attention, cfg.sha(cout))?,
                    })
                })
            };
            let stem = [stage(b, "stem1", 3, half, 2)?, stage(b, "stem2", half, c, 2)?];
            let block = cfg.block(c);
            let trunk = (0..cfg.shallow_blocks)
                .map(|i| b.scope(&format!("mhac{i}"), |b| Mhac::new(b, &block)))
                .collect::<Result<_>>()?;
            let up = [stage(b, "up1", c, half, 1)?, stage(b, "up2", half, half, 1)?];
            let tail = Tail::new(b, half, cfg.tail_depth)?;
            Ok(Self { stem, trunk, up, tail })
        })
    }

    /// Returns `(S(x), trunk features)` in network space.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var)> {
        let stem = self.stem[0].forward(tape, x)?;
        let stem = self.stem[1].forward(tape, stem)?;
        let mid = self.trunk.len() / 2;
        let mut h = stem;
        for (i, block) in self.trunk.iter().enumerate() {
            h = block.forward(tape, h)?;
            if i + 1 == mid {
                h = tape.add(h, stem)?;
            }
        }
        let feats = tape.add(h, stem)?;
        let mut u = feats;
        for stage in &self.up {
            u = tape.upsample(u, 2)?;
            u = stage.forward(tape, u)?;
        }
        let residual = self.tail.forward(tape, u)?;
        let pseudo = tape.add(residual, x)?;
        Ok((pseudo, feats))
    }
}

#[derive(Debug, Clone)]
pub struct DensityModule {
    conv_in: Conv2d,
    sha: Sha,
    conv_out: Conv2d,
}

impl DensityModule {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.density_channels;
        let opts = || ConvOptions::same(3).padding(PaddingSpec::reflect(1));
        b.scope("density", |b| {
            Ok(Self {
                conv_in: Conv2d::new(b, "conv_in", 6, c, 3, opts())?,
                sha: Sha::new(b, cfg.sha(c))?,
                conv_out: Conv2d::new(b, "conv_out", c, 1, 3, opts())?,
            })
        })
    }

    /// `sigmoid(conv(SHA(conv(reflect_pad(cat(pseudo, hazy))))))`, shape `N×1×H×W`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, pseudo: Var, hazy: Var) -> Result<Var> {
        let (sp, sh) = (tape.shape(pseudo).to_vec(), tape.shape(hazy).to_vec());
        if sp != sh {
            return Err(Error::shape("density_estimate", "input shape", sh, sp));
        }
        let joint = tape.concat(&[pseudo, hazy], 1)?;
        let h = self.conv_in.forward(tape, joint)?;
        let h = self.sha.forward(tape, h)?;
        let h = self.conv_out.forward(tape, h)?;
        tape.activation(h, Activation::Sigmoid)
    }
}

#[derive(Debug, Clone)]
pub struct DeepLayers {
    proj: Conv2d,
    head: Conv2d,
    blocks: Vec<Mhab>,
    aff: Option<Aff>,
    tail: Tail,
}

impl DeepLayers {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.deep_channels;
        let block = cfg.block(c);
        b.scope("deep", |b| {
            Ok(Self {
                proj: Conv2d::new(b, "proj", cfg.shallow_channels, c, 1, ConvOptions::same(1))?,
                head: Conv2d::new(b, "head", 3, c, 3, ConvOptions::same(3))?,
                blocks: (0..cfg.deep_blocks)
                    .map(|i| b.scope(&format!("block{i}"), |b| Mhab::new(b, &block)))
                    .collect::<Result<_>>()?,
                aff: cfg.use_aff.then(|| Aff::new(b)).transpose()?,
                tail: Tail::new(b, c, cfg.tail_depth)?,
            })
        })
    }

    /// Projects quarter-resolution shallow features to the deep width and upsamples them ×4.
    pub fn handoff<T: Real>(&self, tape: &mut Tape<'_, T>, feats: Var) -> Result<Var> {
        let p = self.proj.forward(tape, feats)?;
        tape.upsample(p, 4)
    }

    /// `D(x) = S(x) + tail(blocks(head(x)) fused with the refined shallow stream)`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, refined: Var, pseudo: Var) -> Result<Var> {
        let mut h = self.head.forward(tape, x)?;
        if tape.shape(refined) != tape.shape(h) {
            return Err(Error::shape(
                "deep_forward",
                "refined shallow features",
                tape.shape(h).to_vec(),
                tape.shape(refined).to_vec(),
            ));
        }
        let mid = self.blocks.len() / 2;
        for i in 0..=self.blocks.len() {
            if i == mid {
                h = match &self.aff {
                    Some(aff) => aff.forward(tape, h, refined)?,
                    None => tape.add(h, refined)?,
                };
            }
            if let Some(block) = self.blocks.get(i) {
                h = block.forward(tape, h)?;
            }
        }
        let residual = self.tail.forward(tape, h)?;
        tape.add(residual, pseudo)
    }
}

#[derive(Debug, Clone)]
pub struct HazeNet {
    pub cfg: ModelConfig,
    pub shallow: ShallowLayers,
    pub density: Option<DensityModule>,
    pub deep: Option<DeepLayers>,
}

pub fn check_spatial(h: usize, w: usize, factor: usize) -> Result<()> {
    if !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::SpatialDivisibility { h, w, factor });
    }
    Ok(())
}

impl HazeNet {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let shallow = ShallowLayers::new(b, &cfg)?;
        let density = cfg.use_density.then(|| DensityModule::new(b, &cfg)).transpose()?;
        let deep = cfg.use_deep.then(|| DeepLayers::new(b, &cfg)).transpose()?;
        Ok(Self {
            cfg,
            shallow,
            density,
            deep,
        })
    }

    /// Builds the network and a freshly initialized parameter store.
    pub fn init<T: Real>(cfg: ModelConfig, seed: u64, init: Init) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new(seed);
        let net = Self::new(&mut ParamBuilder::new(&mut store, init), cfg)?;
        Ok((net, store))
    }

    /// Records a full forward pass for `x` (`N×3×H×W` in `[0, 1]`).
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<ModelVars> {
        let (_, c, h, w) = tape.value(x).dims4("model_forward")?;
        if c != 3 {
            return Err(Error::shape("model_forward", "input channels", 3, c));
        }
        check_spatial(h, w, self.cfg.downsample_factor)?;
        let xn = tape.affine(x, 2.0, -1.0)?;
        let (pseudo_n, feats) = self.shallow.forward(tape, xn)?;
        let (final_n, density) = match &self.deep {
            None => (pseudo_n, None),
            Some(deep) => {
                let density = self
                    .density
                    .as_ref()
                    .map(|d| d.forward(tape, pseudo_n, xn))
                    .transpose()?;
                let mut refined = deep.handoff(tape, feats)?;
                if let Some(m) = density {
                    refined = tape.mul(refined, m)?;
                }
                (deep.forward(tape, xn, refined, pseudo_n)?, density)
            }
        };
        let pseudo = tape.affine(pseudo_n, 0.5, 0.5)?;
        let final_image = if final_n == pseudo_n {
            pseudo
        } else {
            tape.affine(final_n, 0.5, 0.5)?
        };
        Ok(ModelVars {
            input: x,
            pseudo,
            final_image,
            density,
        })
    }

    pub fn checkpoint(&self, store: &ParamStore<f32>) -> Checkpoint {
        Checkpoint::from_store(store, self.cfg.to_kv())
    }

    /// Rebuilds the network described by a checkpoint's config block and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, ParamStore<f32>)> {
        let cfg = ModelConfig::from_kv(&ckpt.config)?;
        let (net, mut store) = Self::init(cfg, ckpt.seed, Init::Zeros)?;
        ckpt.restore_into(&mut store)?;
        Ok((net, store))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<(Self, ParamStore<f32>)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Runs inference on a batch and collects all three outputs.
    pub fn run<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<ModelOutput<T>> {
        let mut tape = Tape::new(store);
        let input = tape.input(x.clone());
        let vars = self.forward(&mut tape, input)?;
        Ok(ModelOutput {
            pseudo: tape.value(vars.pseudo).clone(),
            final_image: tape.value(vars.final_image).clone(),
            density: vars.density.map(|m| DensityMap {
                map: tape.value(m).clone(),
            }),
        })
    }
}

/// `F_out = F_in ⊗ M`: scales every channel of `feat` by the single-channel map.
pub fn refine_with_density<T: Real>(feat: &Tensor<T>, m: &DensityMap<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = feat.dims4("refine_with_density")?;
    let (mn, mc, mh, mw) = m.map.dims4("refine_with_density")?;
    if (mh, mw) != (h, w) {
        return Err(Error::shape("refine_with_density", "spatial dims", (h, w), (mh, mw)));
    }
    if mc != 1 || mn != n {
        return Err(Error::shape("refine_with_density", "density map batch/channels", (n, 1), (mn, mc)));
    }
    let mut tape = Tape::<T>::detached();
    let f = tape.input(feat.clone());
    let mv = tape.input(m.map.clone());
    let out = tape.mul(f, mv)?;
    let out = tape.value(out).clone();
    debug_assert_eq!(out.shape(), [n, c, h, w]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut cfg = ModelConfig::desk();
        cfg.attention = AttentionKind::Fa;
        cfg.use_density = false;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(ModelConfig::from_kv("bogus=1").is_err());
        assert!(ModelConfig::from_kv("deep_blocks=x").is_err());
    }

    #[test]
    fn validation() {
        for cfg in [ModelConfig::full(), ModelConfig::desk(), ModelConfig::tiny()] {
            cfg.validate().unwrap();
        }
        let bad = ModelConfig {
            use_deep: false,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            downsample_factor: 2,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            shallow_channels: 12,
            ..ModelConfig::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (net, store) = HazeNet::init::<f32>(ModelConfig::tiny(), 9, Init::Uniform).unwrap();
        let mut buf = Vec::new();
        net.checkpoint(&store).write(&mut buf).unwrap();
        let ckpt = Checkpoint::read(&mut buf.as_slice()).unwrap();
        assert_eq!(ckpt.num_elements(), store.num_elements());
        let (net2, store2) = HazeNet::from_checkpoint(&ckpt).unwrap();
        assert_eq!(net2.cfg, net.cfg);
        assert_eq!(store2.seed(), 9);
        for (id, p) in store.iter() {
            assert_eq!(store2.tensor(store2.id(&p.name).unwrap()), store.tensor(id));
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let (net, store) = HazeNet::init::<f32>(ModelConfig::tiny(), 1, Init::Uniform).unwrap();
        let x = Tensor::zeros(&[1, 3, 18, 16]).unwrap();
        let err = net.run(&store, &x).unwrap_err();
        assert!(err.to_string().contains("reflect-pad"), "{err}");
    }
}
