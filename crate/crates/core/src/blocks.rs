//! Composite blocks: multi-branch hybrid attention (MHAB), the contextual
//! transformer variant with instance norm and ELU (CoT), adaptive feature
//! fusion (AFF), their parallel combination (MHAC), and the reconstruction tail.

use crate::attention::{Attention, AttentionKind, ShaConfig};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOptions};
use crate::ops::Activation;
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::{Real, Tensor};

const IN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub channels: usize,
    pub cot_kernel: usize,
    /// Group count of the CoT key convolution and of its local attention weights.
    pub cot_groups: usize,
    pub tail_depth: usize,
    pub use_cot: bool,
    pub use_aff: bool,
    pub attention: AttentionKind,
    /// SHA settings; `channels` is overridden per block.
    pub sha: ShaConfig,
}

impl BlockConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            cot_kernel: 3,
            cot_groups: 4,
            tail_depth: 2,
            use_cot: true,
            use_aff: true,
            attention: AttentionKind::Sha,
            sha: ShaConfig::new(channels),
        }
    }

    pub fn sha_for(&self, channels: usize) -> ShaConfig {
        ShaConfig { channels, ..self.sha }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("block channels must be >= 1".into()));
        }
        if self.cot_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("CoT kernel must be odd, got {}", self.cot_kernel)));
        }
        if self.use_cot && (self.cot_groups == 0 || !self.channels.is_multiple_of(self.cot_groups)) {
            return Err(Error::Config(format!(
                "CoT channels {} not divisible by key groups {}",
                self.channels, self.cot_groups
            )));
        }
        if self.tail_depth == 0 {
            return Err(Error::Config("tail depth must be >= 1".into()));
        }
        if self.attention == AttentionKind::Sha {
            self.sha_for(self.channels).validate()?;
        }
        Ok(())
    }
}

/// Parallel 3×3 and 1×1 convolutions, ReLU6, attention, plus an identity residual.
#[derive(Debug, Clone)]
pub struct Mhab {
    conv3: Conv2d,
    conv1: Conv2d,
    attention: Attention,
}

impl Mhab {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        b.scope("mhab", |b| {
            Ok(Self {
                conv3: Conv2d::new(b, "conv3", c, c, 3, ConvOptions::same(3))?,
                conv1: Conv2d::new(b, "conv1", c, c, 1, ConvOptions::same(1))?,
                attention: Attention::new(b, cfg.attention, cfg.sha_for(c))?,
            })
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let a = self.conv3.forward(tape, x)?;
        let b = self.conv1.forward(tape, x)?;
        let branch = tape.add(a, b)?;
        let branch = tape.activation(branch, Activation::Relu6)?;
        let branch = self.attention.forward(tape, branch)?;
        tape.add(branch, x)
    }
}

/// Contextual transformer block with instance norm and ELU.
///
/// Static context comes from a grouped `k×k` key convolution. The keys and
/// the raw input are embedded by two 1×1 convolutions into one `k×k`
/// kernel per key group and position; a softmax over the window turns it
/// into weights that aggregate the 1×1 value projection locally.
#[derive(Debug, Clone)]
pub struct Cot {
    channels: usize,
    kernel: usize,
    groups: usize,
    key: Conv2d,
    embed_hidden: Conv2d,
    embed_out: Conv2d,
    value: Conv2d,
}

impl Cot {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        let (c, k, g) = (cfg.channels, cfg.cot_kernel, cfg.cot_groups);
        let hidden = (c / 4).max(1);
        b.scope("cot", |b| {
            Ok(Self {
                channels: c,
                kernel: k,
                groups: g,
                key: Conv2d::new(b, "key", c, c, k, ConvOptions::same(k).groups(g).no_bias())?,
                embed_hidden: Conv2d::new(b, "embed.hidden", 2 * c, hidden, 1, ConvOptions::same(1).no_bias())?,
                embed_out: Conv2d::new(b, "embed.out", hidden, g * k * k, 1, ConvOptions::same(1))?,
                value: Conv2d::new(b, "value", c, c, 1, ConvOptions::same(1))?,
            })
        })
    }

    pub fn value_weight(&self) -> ParamId {
        self.value.weight
    }

    pub fn value_bias(&self) -> Option<ParamId> {
        self.value.bias
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (n, c, h, w) = tape.value(x).dims4("cot")?;
        if c != self.channels {
            return Err(Error::shape("cot", "input channels", self.channels, c));
        }
        let (k2, g) = (self.kernel * self.kernel, self.groups);

        let keys = self.key.forward(tape, x)?;
        let keys = tape.instance_norm(keys, IN_EPS)?;
        let keys = tape.activation(keys, Activation::Elu)?;

        let joint = tape.concat(&[keys, x], 1)?;
        let emb = self.embed_hidden.forward(tape, joint)?;
        let emb = tape.instance_norm(emb, IN_EPS)?;
        let emb = tape.activation(emb, Activation::Elu)?;
        let emb = self.embed_out.forward(tape, emb)?;
        let emb = tape.reshape(emb, &[n, g, k2, h, w])?;
        let weights = tape.softmax(emb, 2)?;
        let weights = tape.reshape(weights, &[n, g, 1, k2, h, w])?;

        let values = self.value.forward(tape, x)?;
        let windows = tape.unfold(values, self.kernel)?;
        let windows = tape.reshape(windows, &[n, g, c / g, k2, h, w])?;
        let weighted = tape.mul(windows, weights)?;
        let dynamic = tape.sum_axis(weighted, 3)?;
        let dynamic = tape.reshape(dynamic, &[n, c, h, w])?;
        tape.add(keys, dynamic)
    }
}

/// Learnable two-way blend `σ(θ)·a + σ(1−θ)·b`.
///
/// The two coefficients are independent sigmoids and do not sum to one.
#[derive(Debug, Clone)]
pub struct Aff {
    pub theta: ParamId,
}

impl Aff {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        b.scope("aff", |b| Ok(Self { theta: b.scalar("theta", 0.0)? }))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape("aff", "operand shape", sa, sb));
        }
        let theta = tape.param(self.theta)?;
        let theta = tape.reshape(theta, &vec![1; sa.len()])?;
        let wa = tape.activation(theta, Activation::Sigmoid)?;
        let flipped = tape.affine(theta, -1.0, 1.0)?;
        let wb = tape.activation(flipped, Activation::Sigmoid)?;
        let a = tape.mul(a, wa)?;
        let b = tape.mul(b, wb)?;
        tape.add(a, b)
    }
}

/// AFF on concrete tensors with a given `θ`.
pub fn aff_fuse<T: Real>(a: &Tensor<T>, b: &Tensor<T>, theta: f64) -> Result<Tensor<T>> {
    let wa = T::from_f64(Activation::Sigmoid.eval(theta));
    let wb = T::from_f64(Activation::Sigmoid.eval(1.0 - theta));
    a.zip_map(b, "aff", |x, y| wa * x + wb * y)
}

/// MHAB and CoT in parallel, blended by AFF (or summed when AFF is disabled).
#[derive(Debug, Clone)]
pub struct Mhac {
    pub mhab: Mhab,
    pub cot: Option<Cot>,
    pub aff: Option<Aff>,
}

impl Mhac {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &BlockConfig) -> Result<Self> {
        let mhab = Mhab::new(b, cfg)?;
        let cot = cfg.use_cot.then(|| Cot::new(b, cfg)).transpose()?;
        let aff = (cfg.use_cot && cfg.use_aff).then(|| Aff::new(b)).transpose()?;
        Ok(Self { mhab, cot, aff })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let local = self.mhab.forward(tape, x)?;
        let Some(cot) = &self.cot else {
            return Ok(local);
        };
        let context = cot.forward(tape, x)?;
        match &self.aff {
            Some(aff) => aff.forward(tape, local, context),
            None => tape.add(local, context),
        }
    }
}

/// Stack of 3×3 convolutions down to RGB followed by tanh.
#[derive(Debug, Clone)]
pub struct Tail {
    convs: Vec<Conv2d>,
}

impl Tail {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tail depth must be >= 1".into()));
        }
        b.scope("tail", |b| {
            let convs = (0..depth)
                .map(|i| {
                    let out = if i + 1 == depth { 3 } else { channels };
                    Conv2d::new(b, &format!("conv{i}"), channels, out, 3, ConvOptions::same(3))
                })
                .collect::<Result<_>>()?;
            Ok(Self { convs })
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, h)?;
            if i + 1 < self.convs.len() {
                h = tape.activation(h, Activation::Relu6)?;
            }
        }
        tape.activation(h, Activation::Tanh)
    }
}
