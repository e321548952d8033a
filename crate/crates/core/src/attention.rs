//! Separable hybrid attention and the SE / FA reference baselines.
//!
//! SHA pools a feature map along rows and columns (average plus max),
//! mixes the two directional encodings through a channel shuffle and a
//! 1×1 bottleneck, restores the channel count with one 1-D convolution
//! shared between both directions, and gates the input with the sigmoid
//! of their outer product.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOptions};
use crate::ops::{Activation, PoolAxis, PoolKind};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShaConfig {
    pub channels: usize,
    /// Bottleneck ratio `r`; the reduce conv maps `C → C/r`.
    pub reduction: usize,
    pub shuffle_groups: usize,
    /// Length of the shared restore kernel (1 or 3).
    pub restore_kernel: usize,
    pub enable_maxpool: bool,
    pub enable_shuffle: bool,
}

impl ShaConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            reduction: 4,
            shuffle_groups: 2,
            restore_kernel: 3,
            enable_maxpool: true,
            enable_shuffle: true,
        }
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) || self.hidden() == 0 {
            return Err(Error::Config(format!(
                "SHA channels {} must be a positive multiple of the reduction {}",
                self.channels, self.reduction
            )));
        }
        if self.restore_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "SHA restore kernel must be odd, got {}",
                self.restore_kernel
            )));
        }
        if self.enable_shuffle && (self.shuffle_groups == 0 || !self.channels.is_multiple_of(self.shuffle_groups)) {
            return Err(Error::Config(format!(
                "SHA channels {} not divisible by shuffle groups {}",
                self.channels, self.shuffle_groups
            )));
        }
        Ok(())
    }

    /// Exact parameter count: reduce conv `C·(C/r) + C/r`, restore conv `k·(C/r)·C + C`.
    pub fn param_count(&self) -> usize {
        let (c, h, k) = (self.channels, self.hidden(), self.restore_kernel);
        c * h + h + k * h * c + c
    }
}

#[derive(Debug, Clone)]
pub struct Sha {
    pub cfg: ShaConfig,
    reduce: Conv2d,
    restore: Conv2d,
}

/// Tape handles for the intermediate encodings of one SHA evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ShaVars {
    pub v_h: Var,
    pub v_v: Var,
    pub y_h: Var,
    pub y_v: Var,
    pub attn: Var,
}

/// Directional encodings and attention map of one SHA evaluation.
#[derive(Debug, Clone)]
pub struct ShaState<T: Real> {
    /// `N×C×H` row encoding.
    pub v_h: Tensor<T>,
    /// `N×C×W` column encoding.
    pub v_v: Tensor<T>,
    pub y_h: Tensor<T>,
    pub y_v: Tensor<T>,
    /// `N×C×H×W`, strictly inside `(0, 1)`.
    pub attn: Tensor<T>,
}

impl Sha {
    /// Allocates `sha.reduce.*` and `sha.restore.*` under the builder's current scope.
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: ShaConfig) -> Result<Self> {
        cfg.validate()?;
        b.scope("sha", |b| {
            let reduce = Conv2d::new(b, "reduce", cfg.channels, cfg.hidden(), 1, ConvOptions::same(1))?;
            let restore = Conv2d::new_1d(b, "restore", cfg.hidden(), cfg.channels, cfg.restore_kernel)?;
            Ok(Self { cfg, reduce, restore })
        })
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.restore.param_count()
    }

    fn encode<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, axis: PoolAxis) -> Result<Var> {
        let avg = tape.directional_pool(x, axis, PoolKind::Avg)?;
        if !self.cfg.enable_maxpool {
            return Ok(avg);
        }
        let max = tape.directional_pool(x, axis, PoolKind::Max)?;
        tape.add(avg, max)
    }

    pub fn forward_traced<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, ShaVars)> {
        let (n, c, h, w) = tape.value(x).dims4("sha")?;
        if c != self.cfg.channels {
            return Err(Error::shape("sha", "input channels", self.cfg.channels, c));
        }
        let v_h = self.encode(tape, x, PoolAxis::Horizontal)?;
        let v_v = self.encode(tape, x, PoolAxis::Vertical)?;
        let mut joint = tape.concat(&[v_h, v_v], 2)?;
        if self.cfg.enable_shuffle {
            joint = tape.channel_shuffle(joint, self.cfg.shuffle_groups)?;
        }
        let joint = tape.reshape(joint, &[n, c, h + w, 1])?;
        let reduced = self.reduce.forward(tape, joint)?;
        let reduced = tape.activation(reduced, Activation::Relu6)?;
        let r_h = tape.narrow(reduced, 2, 0, h)?;
        let r_v = tape.narrow(reduced, 2, h, w)?;
        let y_h = self.restore.forward(tape, r_h)?;
        let y_v = self.restore.forward(tape, r_v)?;
        let col = tape.reshape(y_h, &[n, c, h, 1])?;
        let row = tape.reshape(y_v, &[n, c, 1, w])?;
        let outer = tape.mul(col, row)?;
        let attn = tape.activation(outer, Activation::Sigmoid)?;
        let out = tape.mul(attn, x)?;
        Ok((out, ShaVars { v_h, v_v, y_h, y_v, attn }))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        self.forward_traced(tape, x).map(|(out, _)| out)
    }

    /// Evaluates SHA on a concrete input, returning the gated output and all encodings.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<(Tensor<T>, ShaState<T>)> {
        let mut tape = Tape::new(store);
        let x = tape.input(input.clone());
        let (out, vars) = self.forward_traced(&mut tape, x)?;
        let (n, c) = (input.shape()[0], input.shape()[1]);
        let squeeze = |v: Var, tape: &Tape<'_, T>| -> Result<Tensor<T>> {
            let t = tape.value(v).clone();
            let len = t.len() / (n * c);
            t.reshape(&[n, c, len])
        };
        let state = ShaState {
            v_h: tape.value(vars.v_h).clone(),
            v_v: tape.value(vars.v_v).clone(),
            y_h: squeeze(vars.y_h, &tape)?,
            y_v: squeeze(vars.y_v, &tape)?,
            attn: tape.value(vars.attn).clone(),
        };
        Ok((tape.value(out).clone(), state))
    }
}

/// Squeeze-and-excitation with reduction 16 and bias-free FC layers.
#[derive(Debug, Clone)]
pub struct Se {
    pub channels: usize,
    squeeze: Conv2d,
    excite: Conv2d,
}

impl Se {
    pub const REDUCTION: usize = 16;

    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        if !channels.is_multiple_of(Self::REDUCTION) {
            return Err(Error::Config(format!("SE channels {channels} must be divisible by 16")));
        }
        let hidden = channels / Self::REDUCTION;
        b.scope("se", |b| {
            let squeeze = Conv2d::new(b, "squeeze", channels, hidden, 1, ConvOptions::same(1).no_bias())?;
            let excite = Conv2d::new(b, "excite", hidden, channels, 1, ConvOptions::same(1).no_bias())?;
            Ok(Self {
                channels,
                squeeze,
                excite,
            })
        })
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let pooled = tape.spatial_mean(x)?;
        let s = self.squeeze.forward(tape, pooled)?;
        let s = tape.activation(s, Activation::Relu)?;
        let s = self.excite.forward(tape, s)?;
        let s = tape.activation(s, Activation::Sigmoid)?;
        tape.mul(x, s)
    }
}

/// Feature attention: channel attention followed by pixel attention.
#[derive(Debug, Clone)]
pub struct Fa {
    pub channels: usize,
    ca_down: Conv2d,
    ca_up: Conv2d,
    pa_down: Conv2d,
    pa_out: Conv2d,
}

impl Fa {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let hidden = (channels / 8).max(1);
        b.scope("fa", |b| {
            Ok(Self {
                channels,
                ca_down: Conv2d::new(b, "ca.down", channels, hidden, 1, ConvOptions::same(1))?,
                ca_up: Conv2d::new(b, "ca.up", hidden, channels, 1, ConvOptions::same(1))?,
                pa_down: Conv2d::new(b, "pa.down", channels, hidden, 1, ConvOptions::same(1))?,
                pa_out: Conv2d::new(b, "pa.out", hidden, 1, 1, ConvOptions::same(1))?,
            })
        })
    }

    pub fn param_count(&self) -> usize {
        [&self.ca_down, &self.ca_up, &self.pa_down, &self.pa_out]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let pooled = tape.spatial_mean(x)?;
        let ca = self.ca_down.forward(tape, pooled)?;
        let ca = tape.activation(ca, Activation::Relu)?;
        let ca = self.ca_up.forward(tape, ca)?;
        let ca = tape.activation(ca, Activation::Sigmoid)?;
        let y = tape.mul(x, ca)?;
        let pa = self.pa_down.forward(tape, y)?;
        let pa = tape.activation(pa, Activation::Relu)?;
        let pa = self.pa_out.forward(tape, pa)?;
        let pa = tape.activation(pa, Activation::Sigmoid)?;
        tape.mul(y, pa)
    }
}

/// Which attention module a block applies after its convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AttentionKind {
    None,
    #[default]
    Sha,
    Fa,
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionKind::None),
            "sha" => Ok(AttentionKind::Sha),
            "fa" => Ok(AttentionKind::Fa),
            other => Err(Error::Config(format!("unknown attention kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Sha => "sha",
            AttentionKind::Fa => "fa",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Attention {
    None,
    Sha(Sha),
    Fa(Fa),
}

impl Attention {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, kind: AttentionKind, sha: ShaConfig) -> Result<Self> {
        Ok(match kind {
            AttentionKind::None => Attention::None,
            AttentionKind::Sha => Attention::Sha(Sha::new(b, sha)?),
            AttentionKind::Fa => Attention::Fa(Fa::new(b, sha.channels)?),
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self {
            Attention::None => Ok(x),
            Attention::Sha(m) => m.forward(tape, x),
            Attention::Fa(m) => m.forward(tape, x),
        }
    }
}
