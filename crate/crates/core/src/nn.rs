//! Parameterized layers shared by the attention modules and blocks.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::ops::{ConvGeom, PaddingMode, PaddingSpec};
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: PaddingSpec,
    pub groups: usize,
}

pub struct ConvOptions {
    pub stride: usize,
    pub padding: PaddingSpec,
    pub groups: usize,
    pub bias: bool,
}

impl ConvOptions {
    /// Stride 1, zero "same" padding for odd kernels, one group, with bias.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: PaddingSpec::zero(kernel / 2),
            groups: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: PaddingSpec) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

impl Conv2d {
    /// Square `k×k` convolution, parameters named `{scope}.weight` / `{scope}.bias`.
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        scope: &str,
        in_channels: usize,
        out_channels: usize,
        k: usize,
        opts: ConvOptions,
    ) -> Result<Self> {
        Self::with_kernel(b, scope, in_channels, out_channels, (k, k), opts)
    }

    /// Convolution over the length axis of an `N×C×L×1` sequence with a `k×1` kernel.
    pub fn new_1d<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        scope: &str,
        in_channels: usize,
        out_channels: usize,
        k: usize,
    ) -> Result<Self> {
        Self::with_kernel(b, scope, in_channels, out_channels, (k, 1), ConvOptions::same(k))
    }

    fn with_kernel<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        scope: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        opts: ConvOptions,
    ) -> Result<Self> {
        let fan_in = in_channels / opts.groups * kernel.0 * kernel.1;
        let (weight, bias) = b.scope(scope, |b| {
            let w = b.weight("weight", &[out_channels, in_channels / opts.groups, kernel.0, kernel.1])?;
            let bias = if opts.bias {
                Some(b.bias("bias", out_channels, fan_in))
            } else {
                None
            }
            .transpose()?;
            Ok((w, bias))
        })?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride: opts.stride,
            padding: opts.padding,
            groups: opts.groups,
        })
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels / self.groups * self.kernel.0 * self.kernel.1
            + self.bias.map_or(0, |_| self.out_channels)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight)?;
        let b = self.bias.map(|id| tape.param(id)).transpose()?;
        if self.kernel.0 == self.kernel.1 {
            return tape.conv2d(x, w, b, self.stride, self.padding, self.groups);
        }
        // column kernel: pad only along the length axis
        let pad_h = match self.padding.mode {
            PaddingMode::Zero => self.padding.width,
            PaddingMode::Reflect => unreachable!("reflect padding is only used with square kernels"),
        };
        let geom = ConvGeom {
            stride: self.stride,
            pad_h,
            pad_w: 0,
            groups: self.groups,
        };
        tape.conv(x, w, b, geom)
    }
}
