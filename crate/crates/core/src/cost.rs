//! Parameter and FLOP accounting.
//!
//! Parameters are the elements actually allocated by building the module.
//! FLOPs are summed from the per-op formulas recorded while tracing one
//! forward pass on a `1×C×H×W` input; a multiply-accumulate counts as 2
//! and convolution bias additions are not counted.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::{Fa, Se, Sha, ShaConfig};
use crate::autograd::Tape;
use crate::blocks::{BlockConfig, Mhab, Mhac};
use crate::error::{Error, Result};
use crate::network::{HazeNet, ModelConfig};
use crate::params::{Init, ParamBuilder, ParamStore};
use crate::tensor::Tensor;

pub const FLOP_CONVENTION: &str = "multiply-accumulate counted as 2 ops";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostModule {
    Sha,
    Se,
    Fa,
    Mhab,
    Mhac,
    Full,
}

impl CostModule {
    pub const ALL: [CostModule; 6] = [Self::Sha, Self::Se, Self::Fa, Self::Mhab, Self::Mhac, Self::Full];
}

impl fmt::Display for CostModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sha => "sha",
            Self::Se => "se",
            Self::Fa => "fa",
            Self::Mhab => "mhab",
            Self::Mhac => "mhac",
            Self::Full => "full",
        })
    }
}

impl FromStr for CostModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown module `{s}` (expected sha, se, fa, mhab, mhac or full)")))
    }
}

/// A published attention-module cost, kept for side-by-side display.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCost {
    pub name: &'static str,
    pub flops_m: f64,
    pub params: f64,
    pub params_text: &'static str,
}

/// Published figures at 64 channels. The input size they were measured at is not stated.
pub const REFERENCE_COSTS: [ReferenceCost; 6] = [
    ReferenceCost { name: "SE", flops_m: 4.195, params: 512.0, params_text: "512" },
    ReferenceCost { name: "ECA", flops_m: 4.195, params: 3.0, params_text: "3" },
    ReferenceCost { name: "CBA", flops_m: 10.619, params: 1122.0, params_text: "1.122K" },
    ReferenceCost { name: "FA", flops_m: 38.864, params: 1625.0, params_text: "1.625K" },
    ReferenceCost { name: "SWRCA", flops_m: 2424.311, params: 41088.0, params_text: "41.088K" },
    ReferenceCost { name: "SHA", flops_m: 15.29, params: 5192.0, params_text: "5.192K" },
];

pub const SHA_MISMATCH_NOTE: &str = "convention mismatch: the allocated count is reduce 1x1 C->C/r (+bias) plus one \
     shared kx1 restore C/r->C (+bias); the published 5.192K cannot be reproduced from the stated layer shapes and \
     presumably counts a different layer or bias layout";

pub fn reference_for(module: CostModule) -> Option<ReferenceCost> {
    let name = match module {
        CostModule::Sha => "SHA",
        CostModule::Se => "SE",
        CostModule::Fa => "FA",
        _ => return None,
    };
    REFERENCE_COSTS.iter().copied().find(|r| r.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub module: CostModule,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    /// Allocated parameter elements.
    pub params: usize,
    /// Closed-form count where the module has one.
    pub analytic_params: Option<usize>,
    pub flops: u64,
    pub reference: Option<ReferenceCost>,
    pub note: Option<&'static str>,
}

impl CostReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "module\t{}", self.module);
        let in_c = if self.module == CostModule::Full { 3 } else { self.channels };
        let _ = writeln!(s, "input\t1x{in_c}x{}x{}", self.h, self.w);
        let _ = writeln!(s, "channels\t{}", self.channels);
        let _ = writeln!(s, "params\t{}", self.params);
        if let Some(a) = self.analytic_params {
            let _ = writeln!(s, "params_analytic\t{a}");
        }
        let _ = writeln!(s, "flops\t{}", self.flops);
        let _ = writeln!(s, "flops_m\t{:.3}", self.flops as f64 / 1e6);
        let _ = writeln!(s, "flop_convention\t{FLOP_CONVENTION}");
        if let Some(r) = self.reference {
            let _ = writeln!(s, "reference_params\t{}", r.params_text);
            let _ = writeln!(s, "reference_flops_m\t{}", r.flops_m);
        }
        if let Some(n) = self.note {
            let _ = writeln!(s, "note\t{n}");
        }
        s
    }
}

fn traced_flops(store: &ParamStore<f32>, shape: &[usize], f: impl FnOnce(&mut Tape<'_, f32>, crate::Var) -> Result<crate::Var>) -> Result<u64> {
    let mut tape = Tape::new(store);
    let x = tape.input(Tensor::from_fn(shape, |i| ((i % 97) as f32) / 97.0)?);
    f(&mut tape, x)?;
    Ok(tape.flops())
}

/// Builds `module` at `channels` and traces one forward pass at `h×w`.
///
/// For `full`, `channels` sets the shallow width of the full-size network
/// and the input is an RGB image.
pub fn count_cost(module: CostModule, channels: usize, h: usize, w: usize) -> Result<CostReport> {
    if channels == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument("channels and spatial size must be >= 1".into()));
    }
    let mut store = ParamStore::<f32>::new(0);
    let shape = [1, channels, h, w];
    let (analytic, flops) = match module {
        CostModule::Sha => {
            let cfg = ShaConfig::new(channels);
            let m = Sha::new(&mut ParamBuilder::new(&mut store, Init::Uniform), cfg)?;
            (Some(cfg.param_count()), traced_flops(&store, &shape, |t, x| m.forward(t, x))?)
        }
        CostModule::Se => {
            let m = Se::new(&mut ParamBuilder::new(&mut store, Init::Uniform), channels)?;
            (Some(m.param_count()), traced_flops(&store, &shape, |t, x| m.forward(t, x))?)
        }
        CostModule::Fa => {
            let m = Fa::new(&mut ParamBuilder::new(&mut store, Init::Uniform), channels)?;
            (Some(m.param_count()), traced_flops(&store, &shape, |t, x| m.forward(t, x))?)
        }
        CostModule::Mhab => {
            let cfg = BlockConfig::new(channels);
            cfg.validate()?;
            let m = Mhab::new(&mut ParamBuilder::new(&mut store, Init::Uniform), &cfg)?;
            (None, traced_flops(&store, &shape, |t, x| m.forward(t, x))?)
        }
        CostModule::Mhac => {
            let cfg = BlockConfig::new(channels);
            cfg.validate()?;
            let m = Mhac::new(&mut ParamBuilder::new(&mut store, Init::Uniform), &cfg)?;
            (None, traced_flops(&store, &shape, |t, x| m.forward(t, x))?)
        }
        CostModule::Full => {
            let cfg = ModelConfig {
                shallow_channels: channels,
                ..ModelConfig::full()
            };
            let net = HazeNet::new(&mut ParamBuilder::new(&mut store, Init::Uniform), cfg)?;
            let flops = traced_flops(&store, &[1, 3, h, w], |t, x| net.forward(t, x).map(|v| v.final_image))?;
            (None, flops)
        }
    };
    let reference = if channels == 64 { reference_for(module) } else { None };
    Ok(CostReport {
        module,
        channels,
        h,
        w,
        params: store.num_elements(),
        analytic_params: analytic,
        flops,
        reference,
        note: (module == CostModule::Sha).then_some(SHA_MISMATCH_NOTE),
    })
}
