//! Finite-difference verification of the reverse-mode gradients.
//!
//! Every case runs in double precision. The scalar probed is
//! `mean(f(inputs) ⊙ R)` for a fixed random `R`, so no output element can
//! cancel another. A sampled subset of every input and parameter tensor is
//! perturbed by `±STEP` and the central difference is compared with the
//! analytic gradient using `|a − n| / max(|a|, |n|, FLOOR)`; an error below
//! `TOLERANCE` means agreement within 1e-3 relative with a 1e-5 absolute floor.
//!
//! ReLU6 and max pooling are only piecewise smooth. When a perturbation
//! crosses a kink the two one-sided differences disagree with each other;
//! such probes are counted as skipped instead of compared, and a case fails
//! if more than `MAX_SKIPPED_FRACTION` of its probes had to be skipped.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::attention::{Fa, Se, Sha, ShaConfig};
use crate::autograd::{Tape, Var};
use crate::blocks::{Aff, BlockConfig, Cot, Mhab, Mhac};
use crate::error::{Error, Result};
use crate::network::{DensityModule, HazeNet, ModelConfig};
use crate::ops::{Activation, PaddingSpec, PoolAxis, PoolKind};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const FLOOR: f64 = 1e-2;
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;
/// Elements probed per tensor.
const SAMPLES: usize = 6;

/// Outcome of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    /// Number of (tensor, element) probes compared.
    pub probes: usize,
    /// Probes straddling a non-differentiable point.
    pub skipped: usize,
    /// Where the worst error occurred.
    pub worst: String,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE && (self.skipped as f64) <= MAX_SKIPPED_FRACTION * (self.probes + self.skipped) as f64
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

type Forward<'a> = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var> + 'a;

struct Case<'a> {
    store: ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    f: Box<Forward<'a>>,
}

fn probe_loss(store: &ParamStore<f64>, inputs: &[Tensor<f64>], weights: &Tensor<f64>, f: &Forward<'_>) -> Result<f64> {
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let r = tape.input(weights.clone());
    let prod = tape.mul(out, r)?;
    let loss = tape.mean(prod)?;
    Ok(tape.value(loss).data()[0])
}

fn pick(rng: &mut Xoshiro256PlusPlus, len: usize) -> Vec<usize> {
    if len <= SAMPLES {
        return (0..len).collect();
    }
    let mut picked: Vec<usize> = Vec::with_capacity(SAMPLES);
    while picked.len() < SAMPLES {
        let i = rng.random_range(0..len);
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

fn run(name: &'static str, case: Case<'_>, seed: u64) -> Result<GradCheckResult> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x9e37_79b9);
    let Case { store, inputs, f } = case;

    let mut tape = Tape::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let weights = Tensor::from_fn(tape.shape(out), |_| rng.random_range(-1.0..1.0))?;
    let r = tape.input(weights.clone());
    let prod = tape.mul(out, r)?;
    let loss = tape.mean(prod)?;
    let center = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    drop(tape);

    let mut result = GradCheckResult {
        name,
        max_rel_err: 0.0,
        probes: 0,
        skipped: 0,
        worst: String::new(),
    };
    let mut record = |what: String, a: f64, up: f64, down: f64| {
        let (forward, backward) = ((up - center) / STEP, (center - down) / STEP);
        if rel_err(forward, backward) > TOLERANCE {
            result.skipped += 1;
            return;
        }
        let n = (up - down) / (2.0 * STEP);
        let e = rel_err(a, n);
        result.probes += 1;
        if e > result.max_rel_err || result.worst.is_empty() {
            result.max_rel_err = result.max_rel_err.max(e);
            result.worst = format!("{what}: analytic {a:.6e}, numeric {n:.6e}");
        }
    };

    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).cloned();
        for i in pick(&mut rng, inputs[k].len()) {
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let mut shifted = inputs.clone();
            shifted[k].data_mut()[i] += STEP;
            let up = probe_loss(&store, &shifted, &weights, &*f)?;
            shifted[k].data_mut()[i] -= 2.0 * STEP;
            let down = probe_loss(&store, &shifted, &weights, &*f)?;
            record(format!("input {k}[{i}]"), a, up, down);
        }
    }

    let mut probe_store = store.clone();
    let analytic: Vec<(ParamId, Option<Tensor<f64>>)> = grads.params().map(|(id, g)| (id, g.cloned())).collect();
    for id in store.sorted_ids() {
        let g = analytic.iter().find(|(pid, _)| *pid == id).and_then(|(_, g)| g.clone());
        let base = store.tensor(id).clone();
        for i in pick(&mut rng, base.len()) {
            let a = g.as_ref().map_or(0.0, |g| g.data()[i]);
            probe_store.tensor_mut(id).data_mut()[i] = base.data()[i] + STEP;
            let up = probe_loss(&probe_store, &inputs, &weights, &*f)?;
            probe_store.tensor_mut(id).data_mut()[i] = base.data()[i] - STEP;
            let down = probe_loss(&probe_store, &inputs, &weights, &*f)?;
            probe_store.tensor_mut(id).data_mut()[i] = base.data()[i];
            record(format!("{}[{i}]", store.get(id).name), a, up, down);
        }
    }
    Ok(result)
}

/// Names accepted by [`run_case`], primitives first.
pub const CASES: &[&str] = &[
    "add", "sub", "mul_broadcast", "affine", "relu", "relu6", "elu", "tanh", "sigmoid", "conv2d", "conv2d_grouped",
    "conv2d_reflect", "conv2d_column", "reflect_pad", "pool_avg_h", "pool_avg_v", "pool_max_h", "pool_max_v",
    "channel_shuffle", "instance_norm", "upsample", "softmax", "unfold", "sum_axis", "concat", "narrow", "reshape",
    "mean", "charbonnier", "sha", "se", "fa", "mhab", "cot", "aff", "mhac", "density", "model",
];

/// Module-level cases, grouped for `--module`.
pub const MODULE_CASES: &[&str] = &["sha", "se", "fa", "mhab", "cot", "aff", "mhac", "density", "model"];

fn random(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unary<'a>(
    rng: &mut Xoshiro256PlusPlus,
    shape: &[usize],
    f: impl Fn(&mut Tape<'_, f64>, Var) -> Result<Var> + 'a,
) -> Result<Case<'a>> {
    Ok(Case {
        store: ParamStore::new(0),
        inputs: vec![random(rng, shape)?],
        f: Box::new(move |t, v| f(t, v[0])),
    })
}

fn module<'a, M: 'a>(
    rng: &mut Xoshiro256PlusPlus,
    shape: &[usize],
    build: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>,
    fwd: impl Fn(&M, &mut Tape<'_, f64>, Var) -> Result<Var> + 'a,
) -> Result<Case<'a>> {
    let mut store = ParamStore::new(rng.random());
    let m = build(&mut ParamBuilder::new(&mut store, Init::Uniform))?;
    Ok(Case {
        store,
        inputs: vec![random(rng, shape)?],
        f: Box::new(move |t, v| fwd(&m, t, v[0])),
    })
}

fn build_case(name: &str, rng: &mut Xoshiro256PlusPlus) -> Result<Case<'static>> {
    let sq = [2, 3, 5, 4];
    match name {
        "add" | "sub" => {
            let sub = name == "sub";
            Ok(Case {
                store: ParamStore::new(0),
                inputs: vec![random(rng, &sq)?, random(rng, &[1, 3, 1, 4])?],
                f: Box::new(move |t, v| if sub { t.sub(v[0], v[1]) } else { t.add(v[0], v[1]) }),
            })
        }
        "mul_broadcast" => Ok(Case {
            store: ParamStore::new(0),
            inputs: vec![random(rng, &[2, 3, 5, 1])?, random(rng, &[2, 3, 1, 4])?],
            f: Box::new(|t, v| t.mul(v[0], v[1])),
        }),
        "affine" => unary(rng, &sq, |t, x| t.affine(x, 2.5, -0.5)),
        "relu" | "relu6" | "elu" | "tanh" | "sigmoid" => {
            let kind: Activation = name.parse()?;
            // Spread inputs so ReLU6 sees both kinks, staying clear of them.
            let mut case = unary(rng, &sq, move |t, x| t.activation(x, kind))?;
            for v in case.inputs[0].data_mut() {
                *v *= 8.0;
                if v.abs() < 0.05 || (v.abs() - 6.0).abs() < 0.05 {
                    *v += 0.2;
                }
            }
            Ok(case)
        }
        "conv2d" | "conv2d_grouped" | "conv2d_reflect" | "conv2d_column" => {
            let (cin, cout, k, groups, pad, stride) = match name {
                "conv2d" => (3, 4, 3, 1, PaddingSpec::zero(1), 2),
                "conv2d_grouped" => (4, 4, 3, 2, PaddingSpec::zero(1), 1),
                "conv2d_reflect" => (3, 2, 3, 1, PaddingSpec::reflect(1), 1),
                _ => (4, 3, 3, 1, PaddingSpec::zero(1), 1),
            };
            let column = name == "conv2d_column";
            let (kh, kw) = if column { (k, 1) } else { (k, k) };
            Ok(Case {
                store: ParamStore::new(0),
                inputs: vec![
                    random(rng, &[2, cin, 5, 6])?,
                    random(rng, &[cout, cin / groups, kh, kw])?,
                    random(rng, &[cout])?,
                ],
                f: Box::new(move |t, v| {
                    if column {
                        let geom = crate::ops::ConvGeom {
                            stride: 1,
                            pad_h: 1,
                            pad_w: 0,
                            groups: 1,
                        };
                        t.conv(v[0], v[1], Some(v[2]), geom)
                    } else {
                        t.conv2d(v[0], v[1], Some(v[2]), stride, pad, groups)
                    }
                }),
            })
        }
        "reflect_pad" => unary(rng, &sq, |t, x| t.reflect_pad(x, 2)),
        "pool_avg_h" => unary(rng, &sq, |t, x| t.directional_pool(x, PoolAxis::Horizontal, PoolKind::Avg)),
        "pool_avg_v" => unary(rng, &sq, |t, x| t.directional_pool(x, PoolAxis::Vertical, PoolKind::Avg)),
        "pool_max_h" => unary(rng, &sq, |t, x| t.directional_pool(x, PoolAxis::Horizontal, PoolKind::Max)),
        "pool_max_v" => unary(rng, &sq, |t, x| t.directional_pool(x, PoolAxis::Vertical, PoolKind::Max)),
        "channel_shuffle" => unary(rng, &[2, 6, 3, 2], |t, x| t.channel_shuffle(x, 3)),
        "instance_norm" => unary(rng, &sq, |t, x| t.instance_norm(x, 1e-5)),
        "upsample" => unary(rng, &sq, |t, x| t.upsample(x, 2)),
        "softmax" => unary(rng, &[2, 3, 4, 2], |t, x| t.softmax(x, 2)),
        "unfold" => unary(rng, &sq, |t, x| t.unfold(x, 3)),
        "sum_axis" => unary(rng, &sq, |t, x| t.sum_axis(x, 2)),
        "concat" => Ok(Case {
            store: ParamStore::new(0),
            inputs: vec![random(rng, &sq)?, random(rng, &[2, 2, 5, 4])?],
            f: Box::new(|t, v| t.concat(&[v[0], v[1]], 1)),
        }),
        "narrow" => unary(rng, &sq, |t, x| t.narrow(x, 2, 1, 3)),
        "reshape" => unary(rng, &sq, |t, x| t.reshape(x, &[6, 20])),
        "mean" => unary(rng, &sq, |t, x| t.mean(x)),
        "charbonnier" => Ok(Case {
            store: ParamStore::new(0),
            inputs: vec![random(rng, &sq)?, random(rng, &sq)?],
            f: Box::new(|t, v| t.charbonnier(v[0], v[1], 1e-3)),
        }),
        "sha" => module(rng, &[2, 8, 5, 6], |b| Sha::new(b, ShaConfig::new(8)), |m, t, x| m.forward(t, x)),
        "se" => module(rng, &[2, 16, 4, 3], |b| Se::new(b, 16), |m, t, x| m.forward(t, x)),
        "fa" => module(rng, &[2, 8, 4, 3], |b| Fa::new(b, 8), |m, t, x| m.forward(t, x)),
        "mhab" => module(rng, &[1, 8, 6, 5], |b| Mhab::new(b, &BlockConfig::new(8)), |m, t, x| m.forward(t, x)),
        "cot" => module(rng, &[1, 8, 6, 5], |b| Cot::new(b, &BlockConfig::new(8)), |m, t, x| m.forward(t, x)),
        "mhac" => module(rng, &[1, 8, 6, 5], |b| Mhac::new(b, &BlockConfig::new(8)), |m, t, x| m.forward(t, x)),
        "aff" => {
            let mut store = ParamStore::new(rng.random());
            let aff = Aff::new(&mut ParamBuilder::new(&mut store, Init::Uniform))?;
            let theta = store.tensor_mut(aff.theta);
            theta.data_mut()[0] = 0.3;
            Ok(Case {
                store,
                inputs: vec![random(rng, &sq)?, random(rng, &sq)?],
                f: Box::new(move |t, v| aff.forward(t, v[0], v[1])),
            })
        }
        "density" => {
            let cfg = ModelConfig::tiny();
            let mut store = ParamStore::new(rng.random());
            let m = DensityModule::new(&mut ParamBuilder::new(&mut store, Init::Uniform), &cfg)?;
            Ok(Case {
                store,
                inputs: vec![random(rng, &[1, 3, 6, 5])?, random(rng, &[1, 3, 6, 5])?],
                f: Box::new(move |t, v| m.forward(t, v[0], v[1])),
            })
        }
        "model" => {
            let mut store = ParamStore::new(rng.random());
            let net = HazeNet::new(&mut ParamBuilder::new(&mut store, Init::Uniform), ModelConfig::tiny())?;
            let x = Tensor::from_fn(&[1, 3, 16, 16], |_| rng.random_range(0.0..1.0))?;
            Ok(Case {
                store,
                inputs: vec![x],
                f: Box::new(move |t, v| {
                    let out = net.forward(t, v[0])?;
                    // Probe both supervised outputs and the density map.
                    let m = out.density.ok_or_else(|| Error::Config("density disabled".into()))?;
                    let joint = t.concat(&[out.pseudo, out.final_image, m], 1)?;
                    Ok(joint)
                }),
            })
        }
        other => Err(Error::InvalidArgument(format!("unknown gradcheck case `{other}`"))),
    }
}

pub fn run_case(name: &str, seed: u64) -> Result<GradCheckResult> {
    let static_name = CASES
        .iter()
        .copied()
        .find(|c| *c == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown gradcheck case `{name}`")))?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let case = build_case(name, &mut rng)?;
    run(static_name, case, seed)
}

/// Runs every case, or only `filter` when given.
pub fn run_suite(filter: Option<&str>, seed: u64) -> Result<Vec<GradCheckResult>> {
    match filter {
        Some(name) => Ok(vec![run_case(name, seed)?]),
        None => CASES.iter().map(|c| run_case(c, seed)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(1e-6, 2e-6) - 1e-4).abs() < 1e-12);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn primitive_cases_pass() {
        for name in ["add", "mul_broadcast", "conv2d", "pool_max_v", "softmax"] {
            let r = run_case(name, 3).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.probes > 0);
        }
        assert!(run_case("nope", 0).is_err());
    }
}
