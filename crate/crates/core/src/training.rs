//! Objective, optimizer, learning-rate schedule, and the training loop.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::hazegen::{transform, AugmentOp, DatasetItem};
use crate::metrics::psnr;
use crate::network::{HazeNet, ModelConfig};
use crate::params::{Init, ParamStore};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Mean of `sqrt((x − y)² + eps²)` over every element.
pub fn charbonnier<T: Real>(x: &Tensor<T>, y: &Tensor<T>, eps: f64) -> Result<f64> {
    let mut tape = Tape::<T>::detached();
    let (a, b) = (tape.input(x.clone()), tape.input(y.clone()));
    let l = tape.charbonnier(a, b, eps)?;
    Ok(tape.value(l).data()[0].as_f64())
}

/// Both stages are supervised by the same ground truth.
pub fn total_loss<T: Real>(pseudo: &Tensor<T>, final_image: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<f64> {
    Ok(charbonnier(pseudo, gt, eps)? + charbonnier(final_image, gt, eps)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr_base: f64,
    pub lr_max: f64,
    pub momentum_base: f64,
    pub momentum_max: f64,
    pub cycle_half_steps: usize,
    pub eps_charbonnier: f64,
    pub seed: u64,
    /// Metric log cadence; the last step is always logged.
    pub log_every: usize,
    /// Intermediate checkpoint cadence; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Random rot90/rot180/rot270/hflip per sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            patch: 64,
            lr_base: 2e-4,
            lr_max: 3e-4,
            momentum_base: 0.8,
            momentum_max: 0.9,
            cycle_half_steps: 2000,
            eps_charbonnier: 1e-3,
            seed: 0,
            log_every: 50,
            checkpoint_every: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 || self.batch == 0 || self.cycle_half_steps == 0 || self.log_every == 0 {
            return bad("steps, batch, cycle_half_steps and log_every must be >= 1".into());
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return bad(format!("patch {} must be a positive multiple of 4", self.patch));
        }
        if !(self.lr_base > 0.0 && self.lr_base <= self.lr_max) {
            return bad(format!("need 0 < lr_base <= lr_max, got {} and {}", self.lr_base, self.lr_max));
        }
        if !(0.0 < self.momentum_base && self.momentum_base <= self.momentum_max && self.momentum_max < 1.0) {
            return bad(format!(
                "need 0 < momentum_base <= momentum_max < 1, got {} and {}",
                self.momentum_base, self.momentum_max
            ));
        }
        if self.eps_charbonnier.is_nan() || self.eps_charbonnier <= 0.0 {
            return bad(format!("eps_charbonnier must be > 0, got {}", self.eps_charbonnier));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("patch", self.patch.to_string()),
            ("lr_base", self.lr_base.to_string()),
            ("lr_max", self.lr_max.to_string()),
            ("momentum_base", self.momentum_base.to_string()),
            ("momentum_max", self.momentum_max.to_string()),
            ("cycle_half_steps", self.cycle_half_steps.to_string()),
            ("eps_charbonnier", self.eps_charbonnier.to_string()),
            ("seed", self.seed.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("augment", self.augment.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` has invalid value `{v}`")))
        }
        match key {
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "lr_base" => self.lr_base = parse(key, value)?,
            "lr_max" => self.lr_max = parse(key, value)?,
            "momentum_base" => self.momentum_base = parse(key, value)?,
            "momentum_max" => self.momentum_max = parse(key, value)?,
            "cycle_half_steps" => self.cycle_half_steps = parse(key, value)?,
            "eps_charbonnier" => self.eps_charbonnier = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses a combined training file: training keys, model keys, and an
/// optional `model=full|desk|tiny` preset (applied before other model keys).
/// The model defaults to the desk preset.
pub fn parse_run_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let pairs = crate::kv::parse(text)?;
    let preset = pairs.iter().find(|(k, _)| k == "model").map(|(_, v)| v.as_str());
    let mut model = ModelConfig::preset(preset.unwrap_or("desk"))?;
    let mut train = TrainConfig::default();
    for (k, v) in pairs.iter().filter(|(k, _)| k != "model") {
        if !train.set(k, v)? && !model.set(k, v)? {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

/// Triangular cyclic learning rate with momentum in anti-phase.
///
/// Returns `(lr, beta1)`: `lr` rises from `lr_base` to `lr_max` over
/// `cycle_half_steps` and falls back, while `beta1` falls from
/// `momentum_max` to `momentum_base` and rises back.
pub fn cyclic_lr(step: usize, cfg: &TrainConfig) -> (f64, f64) {
    let half = cfg.cycle_half_steps.max(1) as f64;
    let cycle = (1.0 + step as f64 / (2.0 * half)).floor();
    let x = (step as f64 / half - 2.0 * cycle + 1.0).abs();
    let scale = (1.0 - x).max(0.0);
    let lr = cfg.lr_base + (cfg.lr_max - cfg.lr_base) * scale;
    let beta1 = cfg.momentum_max - (cfg.momentum_max - cfg.momentum_base) * scale;
    (lr, beta1)
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Result<Self> {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            m: zeros()?,
            v: zeros()?,
            step: 0,
        })
    }
}

/// One Adam update using the gradients last written by [`ParamStore::set_grads`].
///
/// Bias correction uses the current `beta1`, so a time-varying momentum
/// schedule is handled the same way as a fixed one.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, state: &mut OptimizerState<T>, lr: f64, beta1: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    store.consume_grads()?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(ADAM_BETA2));
    let (one, eps) = (T::one(), T::from_f64(ADAM_EPS));
    let step_size = T::from_f64(lr / bc1);
    let bc2_sqrt = T::from_f64(bc2.sqrt());
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        for (((w, m), v), &g) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g)
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *w = *w - step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// PSNR of `D(x)` on the training batch, before the update.
    pub psnr: f64,
}

pub const LOG_HEADER: &str = "step\tlr\tloss\tpsnr";

impl LogRow {
    pub fn to_tsv(&self) -> String {
        format!("{}\t{:e}\t{:e}\t{:e}", self.step, self.lr, self.loss, self.psnr)
    }
}

/// Where the loop writes its artifacts. Every field is optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: HazeNet,
    pub store: ParamStore<f32>,
    pub log: Vec<LogRow>,
    /// Total loss over the whole (unaugmented) training set after the last step.
    pub final_loss: f64,
    /// Mean PSNR of `D(x)` over the training set after the last step.
    pub final_psnr: f64,
}

fn crop_chw(t: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Tensor<f32> {
    let (c, _, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let d = t.data();
    let plane = t.shape()[1] * w;
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = ch * plane + y * w + x0;
            out.extend_from_slice(&d[row..row + size]);
        }
    }
    Tensor::from_parts(vec![c, size, size], out)
}

fn sample_batch(
    items: &[DatasetItem],
    cfg: &TrainConfig,
    rng: &mut Xoshiro256PlusPlus,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut hazy = Vec::with_capacity(cfg.batch);
    let mut clean = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let item = &items[rng.random_range(0..items.len())];
        let (h, w) = (item.hazy.shape()[1], item.hazy.shape()[2]);
        let y0 = rng.random_range(0..=h - cfg.patch);
        let x0 = rng.random_range(0..=w - cfg.patch);
        let op = if cfg.augment {
            AugmentOp::ALL[rng.random_range(0..AugmentOp::ALL.len())]
        } else {
            AugmentOp::None
        };
        hazy.push(transform(&crop_chw(&item.hazy, y0, x0, cfg.patch), op)?);
        clean.push(transform(&crop_chw(&item.clean, y0, x0, cfg.patch), op)?);
    }
    Ok((Tensor::stack(&hazy)?, Tensor::stack(&clean)?))
}

/// Loss and clamped-output PSNR of the model over full, unaugmented images.
pub fn evaluate_set(net: &HazeNet, store: &ParamStore<f32>, items: &[DatasetItem], eps: f64) -> Result<(f64, f64)> {
    let (mut loss, mut db) = (0.0, 0.0);
    for item in items {
        let x = Tensor::stack(std::slice::from_ref(&item.hazy))?;
        let gt = Tensor::stack(std::slice::from_ref(&item.clean))?;
        let out = net.run(store, &x)?;
        loss += total_loss(&out.pseudo, &out.final_image, &gt, eps)?;
        db += psnr(&out.final_image.map(|v| v.clamp(0.0, 1.0)), &gt, 1.0)?;
    }
    Ok((loss / items.len() as f64, db / items.len() as f64))
}

/// Seeded, single-threaded training run on in-memory data.
pub fn train_loop(
    model: ModelConfig,
    items: &[DatasetItem],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainResult> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::MissingData("training set is empty".into()));
    }
    for item in items {
        let (h, w) = (item.hazy.shape()[1], item.hazy.shape()[2]);
        if cfg.patch > h.min(w) {
            return Err(Error::Config(format!(
                "patch {} larger than training image {} ({h}x{w})",
                cfg.patch, item.id
            )));
        }
    }
    let (net, mut store) = HazeNet::init::<f32>(model, cfg.seed, Init::Uniform)?;
    let mut opt = OptimizerState::new(&store)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut log = Vec::new();
    let mut log_file = match &outputs.log {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    for step in 0..cfg.steps {
        let (x, gt) = sample_batch(items, cfg, &mut rng)?;
        let mut tape = Tape::new(&store);
        let xv = tape.input(x);
        let gv = tape.input(gt.clone());
        let vars = net.forward(&mut tape, xv)?;
        let ls = tape.charbonnier(vars.pseudo, gv, cfg.eps_charbonnier)?;
        let ld = tape.charbonnier(vars.final_image, gv, cfg.eps_charbonnier)?;
        let loss = tape.add(ls, ld)?;
        let loss_value = tape.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            let (node, op) = tape.first_nonfinite().unwrap_or((loss.index(), "loss"));
            return Err(Error::NonFinite { op, node });
        }
        let (lr, beta1) = cyclic_lr(step, cfg);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let row = LogRow {
                step,
                lr,
                loss: loss_value,
                psnr: psnr(tape.value(vars.final_image), &gt, 1.0)?,
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.to_tsv())?;
            }
            log.push(row);
        }
        let grads = tape.backward(loss)?;
        drop(tape);
        store.set_grads(&grads);
        adam_step(&mut store, &mut opt, lr, beta1)?;
        if let Some(path) = &outputs.checkpoint {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
                net.checkpoint(&store).save(path)?;
            }
        }
    }
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    if let Some(path) = &outputs.checkpoint {
        net.checkpoint(&store).save(path)?;
    }
    let (final_loss, final_psnr) = evaluate_set(&net, &store, items, cfg.eps_charbonnier)?;
    Ok(TrainResult {
        net,
        store,
        log,
        final_loss,
        final_psnr,
    })
}
