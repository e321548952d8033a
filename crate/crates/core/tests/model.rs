mod common;

use common::*;
use hazenet::attention::{Sha, ShaConfig};
use hazenet::cost::{count_cost, CostModule};
use hazenet::io::Checkpoint;
use hazenet::training::{charbonnier, total_loss};
use hazenet::{HazeNet, Init, ModelConfig, ParamBuilder, ParamStore, Tape, Tensor};
use rand::Rng;

fn image_batch(seed: u64, n: usize, h: usize, w: usize) -> Tensor<f32> {
    random_tensor(&mut rng(seed), &[n, 3, h, w], 0.0, 1.0).cast()
}

#[test]
fn zero_init_is_identity() {
    for cfg in [ModelConfig::desk(), ModelConfig::tiny()] {
        let (net, store) = HazeNet::init::<f32>(cfg, 0, Init::Zeros).unwrap();
        for (h, w) in [(64, 64), (64, 96)] {
            let x = image_batch(h as u64 + w as u64, 1, h, w);
            let out = net.run(&store, &x).unwrap();
            assert!(out.pseudo.max_abs_diff(&x).unwrap() <= 1e-6);
            assert!(out.final_image.max_abs_diff(&x).unwrap() <= 1e-6);
        }
    }
}

#[test]
fn zero_init_loss_is_twice_input_loss() {
    let (net, store) = HazeNet::init::<f32>(ModelConfig::tiny(), 0, Init::Zeros).unwrap();
    let x = image_batch(1, 2, 16, 16);
    let gt = image_batch(2, 2, 16, 16);
    let out = net.run(&store, &x).unwrap();
    let loss = total_loss(&out.pseudo, &out.final_image, &gt, 1e-3).unwrap();
    let base = charbonnier(&x, &gt, 1e-3).unwrap();
    assert!((loss - 2.0 * base).abs() < 1e-6, "{loss} vs {}", 2.0 * base);
}

#[test]
fn forward_is_deterministic_per_seed() {
    let x = image_batch(3, 1, 16, 24);
    let run = |seed| {
        let (net, store) = HazeNet::init::<f32>(ModelConfig::tiny(), seed, Init::Uniform).unwrap();
        net.run(&store, &x).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a.final_image, b.final_image);
    assert_eq!(a.density.as_ref().unwrap().map, b.density.as_ref().unwrap().map);
    assert_ne!(a.final_image, c.final_image);
}

#[test]
fn both_stages_receive_gradient() {
    let (net, store) = HazeNet::init::<f64>(ModelConfig::tiny(), 7, Init::Uniform).unwrap();
    let mut tape = Tape::new(&store);
    let x = tape.input(random_tensor(&mut rng(8), &[1, 3, 16, 16], 0.0, 1.0));
    let gt = tape.input(random_tensor(&mut rng(9), &[1, 3, 16, 16], 0.0, 1.0));
    let vars = net.forward(&mut tape, x).unwrap();
    let ls = tape.charbonnier(vars.pseudo, gt, 1e-3).unwrap();
    let ld = tape.charbonnier(vars.final_image, gt, 1e-3).unwrap();
    let loss = tape.add(ls, ld).unwrap();
    let grads = tape.backward(loss).unwrap();
    let nonzero = |prefix: &str| {
        grads.params().any(|(id, g)| {
            store.get(id).name.starts_with(prefix) && g.is_some_and(|g| g.data().iter().any(|&v| v != 0.0))
        })
    };
    for prefix in ["shallow.", "deep.", "density."] {
        assert!(nonzero(prefix), "no gradient reached {prefix}*");
    }
    let missing: Vec<_> = grads
        .params()
        .filter(|(_, g)| g.is_none())
        .map(|(id, _)| store.get(id).name.clone())
        .collect();
    assert!(missing.is_empty(), "disconnected parameters: {missing:?}");
}

#[test]
fn outputs_have_expected_ranges_and_shapes() {
    let (net, store) = HazeNet::init::<f32>(ModelConfig::tiny(), 2, Init::Uniform).unwrap();
    for (h, w) in [(16, 16), (32, 32), (16, 40), (48, 20), (64, 96)] {
        let out = net.run(&store, &image_batch(h as u64, 1, h, w)).unwrap();
        let m = out.density.unwrap().map;
        assert_eq!(m.shape(), &[1, 1, h, w]);
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out.final_image.shape(), &[1, 3, h, w]);
    }
}

#[test]
fn density_path_changes_the_output() {
    let x = image_batch(4, 1, 16, 16);
    let full = ModelConfig::tiny();
    let (net, store) = HazeNet::init::<f32>(full, 1, Init::Uniform).unwrap();
    let without = ModelConfig { use_density: false, ..full };
    let (net2, mut store2) = HazeNet::init::<f32>(without, 1, Init::Zeros).unwrap();
    // share every common weight so the density map is the only difference
    for (id, p) in store.iter() {
        if let Some(dst) = store2.id(&p.name) {
            *store2.tensor_mut(dst) = store.tensor(id).clone();
        }
    }
    let a = net.run(&store, &x).unwrap();
    let b = net2.run(&store2, &x).unwrap();
    assert!(b.density.is_none());
    assert_eq!(a.pseudo, b.pseudo);
    assert_ne!(a.final_image, b.final_image);
}

#[test]
fn shallow_only_model_has_no_deep_output() {
    let cfg = ModelConfig {
        use_deep: false,
        use_density: false,
        ..ModelConfig::tiny()
    };
    let (net, store) = HazeNet::init::<f32>(cfg, 1, Init::Uniform).unwrap();
    let out = net.run(&store, &image_batch(5, 1, 16, 16)).unwrap();
    assert_eq!(out.pseudo, out.final_image);
    assert!(out.density.is_none());
}

#[test]
fn cost_params_match_checkpoint_elements() {
    for module in CostModule::ALL {
        let c = if module == CostModule::Full { 8 } else { 16 };
        let report = count_cost(module, c, 8, 8).unwrap();
        if let Some(a) = report.analytic_params {
            assert_eq!(a, report.params, "{module}");
        }
        if module == CostModule::Full {
            let cfg = ModelConfig {
                shallow_channels: 8,
                ..ModelConfig::full()
            };
            let (net, store) = HazeNet::init::<f32>(cfg, 0, Init::Uniform).unwrap();
            let mut buf = Vec::new();
            net.checkpoint(&store).write(&mut buf).unwrap();
            let ckpt = Checkpoint::read(&mut buf.as_slice()).unwrap();
            assert_eq!(ckpt.num_elements(), report.params);
        }
    }
}

#[test]
fn sha_zero_weights_halve_the_input() {
    let mut store = ParamStore::<f64>::new(0);
    let sha = Sha::new(&mut ParamBuilder::new(&mut store, Init::Zeros), ShaConfig::new(8)).unwrap();
    let x = random_tensor(&mut rng(1), &[2, 8, 5, 7], -1.0, 1.0);
    let (out, state) = sha.apply(&store, &x).unwrap();
    assert!(state.attn.data().iter().all(|&a| a == 0.5));
    assert_eq!(out, x.map(|v| 0.5 * v));
}

#[test]
fn sha_attention_transposes_with_input() {
    let mut store = ParamStore::<f64>::new(4);
    let cfg = ShaConfig {
        enable_shuffle: false,
        ..ShaConfig::new(8)
    };
    let sha = Sha::new(&mut ParamBuilder::new(&mut store, Init::Uniform), cfg).unwrap();
    let (h, w) = (5, 7);
    let x = random_tensor(&mut rng(2), &[1, 8, h, w], -1.0, 1.0);
    let xt = Tensor::from_fn(&[1, 8, w, h], |i| {
        let (c, rest) = (i / (w * h), i % (w * h));
        x.data()[c * h * w + (rest % h) * w + rest / h]
    })
    .unwrap();
    let (_, a) = sha.apply(&store, &x).unwrap();
    let (_, at) = sha.apply(&store, &xt).unwrap();
    for c in 0..8 {
        for y in 0..h {
            for xx in 0..w {
                let p = a.attn.data()[c * h * w + y * w + xx];
                let q = at.attn.data()[c * h * w + xx * h + y];
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sha_ablation_configs_are_distinct() {
    let x = random_tensor(&mut rng(3), &[1, 8, 6, 5], -1.0, 1.0);
    let configs = [
        ShaConfig { enable_maxpool: false, enable_shuffle: false, ..ShaConfig::new(8) },
        ShaConfig { enable_shuffle: false, ..ShaConfig::new(8) },
        ShaConfig::new(8),
        ShaConfig { restore_kernel: 1, ..ShaConfig::new(8) },
    ];
    let outs: Vec<_> = configs
        .iter()
        .map(|cfg| {
            let mut store = ParamStore::<f64>::new(9);
            let sha = Sha::new(&mut ParamBuilder::new(&mut store, Init::Uniform), *cfg).unwrap();
            sha.apply(&store, &x).unwrap().0
        })
        .collect();
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            assert_ne!(outs[i], outs[j], "configs {i} and {j} agree");
        }
    }
}

#[test]
fn spatially_constant_input_gives_constant_attention() {
    let mut store = ParamStore::<f64>::new(6);
    let sha = Sha::new(&mut ParamBuilder::new(&mut store, Init::Uniform), ShaConfig::new(8)).unwrap();
    let mut r = rng(4);
    let levels: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let x = Tensor::from_fn(&[1, 8, 4, 6], |i| levels[i / 24]).unwrap();
    let (_, state) = sha.apply(&store, &x).unwrap();
    for plane in state.attn.data().chunks(24) {
        assert!(plane.iter().all(|&v| (v - plane[0]).abs() < 1e-12));
    }
}
