//! Finite-difference cases shared by the gradient tests and the
//! acceptance run. Each case returns the worst relative error over the
//! probed parameters and inputs.

use cycleisp::gradcheck::{check_input, check_params, project, random_projection, CheckOptions};
use cycleisp::models::{BranchConfig, DenoiseMode, Denoiser, DenoiserConfig, Rgb2Raw};
use cycleisp::nn::{BlockSpec, ChannelAttention, Dab, Grads, HasParams, ParamStore, Rrg, SpatialAttention};
use cycleisp::objectives::{loss_r2s, loss_r2s_with_grad, loss_s2r, loss_s2r_with_grad, DEFAULT_EPSILON};
use cycleisp::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    ChannelAttention,
    SpatialAttention,
    Dab,
    Rrg,
    Rgb2RawHead,
    DenoiserHeadRaw,
    DenoiserHeadSrgb,
    LossS2r,
    LossR2s,
}

#[allow(dead_code)]
pub const CASES: [Case; 9] = [
    Case::ChannelAttention,
    Case::SpatialAttention,
    Case::Dab,
    Case::Rrg,
    Case::Rgb2RawHead,
    Case::DenoiserHeadRaw,
    Case::DenoiserHeadSrgb,
    Case::LossS2r,
    Case::LossR2s,
];

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

fn random_input(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// Block check: all parameters and the input, against a random projection.
fn block_case<B>(
    rng: &mut ChaCha8Rng,
    build: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> B,
    shape: (usize, usize, usize),
    fwd: impl Fn(&B, &ParamStore, &Tensor) -> Tensor,
    bwd: impl Fn(&B, &ParamStore, &Tensor, &Tensor, &mut Grads) -> Tensor,
    opts: CheckOptions,
) -> f64 {
    let mut store = ParamStore::new();
    let block = build(&mut store, rng);
    randomize(&mut store, rng, 0.3);
    let x = random_input(shape.0, shape.1, shape.2, rng);
    let w = random_projection(x.shape(), rng);
    let mut g = Grads::zeros_like(&store);
    let dx = bwd(&block, &store, &x, &w, &mut g);
    let rp = check_params(&mut store, &g, "", |s| project(&fwd(&block, s, &x), &w), opts, rng);
    let ri = check_input(&x, &dx, |xi| project(&fwd(&block, &store, xi), &w), opts, rng);
    rp.max_rel_error.max(ri.max_rel_error)
}

pub fn run_case(case: Case, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 * (case as u64 + 1) + seed);
    let opts = CheckOptions::default();
    let spec = BlockSpec { channels: 8, reduction: 4, sa_kernel: 3 };
    match case {
        Case::ChannelAttention => block_case(
            &mut rng,
            |s, r| ChannelAttention::new(s, "ca", 8, 4, r).unwrap(),
            (8, 5, 6),
            |b, s, x| b.forward(s, x).unwrap().0,
            |b, s, x, w, g| {
                let (_, c) = b.forward(s, x).unwrap();
                b.backward(s, &c, w, g)
            },
            opts,
        ),
        Case::SpatialAttention => block_case(
            &mut rng,
            |s, r| SpatialAttention::new(s, "sa", 3, r),
            (6, 7, 5),
            |b, s, x| b.forward(s, x).unwrap().0,
            |b, s, x, w, g| {
                let (_, c) = b.forward(s, x).unwrap();
                b.backward(s, &c, w, g)
            },
            opts,
        ),
        Case::Dab => block_case(
            &mut rng,
            |s, r| Dab::new(s, "dab", spec, r).unwrap(),
            (8, 6, 6),
            |b, s, x| b.forward(s, x).unwrap().0,
            |b, s, x, w, g| {
                let (_, c) = b.forward(s, x).unwrap();
                b.backward(s, &c, w, g)
            },
            opts,
        ),
        Case::Rrg => block_case(
            &mut rng,
            |s, r| Rrg::new(s, "rrg", spec, 2, r).unwrap(),
            (8, 6, 4),
            |b, s, x| b.forward(s, x).unwrap().0,
            |b, s, x, w, g| {
                let (_, c) = b.forward(s, x).unwrap();
                b.backward(s, &c, w, g)
            },
            CheckOptions { per_tensor: Some(12), ..opts },
        ),
        Case::Rgb2RawHead => {
            let mut m = Rgb2Raw::new(BranchConfig { reduction: 4, ..BranchConfig::new(1, 1, 8) }, &mut rng).unwrap();
            randomize(m.params_mut(), &mut rng, 0.3);
            let x = random_input(3, 6, 6, &mut rng).map(|v| 0.5 + 0.5 * v);
            let (out, cache) = m.forward(&x).unwrap();
            let w = random_projection(out.raw.data().shape(), &mut rng);
            let mut g = Grads::zeros_like(&m.params);
            let dx = m.backward(&cache, &w, &mut g);
            let rp = check_params(&mut m, &g, "head", |m| project(m.infer(&x).unwrap().raw.data(), &w), opts, &mut rng);
            assert!(rp.probed > 0);
            let ri = check_input(&x, &dx, |xi| project(m.infer(xi).unwrap().raw.data(), &w), opts, &mut rng);
            rp.max_rel_error.max(ri.max_rel_error)
        }
        Case::DenoiserHeadRaw | Case::DenoiserHeadSrgb => {
            let mode = if case == Case::DenoiserHeadRaw { DenoiseMode::Raw } else { DenoiseMode::Srgb };
            let cfg = DenoiserConfig { n_rrg: 1, n_dab: 1, channels: 8, mode, reduction: 4, sa_kernel: 3 };
            let mut m = Denoiser::new(cfg, &mut rng).unwrap();
            randomize(m.params_mut(), &mut rng, 0.3);
            let x = random_input(mode.image_channels(), 5, 6, &mut rng).map(|v| 0.5 + 0.4 * v);
            let map = (mode == DenoiseMode::Raw).then(|| x.map(|v| (0.01 * v + 1e-4).sqrt()));
            let (out, cache) = m.forward(&x, map.as_ref()).unwrap();
            let w = random_projection(out.shape(), &mut rng);
            let mut g = Grads::zeros_like(&m.params);
            m.backward(&cache, &w, &mut g);
            let rp = check_params(&mut m, &g, "head", |m| project(&m.infer(&x, map.as_ref()).unwrap(), &w), opts, &mut rng);
            assert!(rp.probed > 0);
            rp.max_rel_error
        }
        Case::LossS2r => {
            let gt = Tensor::from_fn(1, 6, 6, |_, _, _| rng.gen_range(0.0..1.0));
            // Probes stay away from the kinks at a == gt and a == eps.
            let a = Tensor::from_fn(1, 6, 6, |_, y, x| {
                let d = rng.gen_range(0.01..0.1) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let v = gt.at(0, y, x) + d;
                if v < 1e-3 {
                    v.abs() + 0.02
                } else {
                    v
                }
            });
            let (_, g) = loss_s2r_with_grad(&a, &gt, DEFAULT_EPSILON).unwrap();
            check_input(&a, &g, |t| loss_s2r(t, &gt, DEFAULT_EPSILON).unwrap().value, opts, &mut rng).max_rel_error
        }
        Case::LossR2s => {
            let gt = random_input(3, 5, 5, &mut rng);
            let a = gt.map(|v| v + if v > 0.0 { 0.05 } else { -0.03 });
            let (_, g) = loss_r2s_with_grad(&a, &gt).unwrap();
            check_input(&a, &g, |t| loss_r2s(t, &gt).unwrap().value, opts, &mut rng).max_rel_error
        }
    }
}
