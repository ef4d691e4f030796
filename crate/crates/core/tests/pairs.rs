use cycleisp::metrics::mse;
use cycleisp::models::{BranchConfig, CycleConfig, CycleIsp, Rgb2Raw};
use cycleisp::noise::NoiseParams;
use cycleisp::pipeline::pairs::{synth_raw_pair_with, synth_srgb_pair_with};
use cycleisp::pipeline::PairDomain;
use cycleisp::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// sRGB->RAW model whose output is the constant `level`.
fn constant_rgb2raw(level: f64, rng: &mut ChaCha8Rng) -> Rgb2Raw {
    let mut m = Rgb2Raw::new(BranchConfig::new(1, 1, 8), rng).unwrap();
    for id in m.params.ids_with_prefix("out") {
        let t = m.params.get_mut(id);
        let v = if t.len() == 3 { level } else { 0.0 };
        t.data_mut().iter_mut().for_each(|x| *x = v);
    }
    m
}

fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[test]
fn synthetic_raw_noise_variance_follows_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = NoiseParams::new(0.01, 0.0005).unwrap();
    let srgb = Tensor::filled(3, 16, 16, 0.5);
    let (mut levels, mut vars) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let level = rng.gen_range(0.05..0.95);
        let m = constant_rgb2raw(level, &mut rng);
        let pair = synth_raw_pair_with(&srgb, &m, p, &mut rng).unwrap();
        assert_eq!(pair.domain, PairDomain::RawPacked);
        assert_eq!(pair.clean.shape(), (4, 8, 8));
        assert!(pair.clean.data().iter().all(|&v| (v - level).abs() < 1e-12));
        levels.push(level);
        vars.push(mse(&pair.noisy, &pair.clean).unwrap());
    }
    let (slope, intercept) = fit_line(&levels, &vars);
    assert!((slope / p.shot - 1.0).abs() < 0.05, "slope {slope}");
    assert!((intercept - p.read).abs() < 0.05 * p.shot, "intercept {intercept}");
}

#[test]
fn synthetic_srgb_pairs_degrade_with_shot_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = CycleConfig::with_width(8);
    cfg.rgb2raw = BranchConfig::new(1, 1, 8);
    cfg.raw2rgb = BranchConfig::new(1, 1, 8);
    cfg.color_corr.n_rrg = 1;
    cfg.color_corr.n_dab = 1;
    let model = CycleIsp::new(cfg, &mut rng).unwrap();
    for trial in 0..4 {
        let img = Tensor::from_fn(3, 16, 16, |_, _, _| rng.gen_range(0.2..0.8));
        let mut last = 0.0;
        let mut clean = None;
        for shot in [0.001, 0.004, 0.016] {
            let p = NoiseParams::new(shot, 1e-5).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(100 + trial);
            let pair = synth_srgb_pair_with(&img, &model, p, &mut r).unwrap();
            assert_eq!(pair.domain, PairDomain::Srgb);
            if let Some(c) = &clean {
                assert_eq!(&pair.clean, c);
            }
            let err = mse(&pair.noisy, &pair.clean).unwrap();
            assert!(err > last, "shot {shot}: {err} <= {last}");
            last = err;
            clean = Some(pair.clean);
        }
    }
}
