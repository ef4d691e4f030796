use cycleisp::bayer::{self, BayerPattern, CfaColor};
use cycleisp::nn::{gaussian_blur, gaussian_kernel, pixel_shuffle_up, pixel_unshuffle};
use cycleisp::noise::{inject_noise_tensor, noise_level_map_tensor, NoiseParams};
use cycleisp::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn pattern() -> impl Strategy<Value = BayerPattern> {
    prop::sample::select(BayerPattern::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_round_trip(hh in 1usize..12, hw in 1usize..12, seed: u64) {
        let t = tensor(1, 2 * hh, 2 * hw, seed);
        let packed = bayer::pack_tensor(&t);
        prop_assert_eq!(packed.shape(), (4, hh, hw));
        prop_assert_eq!(bayer::unpack_tensor(&packed), t);
    }

    #[test]
    fn unpack_pack_round_trip(h in 1usize..10, w in 1usize..10, seed: u64) {
        let p = tensor(4, h, w, seed);
        prop_assert_eq!(bayer::pack_tensor(&bayer::unpack_tensor(&p)), p);
    }

    #[test]
    fn shuffle_round_trip(c in 1usize..4, k in 1usize..4, h in 1usize..7, w in 1usize..7, seed: u64) {
        let f = tensor(c * k * k, h, w, seed);
        let up = pixel_shuffle_up(&f, k).unwrap();
        prop_assert_eq!(up.shape(), (c, k * h, k * w));
        prop_assert_eq!(pixel_unshuffle(&up, k).unwrap(), f);
    }

    #[test]
    fn shuffle_preserves_values(k in 1usize..4, h in 1usize..6, w in 1usize..6, seed: u64) {
        let f = tensor(3 * k * k, h, w, seed);
        let mut a: Vec<f64> = f.data().to_vec();
        let mut b: Vec<f64> = pixel_shuffle_up(&f, k).unwrap().data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn unified_mosaic_keeps_site_colors(p in pattern(), hh in 2usize..8, hw in 2usize..8, seed: u64) {
        let dem = tensor(3, 2 * hh, 2 * hw, seed);
        let raw = bayer::mosaic(&dem, p).unwrap();
        let (u, (top, left)) = bayer::unify_pattern_with_origin(&raw).unwrap();
        prop_assert_eq!(u.pattern(), BayerPattern::Rggb);
        for y in 0..u.height() {
            for x in 0..u.width() {
                prop_assert_eq!(u.color_at(y, x), p.color_at(y + top, x + left));
                prop_assert_eq!(u.color_at(y, x), BayerPattern::Rggb.color_at(y, x));
            }
        }
    }

    #[test]
    fn flips_keep_site_colors(p in pattern(), fh: bool, fv: bool, hh in 2usize..8, hw in 2usize..8, seed: u64) {
        let dem = tensor(3, 2 * hh, 2 * hw, seed);
        let raw = bayer::mosaic(&dem, p).unwrap();
        let (flipped, window) = bayer::bayer_flip_with_window(&raw, fh, fv).unwrap();
        let dem_f = window.apply(&dem).unwrap();
        // The flipped mosaic is what mosaicking the flipped image would give.
        prop_assert_eq!(flipped, bayer::mosaic(&dem_f, BayerPattern::Rggb).unwrap());
    }

    #[test]
    fn blur_preserves_constants(v in -1.0f64..1.0, sigma in 0.3f64..4.0) {
        let t = Tensor::filled(2, 9, 11, v);
        let b = gaussian_blur(&t, sigma).unwrap();
        prop_assert!(b.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn blur_is_linear(a in -2.0f64..2.0, s1: u64, s2: u64, sigma in 0.5f64..3.0) {
        let (x, y) = (tensor(1, 10, 12, s1), tensor(1, 10, 12, s2));
        let lhs = gaussian_blur(&x.scale(a).add(&y), sigma).unwrap();
        let rhs = gaussian_blur(&x, sigma).unwrap().scale(a).add(&gaussian_blur(&y, sigma).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn noise_map_is_injector_std(shot in 0.0f64..0.02, read in 0.0f64..0.001, seed: u64) {
        let p = NoiseParams { shot, read };
        let signal = tensor(4, 4, 4, seed);
        let map = noise_level_map_tensor(&signal, p);
        for (&s, &m) in signal.data().iter().zip(map.data()) {
            prop_assert_eq!(m, p.std_at(s));
        }
    }
}

#[test]
fn blur_semigroup_in_interior() {
    let x = tensor(1, 96, 96, 3);
    for (s1, s2) in [(1.0, 1.5), (2.0, 1.0), (1.5, 2.5)] {
        let twice = gaussian_blur(&gaussian_blur(&x, s1).unwrap(), s2).unwrap();
        let once = gaussian_blur(&x, f64::hypot(s1, s2)).unwrap();
        let m = gaussian_kernel(s1).unwrap().len() + gaussian_kernel(s2).unwrap().len();
        let inner = |t: &Tensor| t.crop(m, m, 96 - 2 * m, 96 - 2 * m).unwrap();
        let err = inner(&twice).max_abs_diff(&inner(&once));
        assert!(err < 2e-3, "sigma {s1}+{s2}: {err}");
    }
}

#[test]
fn mosaic_selects_cfa_channel() {
    let dem = Tensor::from_fn(3, 4, 4, |c, _, _| c as f64);
    for p in BayerPattern::ALL {
        let raw = bayer::mosaic(&dem, p).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = match p.color_at(y, x) {
                    CfaColor::Red => 0.0,
                    CfaColor::Green => 1.0,
                    CfaColor::Blue => 2.0,
                };
                assert_eq!(raw.at(y, x), want);
            }
        }
    }
}

#[test]
fn noise_is_zero_mean_with_model_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = NoiseParams { shot: 0.02, read: 0.0005 };
    for level in [0.1, 0.6] {
        let clean = Tensor::filled(1, 300, 300, level);
        let noisy = inject_noise_tensor(&clean, p, &mut rng);
        let d = noisy.sub(&clean);
        let n = d.len() as f64;
        let mean = d.mean();
        let var = d.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = p.shot * level + p.read;
        assert!(mean.abs() < 4.0 * (want / n).sqrt(), "mean {mean}");
        assert!((var / want - 1.0).abs() < 0.03, "var {var} want {want}");
    }
}
