//! Procedural scenes and a small reference ISP.
//!
//! Stands in for a photo corpus in tests and toy runs: a scene is a
//! linear camera-space RGB image, the RAW frame is its RGGB mosaic and the
//! sRGB image is produced by white balance, a color matrix and gamma.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayer::{mosaic, BayerPattern, RawMosaic};
use crate::noise::{inject_noise_tensor, NoiseParams};
use crate::tensor::Tensor;

/// Lowest and highest linear value a scene produces.
pub const SCENE_RANGE: (f64, f64) = (0.02, 0.42);

/// A minimal camera pipeline: per-channel gains, 3×3 color matrix, clip,
/// power-law gamma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleIsp {
    pub wb: [f64; 3],
    pub ccm: [[f64; 3]; 3],
    pub gamma: f64,
}

impl Default for SimpleIsp {
    fn default() -> Self {
        SimpleIsp {
            wb: [1.9, 1.0, 1.5],
            ccm: [[1.25, -0.15, -0.1], [-0.1, 1.2, -0.1], [-0.05, -0.2, 1.25]],
            gamma: 1.0 / 2.2,
        }
    }
}

impl SimpleIsp {
    /// The default ISP with red and blue gains scaled by independent
    /// log-uniform factors in `[1/spread, spread]`.
    pub fn jittered<R: Rng + ?Sized>(spread: f64, rng: &mut R) -> Self {
        let mut isp = SimpleIsp::default();
        let l = spread.ln();
        isp.wb[0] *= rng.gen_range(-l..=l).exp();
        isp.wb[2] *= rng.gen_range(-l..=l).exp();
        isp
    }

    pub fn render(&self, linear: &Tensor) -> Tensor {
        let (_, h, w) = linear.shape();
        let mut out = Tensor::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let v: [f64; 3] = std::array::from_fn(|c| linear.at(c, y, x).max(0.0) * self.wb[c]);
                for (o, row) in self.ccm.iter().enumerate() {
                    let m = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
                    out.set(o, y, x, m.clamp(0.0, 1.0).powf(self.gamma));
                }
            }
        }
        out
    }
}

/// Smooth linear-RGB scene: a colored gradient with soft-edged ellipses.
pub fn scene<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor {
    let (lo, hi) = SCENE_RANGE;
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.6));
    let slope: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)));
    let n_blobs = rng.gen_range(3..7);
    let blobs: Vec<_> = (0..n_blobs)
        .map(|_| {
            let cy = rng.gen_range(0.0..h as f64);
            let cx = rng.gen_range(0.0..w as f64);
            let ry = rng.gen_range(0.1..0.35) * h as f64;
            let rx = rng.gen_range(0.1..0.35) * w as f64;
            let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let soft = rng.gen_range(1.0..3.0);
            (cy, cx, ry, rx, color, soft)
        })
        .collect();
    Tensor::from_fn(3, h, w, |c, y, x| {
        let (fy, fx) = (y as f64 / h as f64 - 0.5, x as f64 / w as f64 - 0.5);
        let mut v = base[c] + slope[c].0 * fy + slope[c].1 * fx;
        for &(cy, cx, ry, rx, color, soft) in &blobs {
            let d = (((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2)).sqrt();
            // Edge transition roughly `soft` pixels wide.
            let a = 1.0 / (1.0 + ((d - 1.0) * ry.min(rx) / soft).exp());
            v = v * (1.0 - a) + color[c] * a;
        }
        lo + (hi - lo) * v.clamp(0.0, 1.0)
    })
}

/// One rendered scene.
#[derive(Clone, Debug)]
pub struct SyntheticImage {
    pub linear: Tensor,
    pub raw: RawMosaic,
    pub srgb: Tensor,
}

impl SyntheticImage {
    pub fn render(linear: Tensor, isp: &SimpleIsp) -> Self {
        let raw = mosaic(&linear, BayerPattern::Rggb).expect("even scene size");
        let srgb = isp.render(&linear);
        SyntheticImage { linear, raw, srgb }
    }
}

/// How each image's ISP is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IspVariation {
    /// Every image uses the default ISP.
    Fixed,
    /// Per-image white-balance jitter with the given spread factor.
    Jittered(f64),
}

/// `n` scenes of size `h × w`, fully determined by `seed`.
pub fn corpus(n: usize, h: usize, w: usize, variation: IspVariation, seed: u64) -> Vec<SyntheticImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let linear = scene(h, w, &mut rng);
            let isp = match variation {
                IspVariation::Fixed => SimpleIsp::default(),
                IspVariation::Jittered(s) => SimpleIsp::jittered(s, &mut rng),
            };
            SyntheticImage::render(linear, &isp)
        })
        .collect()
}

/// A clean/noisy capture of one scene, in both RAW and sRGB, standing in
/// for a real paired dataset.
#[derive(Clone, Debug)]
pub struct CapturedPair {
    pub clean: SyntheticImage,
    pub noisy: SyntheticImage,
    pub params: NoiseParams,
}

/// Adds shot/read noise in linear space (independently per color plane)
/// and renders both versions with the same ISP.
pub fn captured_pair<R: Rng + ?Sized>(linear: Tensor, isp: &SimpleIsp, params: NoiseParams, rng: &mut R) -> CapturedPair {
    let noisy_linear = inject_noise_tensor(&linear, params, rng);
    CapturedPair {
        clean: SyntheticImage::render(linear, isp),
        noisy: SyntheticImage::render(noisy_linear, isp),
        params,
    }
}

/// `n` captured pairs with noise parameters drawn from `sample`.
pub fn captured_corpus(
    n: usize,
    h: usize,
    w: usize,
    variation: IspVariation,
    sample: impl Fn(&mut ChaCha8Rng) -> NoiseParams,
    seed: u64,
) -> Vec<CapturedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let linear = scene(h, w, &mut rng);
            let isp = match variation {
                IspVariation::Fixed => SimpleIsp::default(),
                IspVariation::Jittered(s) => SimpleIsp::jittered(s, &mut rng),
            };
            let params = sample(&mut rng);
            captured_pair(linear, &isp, params, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_stay_in_range() {
        for img in corpus(4, 32, 32, IspVariation::Jittered(1.6), 3) {
            assert!(img.linear.min() >= SCENE_RANGE.0 && img.linear.max() <= SCENE_RANGE.1);
            assert!(img.srgb.min() >= 0.0 && img.srgb.max() <= 1.0);
            assert_eq!(img.raw.pattern(), BayerPattern::Rggb);
        }
    }

    #[test]
    fn corpus_is_seeded() {
        let a = corpus(2, 16, 16, IspVariation::Jittered(1.5), 9);
        let b = corpus(2, 16, 16, IspVariation::Jittered(1.5), 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.srgb, y.srgb);
            assert_eq!(x.raw.data(), y.raw.data());
        }
    }

    #[test]
    fn zero_noise_capture_is_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = scene(8, 8, &mut rng);
        let pair = captured_pair(lin, &SimpleIsp::default(), NoiseParams::NONE, &mut rng);
        assert_eq!(pair.clean.srgb, pair.noisy.srgb);
    }
}
