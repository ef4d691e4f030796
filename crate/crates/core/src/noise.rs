//! Heteroscedastic shot/read noise: parameter sampling, injection into
//! RAW-domain data, noise-level maps and real noise residues.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bayer::{PackedRaw, RawMosaic};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Variance contributions in normalized-intensity units:
/// `var(x) = shot * x + read`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub shot: f64,
    pub read: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        shot: 0.0,
        read: 0.0,
    };

    pub fn new(shot: f64, read: f64) -> Result<Self> {
        if !(shot.is_finite() && read.is_finite()) || shot < 0.0 || read < 0.0 {
            return Err(Error::Argument(format!(
                "noise factors must be finite and nonnegative, got shot={shot} read={read}"
            )));
        }
        Ok(NoiseParams { shot, read })
    }

    /// Standard deviation of the noise at signal level `x`. Negative
    /// signals contribute no shot noise.
    #[inline]
    pub fn std_at(&self, x: f64) -> f64 {
        (self.shot * x.max(0.0) + self.read).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.shot == 0.0 && self.read == 0.0
    }
}

/// Log-domain sampling law for noise factors:
/// `ln shot ~ U(ln min, ln max)`, `ln read ~ N(slope * ln shot + intercept, stddev)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSampling {
    pub shot_min: f64,
    pub shot_max: f64,
    pub slope: f64,
    pub intercept: f64,
    pub stddev: f64,
}

impl Default for NoiseSampling {
    fn default() -> Self {
        NoiseSampling {
            shot_min: 1e-4,
            shot_max: 1.2e-2,
            slope: 2.18,
            intercept: 1.20,
            stddev: 0.26,
        }
    }
}

impl NoiseSampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.shot_min > 0.0 && self.shot_max >= self.shot_min && self.stddev >= 0.0) {
            return Err(Error::Config(format!("invalid noise sampling law {self:?}")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseParams {
        let log_shot = rng.gen_range(self.shot_min.ln()..=self.shot_max.ln());
        let z: f64 = StandardNormal.sample(rng);
        let log_read = self.slope * log_shot + self.intercept + self.stddev * z;
        NoiseParams {
            shot: log_shot.exp(),
            read: log_read.exp(),
        }
    }
}

/// Draws noise factors with the default sampling law.
pub fn sample_noise_params<R: Rng + ?Sized>(rng: &mut R) -> NoiseParams {
    NoiseSampling::default().sample(rng)
}

/// Adds `N(0, shot * x + read)` noise independently at every element. The
/// result is not clipped. One normal deviate is drawn per element
/// regardless of the parameters, so streams stay aligned across settings.
pub fn inject_noise_tensor<R: Rng + ?Sized>(clean: &Tensor, params: NoiseParams, rng: &mut R) -> Tensor {
    let mut negatives = 0usize;
    let mut out = clean.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            negatives += 1;
        }
        let z: f64 = StandardNormal.sample(rng);
        *v += params.std_at(*v) * z;
    }
    if negatives > 0 && params.shot > 0.0 {
        warn!("{negatives} negative RAW values; shot-noise variance floored at the read level there");
    }
    out
}

pub fn inject_noise<R: Rng + ?Sized>(clean: &RawMosaic, params: NoiseParams, rng: &mut R) -> RawMosaic {
    let data = inject_noise_tensor(clean.data(), params, rng);
    RawMosaic::new(data, clean.pattern()).expect("shape preserved")
}

pub fn inject_noise_packed<R: Rng + ?Sized>(clean: &PackedRaw, params: NoiseParams, rng: &mut R) -> PackedRaw {
    PackedRaw::new(inject_noise_tensor(clean.data(), params, rng)).expect("shape preserved")
}

/// Per-element noise standard deviation for a packed frame, the extra
/// four input channels of the RAW denoiser.
pub fn noise_level_map(signal: &PackedRaw, params: NoiseParams) -> Tensor {
    noise_level_map_tensor(signal.data(), params)
}

pub fn noise_level_map_tensor(signal: &Tensor, params: NoiseParams) -> Tensor {
    signal.map(|x| params.std_at(x))
}

/// Real per-pixel noise: `noisy - clean` in mosaic space.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseResidue {
    data: Tensor,
}

impl NoiseResidue {
    pub fn from_tensor(data: Tensor) -> Self {
        NoiseResidue { data }
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<NoiseResidue> {
        Ok(NoiseResidue {
            data: self.data.crop(top, left, h, w)?,
        })
    }
}

pub fn extract_residue(raw_noisy: &RawMosaic, raw_clean: &RawMosaic) -> Result<NoiseResidue> {
    if raw_noisy.pattern() != raw_clean.pattern() {
        return Err(dim_err(format!(
            "residue needs matching patterns, got {} and {}",
            raw_noisy.pattern(),
            raw_clean.pattern()
        )));
    }
    raw_noisy.data().ensure_same_shape(raw_clean.data(), "noise residue")?;
    Ok(NoiseResidue {
        data: raw_noisy.data().sub(raw_clean.data()),
    })
}

/// Adds a residue to a clean estimate. For sensor-derived inputs (at most
/// 32 significant bits) `apply_residue(c, extract_residue(n, c)) == n`
/// holds bit-exactly.
pub fn apply_residue(clean_hat: &RawMosaic, residue: &NoiseResidue) -> Result<RawMosaic> {
    apply_residue_tensor(clean_hat.data(), residue)
        .and_then(|d| RawMosaic::new(d, clean_hat.pattern()))
}

pub fn apply_residue_tensor(clean_hat: &Tensor, residue: &NoiseResidue) -> Result<Tensor> {
    clean_hat.ensure_same_shape(&residue.data, "apply residue")?;
    Ok(clean_hat.add(&residue.data))
}

/// A Gaussian with the requested variance, used by tests and tooling
/// that need additive white noise of fixed strength.
pub fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite nonnegative std")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayer::BayerPattern;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_var(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn param_sampling_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let p = sample_noise_params(&mut rng);
            assert!(p.shot >= 1e-4 * (1.0 - 1e-12) && p.shot <= 1.2e-2 * (1.0 + 1e-12));
            assert!(p.read.is_finite() && p.read > 0.0);
        }
    }

    #[test]
    fn read_regresses_on_shot_with_configured_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let p = sample_noise_params(&mut rng);
                (p.shot.ln(), p.read.ln())
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        assert!((slope - 2.18).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn fixed_seed_reproduces_params() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_noise_params(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = Tensor::from_fn(1, 8, 8, |_, y, x| (y * 8 + x) as f64 / 64.0);
        let raw = RawMosaic::new(clean, BayerPattern::Rggb).unwrap();
        assert_eq!(inject_noise(&raw, NoiseParams::NONE, &mut rng), raw);
    }

    #[test]
    fn signal_dependent_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean = Tensor::filled(1, 1000, 1000, 0.5);
        let p = NoiseParams::new(0.01, 0.001).unwrap();
        let noisy = inject_noise_tensor(&clean, p, &mut rng);
        let v = sample_var(noisy.data());
        assert!((v / 0.006 - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn read_floor_at_zero_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = Tensor::zeros(1, 1000, 1000);
        let p = NoiseParams::new(0.01, 0.002).unwrap();
        let v = sample_var(inject_noise_tensor(&clean, p, &mut rng).data());
        assert!((v / 0.002 - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn negative_signal_floors_variance_at_read() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean = Tensor::filled(1, 500, 500, -0.5);
        let p = NoiseParams::new(0.05, 0.001).unwrap();
        let noisy = inject_noise_tensor(&clean, p, &mut rng);
        let v = sample_var(noisy.data());
        assert!((v / 0.001 - 1.0).abs() < 0.03, "variance {v}");
    }

    #[test]
    fn level_map_cases() {
        let sig = PackedRaw::new(Tensor::filled(4, 3, 3, 0.5)).unwrap();
        assert!(noise_level_map(&sig, NoiseParams::NONE).data().iter().all(|&v| v == 0.0));
        let m = noise_level_map(&sig, NoiseParams::new(0.01, 0.001).unwrap());
        let expect = (0.01f64 * 0.5 + 0.001).sqrt();
        assert!(m.data().iter().all(|&v| v == expect));
        assert!((expect - 0.006f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(NoiseParams::new(-1.0, 0.0).is_err());
        assert!(NoiseParams::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn residue_round_trip_and_zero() {
        // 16-bit sensor counts on a power-of-two scale.
        let q = |v: f64| (v * 65536.0).round() / 65536.0;
        let clean = Tensor::from_fn(1, 6, 6, |_, y, x| q(((y * 7 + x * 3) % 11) as f64 / 11.0));
        let noisy = Tensor::from_fn(1, 6, 6, |_, y, x| q(((y * 5 + x) % 13) as f64 / 13.0 - 0.02));
        let c = RawMosaic::new(clean, BayerPattern::Gbrg).unwrap();
        let n = RawMosaic::new(noisy, BayerPattern::Gbrg).unwrap();
        let r = extract_residue(&n, &c).unwrap();
        assert_eq!(apply_residue(&c, &r).unwrap(), n);
        assert!(extract_residue(&c, &c).unwrap().data().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residue_mismatch_is_dimension_error() {
        let a = RawMosaic::new(Tensor::zeros(1, 4, 4), BayerPattern::Rggb).unwrap();
        let b = RawMosaic::new(Tensor::zeros(1, 4, 6), BayerPattern::Rggb).unwrap();
        let c = RawMosaic::new(Tensor::zeros(1, 4, 4), BayerPattern::Bggr).unwrap();
        assert!(matches!(extract_residue(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(extract_residue(&a, &c), Err(Error::Dimension(_))));
    }
}
