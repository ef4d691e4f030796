//! Clean/noisy training pairs: the synthetic generators and persistence.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bayer::{self, BayerPattern, RawMosaic};
use crate::error::{Error, Result};
use crate::models::{CycleIsp, NoiseSwitch, Rgb2Raw};
use crate::noise::{inject_noise, noise_level_map_tensor, sample_noise_params, NoiseParams};
use crate::pipeline::dataset::Scene;
use crate::pipeline::io::{read_array, write_array, ArrayMeta};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDomain {
    /// Packed 4-channel RAW at half resolution.
    RawPacked,
    Srgb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub clean: Tensor,
    pub noisy: Tensor,
    pub domain: PairDomain,
    pub noise: Option<NoiseParams>,
    pub provenance: Provenance,
}

impl PairSample {
    pub fn new(
        clean: Tensor,
        noisy: Tensor,
        domain: PairDomain,
        noise: Option<NoiseParams>,
        provenance: Provenance,
    ) -> Result<Self> {
        clean.ensure_same_shape(&noisy, "clean/noisy pair")?;
        let want = match domain {
            PairDomain::RawPacked => 4,
            PairDomain::Srgb => 3,
        };
        if clean.channels() != want {
            return Err(Error::Dimension(format!("{domain:?} pair needs {want} channels, got {}", clean.channels())));
        }
        if provenance == Provenance::Synthetic && noise.is_none() {
            return Err(Error::Argument("synthetic pairs carry their noise parameters".into()));
        }
        Ok(PairSample {
            clean,
            noisy,
            domain,
            noise,
            provenance,
        })
    }

    /// Noise-level map of the noisy frame (RAW pairs with known noise).
    pub fn noise_map(&self) -> Option<Tensor> {
        match (self.domain, self.noise) {
            (PairDomain::RawPacked, Some(p)) => Some(noise_level_map_tensor(&self.noisy, p)),
            _ => None,
        }
    }

    /// Same-position crop of both members; `top`, `left`, `h`, `w` are in
    /// the pair's own grid.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<PairSample> {
        Ok(PairSample {
            clean: self.clean.crop(top, left, h, w)?,
            noisy: self.noisy.crop(top, left, h, w)?,
            ..self.clone()
        })
    }

    pub fn random_crop<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<PairSample> {
        let (_, h, w) = self.clean.shape();
        let (ch, cw) = (size.min(h), size.min(w));
        let top = rng.gen_range(0..=h - ch);
        let left = rng.gen_range(0..=w - cw);
        self.crop(top, left, ch, cw)
    }

    /// Real pair from a scene directory, if it has the needed members.
    pub fn from_scene(scene: &Scene, domain: PairDomain) -> Option<Result<PairSample>> {
        let (clean, noisy) = match domain {
            PairDomain::RawPacked => {
                let c = scene.clean_raw.as_ref()?;
                let n = scene.noisy_raw.as_ref()?;
                (bayer::pack_tensor(c.data()), bayer::pack_tensor(n.data()))
            }
            PairDomain::Srgb => (scene.clean_srgb.clone()?, scene.noisy_srgb.clone()?),
        };
        Some(PairSample::new(clean, noisy, domain, scene.noise, Provenance::Real))
    }
}

/// RAW pair for a given noise setting: the sRGB->RAW estimate (floored at
/// zero, since sensor values are nonnegative) and its noisy version, both
/// packed.
pub fn synth_raw_pair_with<R: RngCore + ?Sized>(
    srgb: &Tensor,
    rgb2raw: &Rgb2Raw,
    params: NoiseParams,
    rng: &mut R,
) -> Result<PairSample> {
    let raw = rgb2raw.infer(srgb)?.raw;
    let clean = RawMosaic::new(raw.data().map(|v| v.max(0.0)), BayerPattern::Rggb)?;
    let noisy = inject_noise(&clean, params, rng);
    PairSample::new(
        bayer::pack_tensor(clean.data()),
        bayer::pack_tensor(noisy.data()),
        PairDomain::RawPacked,
        Some(params),
        Provenance::Synthetic,
    )
}

/// RAW pair with noise factors drawn from the sampling law.
pub fn synth_raw_pairs<R: RngCore + ?Sized>(srgb: &Tensor, rgb2raw: &Rgb2Raw, rng: &mut R) -> Result<PairSample> {
    let params = sample_noise_params(rng);
    synth_raw_pair_with(srgb, rgb2raw, params, rng)
}

/// sRGB pair for a given noise setting: the clean cycle reconstruction and
/// the reconstruction with noise injected between the branches.
pub fn synth_srgb_pair_with(
    srgb: &Tensor,
    cycle: &CycleIsp,
    params: NoiseParams,
    rng: &mut dyn RngCore,
) -> Result<PairSample> {
    let clean = cycle.infer(srgb, NoiseSwitch::Off, rng)?.rgb;
    let noisy = cycle.infer(srgb, NoiseSwitch::Params(params), rng)?.rgb;
    PairSample::new(clean, noisy, PairDomain::Srgb, Some(params), Provenance::Synthetic)
}

pub fn synth_srgb_pairs(srgb: &Tensor, cycle: &CycleIsp, rng: &mut dyn RngCore) -> Result<PairSample> {
    let params = sample_noise_params(rng);
    synth_srgb_pair_with(srgb, cycle, params, rng)
}

/// Pair sidecar stored next to the arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PairRecord {
    domain: PairDomain,
    provenance: Provenance,
    #[serde(default)]
    noise: Option<NoiseParams>,
}

/// Writes a pair as `clean.bin` / `noisy.bin` plus `pair.json` under `dir`.
pub fn save_pair(dir: &Path, pair: &PairSample) -> Result<()> {
    let meta = |t: &Tensor| ArrayMeta {
        noise: pair.noise,
        ..ArrayMeta::for_tensor(t)
    };
    write_array(&dir.join("clean.bin"), &pair.clean, &meta(&pair.clean))?;
    write_array(&dir.join("noisy.bin"), &pair.noisy, &meta(&pair.noisy))?;
    let rec = PairRecord {
        domain: pair.domain,
        provenance: pair.provenance,
        noise: pair.noise,
    };
    let json = serde_json::to_vec_pretty(&rec).map_err(|e| Error::Serde(e.to_string()))?;
    crate::pipeline::io::write_atomic(&dir.join("pair.json"), &json)
}

pub fn load_pair(dir: &Path) -> Result<PairSample> {
    let rec_path = dir.join("pair.json");
    let bytes = fs::read(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    let rec: PairRecord =
        serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("bad pair record {}: {e}", rec_path.display())))?;
    let (clean, _) = read_array(&dir.join("clean.bin"))?;
    let (noisy, _) = read_array(&dir.join("noisy.bin"))?;
    PairSample::new(clean, noisy, rec.domain, rec.noise, rec.provenance)
}

/// Loads every `pair.json` directory under `root`, sorted by name;
/// unreadable pairs are skipped with a warning.
pub fn load_pairs(root: &Path) -> Result<Vec<(String, PairSample)>> {
    let rd = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<_> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("pair.json").exists())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        match load_pair(&d) {
            Ok(p) => out.push((d.file_name().unwrap_or_default().to_string_lossy().into_owned(), p)),
            Err(e) => log::warn!("skipping {}: {e}", d.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no readable pairs in {}", root.display())));
    }
    Ok(out)
}
