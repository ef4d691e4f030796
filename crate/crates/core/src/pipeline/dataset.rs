//! Corpus ingestion: sRGB image folders, paired scene folders, splits and
//! random crops.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayer::{self, RawMosaic};
use crate::error::{Error, Result};
use crate::nn::gaussian_blur;
use crate::noise::NoiseParams;
use crate::pipeline::io::{read_image, read_raw};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Loose sRGB images (`.png`, `.jpg`, ...).
    SrgbFolder,
    /// One directory per scene holding any of `clean.png`, `clean.bin`,
    /// `noisy.png`, `noisy.bin` (arrays with JSON sidecars).
    RawPairFolder,
    /// Saved clean/noisy pairs, one directory per pair with `pair.json`.
    PairArrays,
}

fn default_split() -> [f64; 3] {
    [0.9, 0.05, 0.05]
}

fn default_crop() -> usize {
    128
}

fn default_true() -> bool {
    true
}

fn default_blur() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub root: PathBuf,
    pub kind: DatasetKind,
    /// Train / validation / test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_crop")]
    pub crop: usize,
    #[serde(default = "default_true")]
    pub flip_horizontal: bool,
    #[serde(default = "default_true")]
    pub flip_vertical: bool,
    /// Pre-blur applied to decoded sRGB folder images; 0 disables it.
    #[serde(default = "default_blur")]
    pub blur_sigma: f64,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, kind: DatasetKind) -> Self {
        DatasetSpec {
            root: root.into(),
            kind,
            split: default_split(),
            crop: default_crop(),
            flip_horizontal: true,
            flip_vertical: true,
            blur_sigma: default_blur(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&r| r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split {:?} must be nonnegative and sum to 1", self.split)));
        }
        if self.crop == 0 || self.crop % 2 != 0 {
            return Err(Error::Config(format!("data.crop {} must be even and positive", self.crop)));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::Config("data.blur_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Index ranges of a seeded train / validation / test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `ratios`; validation and
/// test sizes are rounded, training keeps the remainder.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * ratios[1]).round() as usize;
    let n_test = (((n as f64) * ratios[2]).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n - n_test);
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(idx.len() - n_val);
    Split { train: idx, val, test }
}

fn sorted_entries(root: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut paths: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    Ok(paths)
}

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decodes every image of an sRGB folder (sorted by name), applying the
/// pre-blur. Unreadable files are skipped with a warning.
pub fn load_srgb_folder(spec: &DatasetSpec) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for path in sorted_entries(&spec.root)?.into_iter().filter(|p| is_image(p)) {
        match read_image(&path) {
            Ok(img) => {
                let img = if spec.blur_sigma > 0.0 {
                    gaussian_blur(&img, spec.blur_sigma)?
                } else {
                    img
                };
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((name, img));
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no readable images in {}", spec.root.display())));
    }
    Ok(out)
}

/// One scene of a paired folder. RAW frames are unified to RGGB on load
/// and the sRGB images are cropped to the same window.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub clean_srgb: Option<Tensor>,
    pub clean_raw: Option<RawMosaic>,
    pub noisy_srgb: Option<Tensor>,
    pub noisy_raw: Option<RawMosaic>,
    pub noise: Option<NoiseParams>,
}

impl Scene {
    pub fn clean(name: impl Into<String>, srgb: Tensor, raw: RawMosaic) -> Self {
        Scene {
            name: name.into(),
            clean_srgb: Some(srgb),
            clean_raw: Some(raw),
            noisy_srgb: None,
            noisy_raw: None,
            noise: None,
        }
    }

    fn check_alignment(&self) -> Result<()> {
        let mut dims = Vec::new();
        for t in [&self.clean_srgb, &self.noisy_srgb].into_iter().flatten() {
            dims.push((t.height(), t.width()));
        }
        for r in [&self.clean_raw, &self.noisy_raw].into_iter().flatten() {
            dims.push((r.height(), r.width()));
        }
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Data(format!("scene {} has images of different sizes {dims:?}", self.name)));
        }
        if let (Some(a), Some(b)) = (&self.clean_raw, &self.noisy_raw) {
            if a.pattern() != b.pattern() {
                return Err(Error::Data(format!("scene {} mixes Bayer patterns", self.name)));
            }
        }
        Ok(())
    }

    fn height_width(&self) -> (usize, usize) {
        if let Some(r) = self.clean_raw.as_ref().or(self.noisy_raw.as_ref()) {
            return (r.height(), r.width());
        }
        let t = self.clean_srgb.as_ref().or(self.noisy_srgb.as_ref()).expect("non-empty scene");
        (t.height(), t.width())
    }

    /// Brings every RAW frame to RGGB and crops companions to match.
    fn unify(mut self) -> Result<Self> {
        let Some(raw) = self.clean_raw.as_ref().or(self.noisy_raw.as_ref()) else {
            return Ok(self);
        };
        let (unified, (top, left)) = bayer::unify_pattern_with_origin(raw)?;
        let (h, w) = (unified.height(), unified.width());
        let crop_raw = |r: RawMosaic| -> Result<RawMosaic> {
            RawMosaic::new(r.data().crop(top, left, h, w)?, bayer::BayerPattern::Rggb)
        };
        self.clean_raw = self.clean_raw.map(crop_raw).transpose()?;
        self.noisy_raw = self.noisy_raw.map(crop_raw).transpose()?;
        self.clean_srgb = self.clean_srgb.map(|t| t.crop(top, left, h, w)).transpose()?;
        self.noisy_srgb = self.noisy_srgb.map(|t| t.crop(top, left, h, w)).transpose()?;
        Ok(self)
    }

    /// Crop of every member at an even origin. With flips, a window two
    /// pixels larger along each flipped axis is cut, flipped and unified
    /// back to RGGB, so the result is still `h × w`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize, flip_h: bool, flip_v: bool) -> Result<Scene> {
        debug_assert!(top % 2 == 0 && left % 2 == 0);
        let (eh, ew) = (h + if flip_v { 2 } else { 0 }, w + if flip_h { 2 } else { 0 });
        let cut_raw = |r: &RawMosaic| -> Result<(RawMosaic, Option<bayer::FlipWindow>)> {
            let m = RawMosaic::new(r.data().crop(top, left, eh, ew)?, r.pattern())?;
            if flip_h || flip_v {
                let (f, win) = bayer::bayer_flip_with_window(&m, flip_h, flip_v)?;
                let t = f.data().crop(0, 0, h, w)?;
                Ok((RawMosaic::new(t, f.pattern())?, Some(win)))
            } else {
                Ok((m, None))
            }
        };
        let cut_srgb = |t: &Tensor| -> Result<Tensor> {
            let c = t.crop(top, left, eh, ew)?;
            if flip_h || flip_v {
                let (_, win) = bayer::bayer_flip_with_window(
                    &RawMosaic::new(Tensor::zeros(1, eh, ew), bayer::BayerPattern::Rggb)?,
                    flip_h,
                    flip_v,
                )?;
                win.apply(&c)?.crop(0, 0, h, w)
            } else {
                Ok(c)
            }
        };
        Ok(Scene {
            name: self.name.clone(),
            clean_srgb: self.clean_srgb.as_ref().map(cut_srgb).transpose()?,
            clean_raw: self.clean_raw.as_ref().map(|r| cut_raw(r).map(|x| x.0)).transpose()?,
            noisy_srgb: self.noisy_srgb.as_ref().map(cut_srgb).transpose()?,
            noisy_raw: self.noisy_raw.as_ref().map(|r| cut_raw(r).map(|x| x.0)).transpose()?,
            noise: self.noise,
        })
    }

    /// A random crop of side `size` (or the whole even-sized scene if it
    /// is smaller), with optional random Bayer-consistent flips.
    pub fn random_crop<R: Rng + ?Sized>(&self, size: usize, flip_h: bool, flip_v: bool, rng: &mut R) -> Result<Scene> {
        let (h, w) = self.height_width();
        let ch = size.min(h - h % 2);
        let cw = size.min(w - w % 2);
        let fh = flip_h && rng.gen_bool(0.5) && cw + 2 <= w;
        let fv = flip_v && rng.gen_bool(0.5) && ch + 2 <= h;
        let (eh, ew) = (ch + if fv { 2 } else { 0 }, cw + if fh { 2 } else { 0 });
        let top = 2 * rng.gen_range(0..=(h - eh) / 2);
        let left = 2 * rng.gen_range(0..=(w - ew) / 2);
        self.crop(top, left, ch, cw, fh, fv)
    }
}

fn optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

fn load_scene(dir: &Path) -> Result<Scene> {
    let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let clean_raw = optional(&dir.join("clean.bin"), read_raw)?;
    let noisy_raw = optional(&dir.join("noisy.bin"), read_raw)?;
    let noise = noisy_raw.as_ref().and_then(|(_, m)| m.noise);
    let scene = Scene {
        name,
        clean_srgb: optional(&dir.join("clean.png"), read_image)?,
        clean_raw: clean_raw.map(|x| x.0),
        noisy_srgb: optional(&dir.join("noisy.png"), read_image)?,
        noisy_raw: noisy_raw.map(|x| x.0),
        noise,
    };
    if scene.clean_srgb.is_none() && scene.clean_raw.is_none() && scene.noisy_srgb.is_none() && scene.noisy_raw.is_none() {
        return Err(Error::Data(format!("{} holds no clean/noisy files", dir.display())));
    }
    scene.check_alignment()?;
    scene.unify()
}

/// Loads every scene directory of a paired folder, sorted by name.
/// Unreadable scenes are skipped with a warning.
pub fn load_pair_folder(root: &Path) -> Result<Vec<Scene>> {
    let mut out = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        match load_scene(&dir) {
            Ok(s) => out.push(s),
            Err(e) => warn!("skipping {}: {e}", dir.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no readable scenes in {}", root.display())));
    }
    Ok(out)
}

/// Endless, seeded stream of preprocessed sRGB crops.
#[derive(Clone, Debug)]
pub struct CropStream {
    images: Vec<Tensor>,
    crop: usize,
    flip_horizontal: bool,
    flip_vertical: bool,
    rng: ChaCha8Rng,
}

impl CropStream {
    pub fn new(images: Vec<Tensor>, spec: &DatasetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let images: Vec<Tensor> = images
            .into_iter()
            .filter(|img| {
                let ok = img.height() >= spec.crop && img.width() >= spec.crop;
                if !ok {
                    warn!("skipping {}x{} image smaller than the {} crop", img.height(), img.width(), spec.crop);
                }
                ok
            })
            .collect();
        if images.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        Ok(CropStream {
            images,
            crop: spec.crop,
            flip_horizontal: spec.flip_horizontal,
            flip_vertical: spec.flip_vertical,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    /// Top-left corner of the next crop inside an `h × w` image.
    pub fn crop_origin<R: Rng + ?Sized>(h: usize, w: usize, crop: usize, rng: &mut R) -> (usize, usize) {
        (rng.gen_range(0..=h - crop), rng.gen_range(0..=w - crop))
    }
}

impl Iterator for CropStream {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        let img = &self.images[self.rng.gen_range(0..self.images.len())];
        let (top, left) = Self::crop_origin(img.height(), img.width(), self.crop, &mut self.rng);
        let mut c = img.crop(top, left, self.crop, self.crop).expect("crop inside bounds");
        if self.flip_horizontal && self.rng.gen_bool(0.5) {
            c = c.flip_horizontal();
        }
        if self.flip_vertical && self.rng.gen_bool(0.5) {
            c = c.flip_vertical();
        }
        Some(c)
    }
}

/// Decodes, pre-blurs and crops an sRGB folder into a seeded crop stream.
pub fn prepare_corpus(spec: &DatasetSpec, seed: u64) -> Result<CropStream> {
    spec.validate()?;
    if spec.kind != DatasetKind::SrgbFolder {
        return Err(Error::Config("prepare_corpus reads sRGB folders".into()));
    }
    let images = load_srgb_folder(spec)?.into_iter().map(|(_, t)| t).collect();
    CropStream::new(images, spec, seed)
}
