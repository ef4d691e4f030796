//! Command implementations behind the `cycleisp` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bayer::{self, RawMosaic};
use crate::error::{dim_err, Error, Result};
use crate::metrics::{psnr, ssim};
use crate::models::{CycleConfig, CycleIsp, DenoiseMode, Denoiser, DenoiserConfig, Raw2Rgb, Rgb2Raw};
use crate::nn::{BlockSpec, Dab, Rrg};
use crate::noise::{noise_level_map_tensor, NoiseParams};
use crate::pipeline::dataset::{load_pair_folder, load_srgb_folder, split_indices, DatasetKind, DatasetSpec};
use crate::pipeline::io::{read_image, read_raw, write_atomic, write_png16, write_raw};
use crate::pipeline::pairs::{load_pairs, save_pair, synth_raw_pairs, synth_srgb_pairs, PairDomain, PairSample};
use crate::pipeline::{run_training, Checkpoint, ModelSpec, Stage, StageInputs, TrainConfig, TrainData, TrainOutcome};
use crate::tensor::Tensor;

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| Error::Serde(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_cycle(ckpt: &Checkpoint) -> Result<CycleIsp> {
    match ckpt.model_spec() {
        ModelSpec::Cycle { cycle } => ckpt.into_cycle(*cycle),
        other => Err(Error::Config(format!("expected a CycleISP checkpoint, got a {} checkpoint", other.kind()))),
    }
}

/// The sRGB->RAW branch of an `rgb2raw` or full CycleISP checkpoint.
pub fn load_rgb2raw(ckpt: &Checkpoint) -> Result<Rgb2Raw> {
    match ckpt.model_spec() {
        ModelSpec::Rgb2Raw { rgb2raw } => ckpt.into_rgb2raw(*rgb2raw),
        ModelSpec::Cycle { cycle } => Ok(ckpt.into_cycle(*cycle)?.rgb2raw),
        other => Err(Error::Config(format!("a {} checkpoint has no sRGB->RAW branch", other.kind()))),
    }
}

pub fn load_denoiser(ckpt: &Checkpoint, mode: DenoiseMode) -> Result<Denoiser> {
    match ckpt.model_spec() {
        ModelSpec::Denoiser { denoiser } if denoiser.mode == mode => ckpt.into_denoiser(*denoiser),
        ModelSpec::Denoiser { denoiser } => Err(Error::Config(format!(
            "checkpoint holds a {} denoiser but {mode} mode was requested",
            denoiser.mode
        ))),
        other => Err(Error::Config(format!("expected a denoiser checkpoint, got a {} checkpoint", other.kind()))),
    }
}

/// Training and validation material for a stage, split by `cfg.data.split`
/// under `cfg.seed`. The test fraction is held back.
pub fn load_stage_data(cfg: &TrainConfig) -> Result<(TrainData, Option<TrainData>)> {
    let spec = &cfg.data;
    spec.validate()?;
    let denoiser = cfg.stage.denoise_mode();
    let data = match (spec.kind, denoiser) {
        (DatasetKind::RawPairFolder, None) => TrainData::Scenes(load_pair_folder(&spec.root)?),
        (DatasetKind::RawPairFolder, Some(mode)) => {
            let domain = pair_domain(mode);
            let pairs: Vec<PairSample> = load_pair_folder(&spec.root)?
                .iter()
                .filter_map(|s| PairSample::from_scene(s, domain))
                .collect::<Result<_>>()?;
            TrainData::Pairs(pairs)
        }
        (DatasetKind::SrgbFolder, Some(_)) => {
            TrainData::Srgb(load_srgb_folder(spec)?.into_iter().map(|(_, t)| t).collect())
        }
        (DatasetKind::PairArrays, Some(_)) => TrainData::Pairs(load_pairs(&spec.root)?.into_iter().map(|(_, p)| p).collect()),
        (kind, None) => {
            return Err(Error::Config(format!(
                "stage {} trains on aligned sRGB/RAW scenes (raw_pair_folder), not {kind:?}",
                cfg.stage
            )))
        }
    };
    if data.is_empty() {
        return Err(Error::Data(format!("no usable training material in {}", spec.root.display())));
    }
    let split = split_indices(data.len(), spec.split, cfg.seed);
    info!(
        "{} items: {} train, {} validation, {} test",
        data.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let train = select(&data, &split.train);
    let val = (!split.val.is_empty()).then(|| select(&data, &split.val));
    Ok((train, val))
}

fn select(data: &TrainData, idx: &[usize]) -> TrainData {
    match data {
        TrainData::Scenes(v) => TrainData::Scenes(idx.iter().map(|&i| v[i].clone()).collect()),
        TrainData::Pairs(v) => TrainData::Pairs(idx.iter().map(|&i| v[i].clone()).collect()),
        TrainData::Srgb(v) => TrainData::Srgb(idx.iter().map(|&i| v[i].clone()).collect()),
    }
}

fn pair_domain(mode: DenoiseMode) -> PairDomain {
    match mode {
        DenoiseMode::Raw => PairDomain::RawPacked,
        DenoiseMode::Srgb => PairDomain::Srgb,
    }
}

/// Sorts prerequisite checkpoints into the slots a stage reads them from,
/// by the stage recorded in each manifest.
pub fn stage_inputs(checkpoints: &[Checkpoint]) -> Result<StageInputs> {
    let mut inputs = StageInputs::default();
    for c in checkpoints {
        let slot = match c.manifest.stage.parse::<Stage>() {
            Ok(Stage::Rgb2raw) => &mut inputs.rgb2raw,
            Ok(Stage::Raw2rgb) => &mut inputs.raw2rgb,
            Ok(Stage::JointFinetune | Stage::NoisyFinetune) => &mut inputs.cycle,
            _ => {
                return Err(Error::Config(format!(
                    "a {} checkpoint is not an input to any training stage",
                    c.manifest.stage
                )))
            }
        };
        if slot.is_some() {
            return Err(Error::Config(format!("two {} checkpoints given", c.manifest.stage)));
        }
        *slot = Some(c.clone());
    }
    Ok(inputs)
}

pub fn cmd_train(cfg: &TrainConfig, checkpoints: &[Checkpoint], out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let inputs = stage_inputs(checkpoints)?;
    let (train, val) = load_stage_data(cfg)?;
    let text = cfg.to_toml()?;
    write_atomic(&out_dir.join(format!("{}_config.toml", cfg.stage)), text.as_bytes())?;
    run_training(cfg, &train, val.as_ref(), &inputs, Some(out_dir))
}

/// Largest even-sized top-left window.
fn even_crop(t: &Tensor) -> Result<Tensor> {
    let (h, w) = (t.height() & !1, t.width() & !1);
    if h == 0 || w == 0 {
        return Err(dim_err(format!("{}x{} image is too small", t.height(), t.width())));
    }
    if (h, w) == (t.height(), t.width()) {
        Ok(t.clone())
    } else {
        t.crop(0, 0, h, w)
    }
}

/// Writes one synthetic pair per sRGB image of `input_dir` into
/// `out_dir/{image stem}`. Every image draws from its own seeded stream.
pub fn cmd_synth(input_dir: &Path, ckpt: &Checkpoint, mode: DenoiseMode, out_dir: &Path, seed: u64) -> Result<Vec<String>> {
    let spec = DatasetSpec {
        blur_sigma: 0.0,
        ..DatasetSpec::new(input_dir, DatasetKind::SrgbFolder)
    };
    let images = load_srgb_folder(&spec)?;
    let (rgb2raw, cycle) = match mode {
        DenoiseMode::Raw => (Some(load_rgb2raw(ckpt)?), None),
        DenoiseMode::Srgb => (None, Some(load_cycle(ckpt)?)),
    };
    let mut names = Vec::new();
    for (i, (name, img)) in images.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let img = even_crop(img)?;
        let pair = match (&rgb2raw, &cycle) {
            (Some(m), _) => synth_raw_pairs(&img, m, &mut rng)?,
            (_, Some(c)) => synth_srgb_pairs(&img, c, &mut rng)?,
            _ => unreachable!(),
        };
        let stem = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| name.clone());
        save_pair(&out_dir.join(&stem), &pair)?;
        names.push(stem);
    }
    Ok(names)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_input: f64,
    pub ssim_input: f64,
}

fn quality(input: &Tensor, output: &Tensor, reference: &Tensor) -> Result<Quality> {
    Ok(Quality {
        psnr: psnr(output, reference, 1.0)?,
        ssim: ssim(output, reference, 1.0)?,
        psnr_input: psnr(input, reference, 1.0)?,
        ssim_input: ssim(input, reference, 1.0)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DenoiseReport {
    pub input: PathBuf,
    pub output: PathBuf,
    pub mode: DenoiseMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Quality>,
}

/// Path of the metrics record written next to a command output.
pub fn metrics_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".metrics.json");
    output.with_file_name(name)
}

/// Denoises an sRGB image (`.png` etc.) or a RAW array (`.bin` with a JSON
/// sidecar). RAW mode takes the noise parameters from `noise` or, failing
/// that, from the input's sidecar. RAW frames are unified to RGGB and the
/// output covers the unified window. With a reference, PSNR/SSIM of input
/// and output are written to [`metrics_path`].
pub fn cmd_denoise(
    input: &Path,
    ckpt: &Checkpoint,
    mode: DenoiseMode,
    noise: Option<NoiseParams>,
    reference: Option<&Path>,
    output: &Path,
) -> Result<DenoiseReport> {
    let model = load_denoiser(ckpt, mode)?;
    let (report_noise, metrics) = match mode {
        DenoiseMode::Srgb => {
            let x = read_image(input)?;
            let reference = reference.map(read_image).transpose()?;
            if let Some(r) = &reference {
                r.ensure_same_shape(&x, "reference")?;
            }
            let y = model.infer(&x, None)?;
            write_png16(output, &y)?;
            (None, reference.map(|r| quality(&x, &y, &r)).transpose()?)
        }
        DenoiseMode::Raw => {
            let (raw, meta) = read_raw(input)?;
            let params = noise.or(meta.noise).ok_or_else(|| {
                Error::Argument(format!(
                    "RAW denoising needs noise parameters: pass --noise or add them to {}'s sidecar",
                    input.display()
                ))
            })?;
            NoiseParams::new(params.shot, params.read)?;
            let unified = bayer::unify_pattern(&raw)?;
            let packed = bayer::pack_tensor(unified.data());
            let map = noise_level_map_tensor(&packed, params);
            let y = bayer::unpack_tensor(&model.infer(&packed, Some(&map))?);
            let out = RawMosaic::new(y, bayer::BayerPattern::Rggb)?;
            write_raw(output, &out, None)?;
            let metrics = match reference {
                Some(p) => {
                    let (r, _) = read_raw(p)?;
                    if (r.height(), r.width(), r.pattern()) != (raw.height(), raw.width(), raw.pattern()) {
                        return Err(dim_err("reference mosaic does not match the input"));
                    }
                    let r = bayer::unify_pattern(&r)?;
                    Some(quality(unified.data(), out.data(), r.data())?)
                }
                None => None,
            };
            (Some(params), metrics)
        }
    };
    let report = DenoiseReport {
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        mode,
        noise: report_noise,
        metrics,
    };
    if report.metrics.is_some() {
        write_atomic(&metrics_path(output), &to_json(&report)?)?;
    }
    Ok(report)
}

/// Edge-replicates an image up to even dimensions.
fn pad_even(t: &Tensor) -> Tensor {
    let (c, h, w) = t.shape();
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    Tensor::from_fn(c, ph, pw, |ch, y, x| t.at(ch, y.min(h - 1), x.min(w - 1)))
}

/// Re-renders `source` with the colors of the registered `target` and
/// writes the result; registration is the caller's job.
pub fn color_match_images(model: &CycleIsp, source: &Tensor, target: &Tensor) -> Result<Tensor> {
    source.ensure_same_shape(target, "color match source/target")?;
    let (_, h, w) = source.shape();
    if h < 2 || w < 2 {
        return Err(dim_err(format!("{h}x{w} image is too small")));
    }
    let out = model.color_match(&pad_even(source), &pad_even(target))?;
    if out.shape() == source.shape() {
        Ok(out)
    } else {
        out.crop(0, 0, h, w)
    }
}

pub fn cmd_color_match(source: &Path, target: &Path, ckpt: &Checkpoint, output: &Path) -> Result<Tensor> {
    let model = load_cycle(ckpt)?;
    if ckpt.manifest.stage != Stage::JointFinetune.name() {
        warn!("color matching with a {} checkpoint; the clean joint checkpoint is the default", ckpt.manifest.stage);
    }
    let s = read_image(source)?;
    let t = read_image(target)?;
    let out = color_match_images(&model, &s, &t)?;
    write_png16(output, &out)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_input: f64,
    pub ssim_input: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalTable {
    pub checkpoint_stage: String,
    pub mode: DenoiseMode,
    pub rows: Vec<EvalRow>,
    /// Means over the rows.
    pub mean: Quality,
}

fn load_eval_pairs(dir: &Path, domain: PairDomain) -> Result<Vec<(String, PairSample)>> {
    let pairs = match load_pairs(dir) {
        Ok(p) => p,
        Err(Error::Data(_)) => {
            let scenes = load_pair_folder(dir)?;
            scenes
                .iter()
                .filter_map(|s| PairSample::from_scene(s, domain).map(|p| p.map(|p| (s.name.clone(), p))))
                .collect::<Result<_>>()?
        }
        Err(e) => return Err(e),
    };
    if pairs.is_empty() {
        return Err(Error::Data(format!("no {domain:?} pairs in {}", dir.display())));
    }
    if let Some((name, _)) = pairs.iter().find(|(_, p)| p.domain != domain) {
        return Err(Error::Config(format!("pair {name} is not a {domain:?} pair")));
    }
    Ok(pairs)
}

/// Denoises every pair of `dir` (saved pairs or scene directories) and
/// tabulates PSNR/SSIM of input and output against the clean member.
pub fn evaluate_pairs(model: &Denoiser, dir: &Path) -> Result<Vec<EvalRow>> {
    let mode = model.config.mode;
    let pairs = load_eval_pairs(dir, pair_domain(mode))?;
    pairs
        .iter()
        .map(|(name, p)| {
            let map = match mode {
                DenoiseMode::Raw => Some(p.noise_map().ok_or_else(|| {
                    Error::Argument(format!("RAW pair {name} carries no noise parameters"))
                })?),
                DenoiseMode::Srgb => None,
            };
            let out = model.infer(&p.noisy, map.as_ref())?;
            let q = quality(&p.noisy, &out, &p.clean)?;
            Ok(EvalRow {
                name: name.clone(),
                psnr: q.psnr,
                ssim: q.ssim,
                psnr_input: q.psnr_input,
                ssim_input: q.ssim_input,
            })
        })
        .collect()
}

pub fn aggregate(rows: &[EvalRow]) -> Quality {
    let n = rows.len() as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Quality {
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        psnr_input: mean(|r| r.psnr_input),
        ssim_input: mean(|r| r.ssim_input),
    }
}

/// Evaluates a denoiser checkpoint on a pair folder and writes the table
/// as JSON to `output`.
pub fn cmd_eval(pairs_dir: &Path, ckpt: &Checkpoint, output: &Path) -> Result<EvalTable> {
    let (mode, denoiser) = match ckpt.model_spec() {
        ModelSpec::Denoiser { denoiser } => (denoiser.mode, *denoiser),
        other => return Err(Error::Config(format!("eval needs a denoiser checkpoint, got {}", other.kind()))),
    };
    let model = ckpt.into_denoiser(denoiser)?;
    let rows = evaluate_pairs(&model, pairs_dir)?;
    let table = EvalTable {
        checkpoint_stage: ckpt.manifest.stage.clone(),
        mode,
        mean: aggregate(&rows),
        rows,
    };
    write_atomic(output, &to_json(&table)?)?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamReport {
    /// Per-component counts, keyed by name.
    pub components: BTreeMap<String, usize>,
}

/// Parameter counts of the networks a training config describes.
pub fn count_params(cycle: &CycleConfig, denoiser: &DenoiserConfig) -> ParamReport {
    let mut c = BTreeMap::new();
    let spec = BlockSpec {
        channels: denoiser.channels,
        reduction: denoiser.reduction,
        sa_kernel: denoiser.sa_kernel,
    };
    c.insert("dab".into(), Dab::param_count(spec));
    c.insert("rrg".into(), Rrg::param_count(spec, denoiser.n_dab));
    c.insert(format!("denoiser_{}", denoiser.mode), Denoiser::param_count(denoiser));
    c.insert("rgb2raw".into(), Rgb2Raw::param_count(&cycle.rgb2raw));
    c.insert("raw2rgb".into(), Raw2Rgb::param_count(&cycle.raw2rgb, &cycle.color_corr));
    c.insert("cycleisp".into(), CycleIsp::param_count(cycle));
    ParamReport { components: c }
}
