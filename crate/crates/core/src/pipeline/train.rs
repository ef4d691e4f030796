//! The staged training loops.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bayer::RawMosaic;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::models::{CycleIsp, DenoiseMode, Denoiser, NoiseSwitch, Raw2Rgb, Rgb2Raw};
use crate::nn::{Grads, ParamStore};
use crate::noise::extract_residue;
use crate::objectives::{loss_joint_with_grad, loss_r2s_with_grad, loss_s2r_with_grad, LossValue};
use crate::pipeline::checkpoint::{cycle_checkpoint, Checkpoint, ModelSpec};
use crate::pipeline::config::{Stage, TrainConfig};
use crate::pipeline::dataset::Scene;
use crate::pipeline::io::write_atomic;
use crate::pipeline::optim::Adam;
use crate::pipeline::pairs::{synth_raw_pairs, synth_srgb_pairs, PairDomain, PairSample};
use crate::tensor::Tensor;

/// Training material for a stage.
#[derive(Clone, Debug)]
pub enum TrainData {
    /// Aligned sRGB/RAW scenes (clean, and noisy for noisy fine-tuning).
    Scenes(Vec<Scene>),
    /// Ready-made clean/noisy pairs for the denoisers.
    Pairs(Vec<PairSample>),
    /// Plain sRGB images; denoiser pairs are synthesized on the fly.
    Srgb(Vec<Tensor>),
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Scenes(v) => v.len(),
            TrainData::Pairs(v) => v.len(),
            TrainData::Srgb(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checkpoints a stage builds on.
#[derive(Clone, Debug, Default)]
pub struct StageInputs {
    pub rgb2raw: Option<Checkpoint>,
    pub raw2rgb: Option<Checkpoint>,
    pub cycle: Option<Checkpoint>,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub stage: String,
    pub split: String,
    pub lr: f64,
    pub components: BTreeMap<String, f64>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Best by validation PSNR; the last checkpoint when there is no
    /// validation data.
    pub best: Checkpoint,
    pub history: Vec<MetricRecord>,
    /// Mean batch loss of the final optimizer step.
    pub final_loss: f64,
}

enum Net {
    Rgb2Raw(Rgb2Raw),
    Raw2Rgb(Raw2Rgb),
    Cycle(CycleIsp),
    Denoiser(Denoiser),
}

impl Net {
    fn stores(&self) -> Vec<&ParamStore> {
        match self {
            Net::Rgb2Raw(m) => vec![&m.params],
            Net::Raw2Rgb(m) => vec![&m.params],
            Net::Cycle(m) => vec![&m.rgb2raw.params, &m.raw2rgb.params],
            Net::Denoiser(m) => vec![&m.params],
        }
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        match self {
            Net::Rgb2Raw(m) => vec![&mut m.params],
            Net::Raw2Rgb(m) => vec![&mut m.params],
            Net::Cycle(m) => vec![&mut m.rgb2raw.params, &mut m.raw2rgb.params],
            Net::Denoiser(m) => vec![&mut m.params],
        }
    }

    fn checkpoint(&self, stage: Stage, step: u64, seed: u64) -> Checkpoint {
        let s = stage.name();
        match self {
            Net::Rgb2Raw(m) => Checkpoint::from_store(ModelSpec::Rgb2Raw { rgb2raw: m.config }, &m.params, s, step, seed),
            Net::Raw2Rgb(m) => Checkpoint::from_store(
                ModelSpec::Raw2Rgb {
                    raw2rgb: m.config,
                    color_corr: m.color_config,
                },
                &m.params,
                s,
                step,
                seed,
            ),
            Net::Cycle(m) => cycle_checkpoint(m, s, step, seed),
            Net::Denoiser(m) => Checkpoint::from_store(ModelSpec::Denoiser { denoiser: m.config }, &m.params, s, step, seed),
        }
    }
}

/// What a sample pass produced: loss, prediction and target for metrics.
struct Pass {
    loss: LossValue,
    pred: Tensor,
    target: Tensor,
}

enum Sample {
    Scene(Scene),
    Pair(PairSample),
}

fn need<T>(v: Option<T>, stage: Stage, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("stage {stage} needs {what}")))
}

fn scene_parts(s: &Scene, stage: Stage, noisy: bool) -> Result<(&Tensor, &RawMosaic, Option<(&Tensor, &RawMosaic)>)> {
    let srgb = need(s.clean_srgb.as_ref(), stage, "clean sRGB images")?;
    let raw = need(s.clean_raw.as_ref(), stage, "clean RAW frames")?;
    let n = if noisy {
        Some((
            need(s.noisy_srgb.as_ref(), stage, "noisy sRGB images (real pairs)")?,
            need(s.noisy_raw.as_ref(), stage, "noisy RAW frames (real pairs)")?,
        ))
    } else {
        None
    };
    Ok((srgb, raw, n))
}

fn run_sample(
    net: &Net,
    stage: Stage,
    cfg: &TrainConfig,
    sample: &Sample,
    grads: Option<&mut [Grads]>,
    rng: &mut ChaCha8Rng,
) -> Result<Pass> {
    let eps = cfg.loss.epsilon;
    match (net, sample) {
        (Net::Rgb2Raw(m), Sample::Scene(s)) => {
            let (srgb, raw, _) = scene_parts(s, stage, false)?;
            let (out, cache) = m.forward(srgb)?;
            let (loss, d) = loss_s2r_with_grad(out.raw.data(), raw.data(), eps)?;
            if let Some(g) = grads {
                m.backward(&cache, &d, &mut g[0]);
            }
            Ok(Pass {
                loss,
                pred: out.raw.into_data(),
                target: raw.data().clone(),
            })
        }
        (Net::Raw2Rgb(m), Sample::Scene(s)) => {
            let (srgb, raw, _) = scene_parts(s, stage, false)?;
            let (rgb, cache) = m.forward(raw, srgb)?;
            let (loss, d) = loss_r2s_with_grad(&rgb, srgb)?;
            if let Some(g) = grads {
                m.backward(&cache, &d, &mut g[0]);
            }
            Ok(Pass {
                loss,
                pred: rgb,
                target: srgb.clone(),
            })
        }
        (Net::Cycle(m), Sample::Scene(s)) => {
            let noisy = stage == Stage::NoisyFinetune;
            let (srgb, raw, n) = scene_parts(s, stage, noisy)?;
            let residue = match n {
                Some((_, nraw)) => Some(extract_residue(nraw, raw)?),
                None => None,
            };
            let switch = match &residue {
                Some(r) => NoiseSwitch::Residue(r),
                None => NoiseSwitch::Off,
            };
            let target = n.map(|(t, _)| t).unwrap_or(srgb);
            let (out, cache) = m.forward(srgb, switch, rng)?;
            let (loss, jg) = loss_joint_with_grad(out.raw_clean.data(), raw.data(), &out.rgb, target, cfg.loss.beta, eps)?;
            if let Some(g) = grads {
                let (g1, g2) = g.split_at_mut(1);
                m.backward(&cache, &jg, &mut g1[0], &mut g2[0]);
            }
            Ok(Pass {
                loss,
                pred: out.rgb,
                target: target.clone(),
            })
        }
        (Net::Denoiser(m), Sample::Pair(p)) => {
            let map = p.noise_map();
            if m.config.mode == DenoiseMode::Raw && map.is_none() {
                return Err(Error::Config("RAW denoiser training needs pairs with known noise parameters".into()));
            }
            let (out, cache) = m.forward(&p.noisy, map.as_ref())?;
            let (loss, d) = loss_r2s_with_grad(&out, &p.clean)?;
            if let Some(g) = grads {
                m.backward(&cache, &d, &mut g[0]);
            }
            Ok(Pass {
                loss,
                pred: out,
                target: p.clean.clone(),
            })
        }
        _ => Err(Error::Config(format!("stage {stage} got the wrong kind of data"))),
    }
}

/// Turns raw training material into per-step samples.
struct Feeder<'a> {
    stage: Stage,
    data: &'a TrainData,
    crop: usize,
    flips: (bool, bool),
    synth: Option<&'a CycleIsp>,
}

impl Feeder<'_> {
    fn check(&self) -> Result<()> {
        let stage = self.stage;
        match (stage, self.data) {
            (_, d) if d.is_empty() => Err(Error::Data(format!("stage {stage} got an empty dataset"))),
            (Stage::Rgb2raw | Stage::Raw2rgb | Stage::JointFinetune, TrainData::Scenes(v)) => {
                v.iter().try_for_each(|s| scene_parts(s, stage, false).map(|_| ()))
            }
            (Stage::NoisyFinetune, TrainData::Scenes(v)) => {
                v.iter().try_for_each(|s| scene_parts(s, stage, true).map(|_| ()))
            }
            (Stage::DenoiserRaw | Stage::DenoiserSrgb, TrainData::Pairs(v)) => {
                let want = if stage == Stage::DenoiserRaw {
                    PairDomain::RawPacked
                } else {
                    PairDomain::Srgb
                };
                if v.iter().any(|p| p.domain != want) {
                    return Err(Error::Config(format!("stage {stage} needs {want:?} pairs")));
                }
                Ok(())
            }
            (Stage::DenoiserRaw | Stage::DenoiserSrgb, TrainData::Srgb(_)) => {
                need(self.synth, stage, "a CycleISP checkpoint to synthesize pairs from sRGB images").map(|_| ())
            }
            _ => Err(Error::Config(format!("stage {stage} cannot train on this kind of data"))),
        }
    }

    fn sample(&self, idx: usize, train: bool, rng: &mut ChaCha8Rng) -> Result<Sample> {
        match self.data {
            TrainData::Scenes(v) => {
                let s = &v[idx];
                if train {
                    Ok(Sample::Scene(s.random_crop(self.crop, self.flips.0, self.flips.1, rng)?))
                } else {
                    Ok(Sample::Scene(center_crop_scene(s, self.crop)?))
                }
            }
            TrainData::Pairs(v) => {
                let p = &v[idx];
                let size = match p.domain {
                    PairDomain::RawPacked => self.crop / 2,
                    PairDomain::Srgb => self.crop,
                };
                if train {
                    Ok(Sample::Pair(p.random_crop(size, rng)?))
                } else {
                    let (_, h, w) = p.clean.shape();
                    let (ch, cw) = (size.min(h), size.min(w));
                    Ok(Sample::Pair(p.crop((h - ch) / 2, (w - cw) / 2, ch, cw)?))
                }
            }
            TrainData::Srgb(v) => {
                let img = &v[idx];
                let (h, w) = (img.height(), img.width());
                let (ch, cw) = (self.crop.min(h - h % 2), self.crop.min(w - w % 2));
                let (top, left) = if train {
                    (2 * rng.gen_range(0..=(h - ch) / 2), 2 * rng.gen_range(0..=(w - cw) / 2))
                } else {
                    (((h - ch) / 4) * 2, ((w - cw) / 4) * 2)
                };
                let crop = img.crop(top, left, ch, cw)?;
                let cycle = self.synth.expect("checked");
                let pair = if self.stage == Stage::DenoiserRaw {
                    synth_raw_pairs(&crop, &cycle.rgb2raw, rng)?
                } else {
                    synth_srgb_pairs(&crop, cycle, rng)?
                };
                Ok(Sample::Pair(pair))
            }
        }
    }
}

fn center_crop_scene(s: &Scene, size: usize) -> Result<Scene> {
    let (h, w) = match (&s.clean_raw, &s.clean_srgb) {
        (Some(r), _) => (r.height(), r.width()),
        (None, Some(t)) => (t.height(), t.width()),
        _ => return Ok(s.clone()),
    };
    let (ch, cw) = (size.min(h - h % 2), size.min(w - w % 2));
    s.crop(((h - ch) / 4) * 2, ((w - cw) / 4) * 2, ch, cw, false, false)
}

fn build_net(cfg: &TrainConfig, inputs: &StageInputs, rng: &mut ChaCha8Rng) -> Result<Net> {
    let stage = cfg.stage;
    let cc = cfg.model.cycle;
    Ok(match stage {
        Stage::Rgb2raw => Net::Rgb2Raw(Rgb2Raw::new(cc.rgb2raw, rng)?),
        Stage::Raw2rgb => Net::Raw2Rgb(Raw2Rgb::new(cc.raw2rgb, cc.color_corr, rng)?),
        Stage::JointFinetune => {
            let a = need(inputs.rgb2raw.as_ref(), stage, "an rgb2raw checkpoint")?;
            let b = need(inputs.raw2rgb.as_ref(), stage, "a raw2rgb checkpoint")?;
            Net::Cycle(CycleIsp {
                config: cc,
                rgb2raw: a.into_rgb2raw(cc.rgb2raw)?,
                raw2rgb: b.into_raw2rgb(cc.raw2rgb, cc.color_corr)?,
            })
        }
        Stage::NoisyFinetune => {
            let c = need(inputs.cycle.as_ref(), stage, "a joint_finetune checkpoint")?;
            if c.manifest.stage != Stage::JointFinetune.name() {
                return Err(Error::Config(format!(
                    "stage {stage} needs a joint_finetune checkpoint, got one from {}",
                    c.manifest.stage
                )));
            }
            Net::Cycle(c.into_cycle(cc)?)
        }
        Stage::DenoiserRaw | Stage::DenoiserSrgb => Net::Denoiser(Denoiser::new(cfg.model.denoiser, rng)?),
    })
}

/// Seeded random stream `k` derived from the run seed.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

fn mean_components(passes: &[LossValue]) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for l in passes {
        *out.entry("total".into()).or_default() += l.value / passes.len() as f64;
        for (k, v) in &l.components {
            *out.entry(k.clone()).or_default() += v / passes.len() as f64;
        }
    }
    out
}

fn quality(pred: &Tensor, target: &Tensor) -> Result<(f64, f64)> {
    Ok((psnr(pred, target, 1.0)?, ssim(pred, target, 1.0)?))
}

struct MetricSink {
    file: Option<fs::File>,
    history: Vec<MetricRecord>,
}

impl MetricSink {
    fn emit(&mut self, rec: MetricRecord) -> Result<()> {
        info!(
            "{} {} step {} loss {:.6} psnr {:.2}",
            rec.stage,
            rec.split,
            rec.step,
            rec.components.get("total").copied().unwrap_or(f64::NAN),
            rec.psnr
        );
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io("metrics stream", e))?;
        }
        self.history.push(rec);
        Ok(())
    }
}

fn dump_nonfinite(out_dir: Option<&Path>, stage: Stage, step: u64, comps: &BTreeMap<String, f64>, net: &Net) -> Error {
    let detail = format!("loss components {comps:?}");
    if let Some(dir) = out_dir {
        let tensors: BTreeMap<String, bool> = net
            .stores()
            .iter()
            .flat_map(|s| s.iter().map(|(n, t)| (n.to_string(), t.is_finite())))
            .collect();
        let report = serde_json::json!({
            "stage": stage.name(),
            "step": step,
            "components": comps,
            "param_finite": tensors,
        });
        let path = dir.join(format!("{}_nonfinite.json", stage.name()));
        if let Err(e) = write_atomic(&path, report.to_string().as_bytes()) {
            warn!("could not write diagnostic dump: {e}");
        }
    }
    Error::NonFinite {
        stage: stage.name().into(),
        step: step as usize,
        detail,
    }
}

/// Runs one training stage. With `out_dir`, the metrics stream goes to
/// `{stage}_metrics.jsonl` and checkpoints to `{stage}_last.ckpt` (every
/// epoch) and `{stage}_best.ckpt`.
pub fn run_training(
    cfg: &TrainConfig,
    train: &TrainData,
    val: Option<&TrainData>,
    inputs: &StageInputs,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stage = cfg.stage;
    let mut init_rng = stream(cfg.seed, 0);
    let mut data_rng = stream(cfg.seed, 1);
    let mut net = build_net(cfg, inputs, &mut init_rng)?;

    let synth_model = match (stage, train) {
        (Stage::DenoiserRaw | Stage::DenoiserSrgb, TrainData::Srgb(_)) => {
            let c = need(inputs.cycle.as_ref(), stage, "a CycleISP checkpoint to synthesize pairs")?;
            Some(c.into_cycle(cfg.model.cycle)?)
        }
        _ => None,
    };
    let feeder = Feeder {
        stage,
        data: train,
        crop: cfg.data.crop,
        flips: (cfg.data.flip_horizontal, cfg.data.flip_vertical),
        synth: synth_model.as_ref(),
    };
    feeder.check()?;
    let val_feeder = match val {
        Some(v) if !v.is_empty() => {
            let f = Feeder { data: v, ..feeder };
            f.check()?;
            Some(f)
        }
        _ => None,
    };

    let mut sink = MetricSink {
        file: None,
        history: Vec::new(),
    };
    let (last_path, best_path): (Option<PathBuf>, Option<PathBuf>) = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mpath = dir.join(format!("{}_metrics.jsonl", stage.name()));
            sink.file = Some(fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?);
            (
                Some(dir.join(format!("{}_last.ckpt", stage.name()))),
                Some(dir.join(format!("{}_best.ckpt", stage.name()))),
            )
        }
        None => (None, None),
    };

    let mut adams: Vec<Adam> = net.stores().iter().map(|s| Adam::new(cfg.optimizer, s)).collect();
    let n = train.len();
    let steps_per_epoch = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        n.div_ceil(cfg.batch_size)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut step: u64 = 0;
    let mut final_loss = f64::NAN;
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at_epoch(epoch);
        for _ in 0..steps_per_epoch {
            let mut grads: Vec<Grads> = net.stores().iter().map(|s| Grads::zeros_like(s)).collect();
            let mut losses = Vec::with_capacity(cfg.batch_size);
            let mut last_pass = None;
            for _ in 0..cfg.batch_size {
                if cursor == n {
                    order.shuffle(&mut data_rng);
                    cursor = 0;
                }
                let sample = feeder.sample(order[cursor], true, &mut data_rng)?;
                cursor += 1;
                let pass = run_sample(&net, stage, cfg, &sample, Some(&mut grads), &mut data_rng)?;
                losses.push(pass.loss.clone());
                last_pass = Some(pass);
            }
            let comps = mean_components(&losses);
            let total = comps["total"];
            if !total.is_finite() || !grads.iter().all(Grads::is_finite) {
                return Err(dump_nonfinite(out_dir, stage, step, &comps, &net));
            }
            for g in &mut grads {
                g.scale(1.0 / cfg.batch_size as f64);
            }
            for ((adam, store), g) in adams.iter_mut().zip(net.stores_mut()).zip(&grads) {
                adam.step(store, g, lr);
            }
            final_loss = total;
            if step % cfg.log_every as u64 == 0 {
                let p = last_pass.expect("batch_size > 0");
                let (ps, ss) = quality(&p.pred, &p.target)?;
                sink.emit(MetricRecord {
                    step,
                    epoch,
                    stage: stage.name().into(),
                    split: "train".into(),
                    lr,
                    components: comps,
                    psnr: ps,
                    ssim: ss,
                })?;
            }
            step += 1;
        }

        let last_epoch = epoch + 1 == cfg.epochs;
        if let Some(path) = &last_path {
            net.checkpoint(stage, step, cfg.seed).save(path)?;
        }
        if (epoch + 1) % cfg.validate_every == 0 || last_epoch {
            if let Some(vf) = &val_feeder {
                let rec = validate(&net, stage, cfg, vf, step, epoch, lr)?;
                let score = rec.psnr;
                sink.emit(rec)?;
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    let mut ck = net.checkpoint(stage, step, cfg.seed);
                    ck.manifest.psnr = Some(score);
                    if let Some(p) = &best_path {
                        ck.save(p)?;
                    }
                    best = Some((score, ck));
                }
            }
        }
    }

    let last = net.checkpoint(stage, step, cfg.seed);
    let best = match best {
        Some((_, ck)) => ck,
        None => {
            if let Some(p) = &best_path {
                last.save(p)?;
            }
            last.clone()
        }
    };
    Ok(TrainOutcome {
        last,
        best,
        history: sink.history,
        final_loss,
    })
}

fn validate(net: &Net, stage: Stage, cfg: &TrainConfig, f: &Feeder<'_>, step: u64, epoch: usize, lr: f64) -> Result<MetricRecord> {
    // Fixed stream so every validation pass sees the same synthetic noise.
    let mut rng = stream(cfg.seed, 2);
    let mut losses = Vec::new();
    let (mut ps, mut ss) = (0.0, 0.0);
    for i in 0..f.data.len() {
        let sample = f.sample(i, false, &mut rng)?;
        let pass = run_sample(net, stage, cfg, &sample, None, &mut rng)?;
        let (p, s) = quality(&pass.pred, &pass.target)?;
        ps += p;
        ss += s;
        losses.push(pass.loss);
    }
    let k = f.data.len() as f64;
    Ok(MetricRecord {
        step,
        epoch,
        stage: stage.name().into(),
        split: "val".into(),
        lr,
        components: mean_components(&losses),
        psnr: ps / k,
        ssim: ss / k,
    })
}

/// Mean PSNR of the stage's prediction over `data` (center crops of the
/// configured size, or whole images when they are smaller).
pub fn evaluate_checkpoint(cfg: &TrainConfig, ckpt: &Checkpoint, data: &TrainData) -> Result<f64> {
    let mut rng = stream(cfg.seed, 0);
    let net = match cfg.stage {
        Stage::JointFinetune | Stage::NoisyFinetune => Net::Cycle(ckpt.into_cycle(cfg.model.cycle)?),
        _ => {
            let mut net = build_net(cfg, &StageInputs::default(), &mut rng)?;
            let expected = net.checkpoint(cfg.stage, 0, 0).manifest.model;
            for s in net.stores_mut() {
                ckpt.load_into(&expected, s)?;
            }
            net
        }
    };
    let feeder = Feeder {
        stage: cfg.stage,
        data,
        crop: cfg.data.crop,
        flips: (false, false),
        synth: None,
    };
    let rec = validate(&net, cfg.stage, cfg, &feeder, 0, 0, 0.0)?;
    Ok(rec.psnr)
}
