use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CycleConfig, DenoiseMode, DenoiserConfig};
use crate::objectives::{DEFAULT_BETA, DEFAULT_EPSILON};
use crate::pipeline::dataset::{DatasetKind, DatasetSpec};
use crate::pipeline::optim::{AdamConfig, LrSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rgb2raw,
    Raw2rgb,
    JointFinetune,
    NoisyFinetune,
    DenoiserRaw,
    DenoiserSrgb,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Rgb2raw,
        Stage::Raw2rgb,
        Stage::JointFinetune,
        Stage::NoisyFinetune,
        Stage::DenoiserRaw,
        Stage::DenoiserSrgb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Rgb2raw => "rgb2raw",
            Stage::Raw2rgb => "raw2rgb",
            Stage::JointFinetune => "joint_finetune",
            Stage::NoisyFinetune => "noisy_finetune",
            Stage::DenoiserRaw => "denoiser_raw",
            Stage::DenoiserSrgb => "denoiser_srgb",
        }
    }

    pub fn denoise_mode(self) -> Option<DenoiseMode> {
        match self {
            Stage::DenoiserRaw => Some(DenoiseMode::Raw),
            Stage::DenoiserSrgb => Some(DenoiseMode::Srgb),
            _ => None,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks, schedules and batch sizes.
    Full,
    /// Width-16 models and short schedules for CPU runs.
    Toy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Floor inside the log term of the sRGB->RAW loss.
    pub epsilon: f64,
    /// Weight of the sRGB->RAW term in the joint loss.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: DEFAULT_EPSILON,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub cycle: CycleConfig,
    pub denoiser: DenoiserConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub preset: Preset,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per epoch; 0 means one pass over the training set.
    pub steps_per_epoch: usize,
    pub optimizer: AdamConfig,
    /// Learning rate by epoch.
    pub schedule: LrSchedule,
    pub loss: LossConfig,
    /// Training metrics are logged every this many steps.
    pub log_every: usize,
    /// Validation (and best-checkpoint selection) every this many epochs.
    pub validate_every: usize,
    pub model: ModelConfig,
    pub data: DatasetSpec,
}

impl TrainConfig {
    pub fn preset(stage: Stage, preset: Preset) -> Self {
        match preset {
            Preset::Full => Self::full(stage),
            Preset::Toy => Self::toy(stage),
        }
    }

    /// Full settings: CycleISP branches 1200 epochs at batch 4 with
    /// the rate cut to 1e-5 after 800; fine-tuning 600 epochs at batch 1
    /// and 1e-5; denoisers 65 epochs at batch 16 with 1e-4 decayed by 10
    /// every 25 epochs. Crops are 128×128.
    pub fn full(stage: Stage) -> Self {
        let (epochs, batch, schedule) = match stage {
            Stage::Rgb2raw | Stage::Raw2rgb => (
                1200,
                4,
                LrSchedule {
                    initial: 1e-4,
                    factor: 0.1,
                    boundaries: vec![800],
                },
            ),
            Stage::JointFinetune | Stage::NoisyFinetune => (600, 1, LrSchedule::constant(1e-5)),
            Stage::DenoiserRaw | Stage::DenoiserSrgb => (65, 16, LrSchedule::every(1e-4, 0.1, 25, 65)),
        };
        let mode = stage.denoise_mode().unwrap_or(DenoiseMode::Raw);
        TrainConfig {
            stage,
            preset: Preset::Full,
            seed: 0,
            epochs,
            batch_size: batch,
            steps_per_epoch: 0,
            optimizer: AdamConfig::default(),
            schedule,
            loss: LossConfig::default(),
            log_every: 100,
            validate_every: 1,
            model: ModelConfig {
                cycle: CycleConfig::full(),
                denoiser: DenoiserConfig::full(mode),
            },
            data: DatasetSpec::new("", default_kind(stage)),
        }
    }

    /// CPU-scale settings: width-16 models, 64×64 crops, no flips, a few
    /// hundred steps and a larger learning rate cut by 10 at 75%.
    pub fn toy(stage: Stage) -> Self {
        let mut c = Self::full(stage);
        c.preset = Preset::Toy;
        let (epochs, batch, lr) = match stage {
            Stage::Rgb2raw | Stage::Raw2rgb => (250, 1, 2e-3),
            Stage::JointFinetune | Stage::NoisyFinetune => (100, 1, 2e-4),
            Stage::DenoiserRaw | Stage::DenoiserSrgb => (40, 4, 1e-3),
        };
        c.epochs = epochs;
        c.batch_size = batch;
        c.schedule = LrSchedule {
            initial: lr,
            factor: 0.1,
            boundaries: vec![epochs * 3 / 4],
        };
        if stage.denoise_mode().is_some() {
            c.steps_per_epoch = 25;
        }
        c.log_every = 25;
        c.validate_every = 25;
        c.model.cycle = CycleConfig::toy();
        c.model.denoiser = DenoiserConfig::toy(stage.denoise_mode().unwrap_or(DenoiseMode::Raw));
        c.data.crop = 64;
        c.data.flip_horizontal = false;
        c.data.flip_vertical = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.log_every == 0 || self.validate_every == 0 {
            return Err(Error::Config("log_every and validate_every must be positive".into()));
        }
        if !(self.loss.epsilon > 0.0) || !(self.loss.beta > 0.0 && self.loss.beta < 1.0) {
            return Err(Error::Config("loss.epsilon must be > 0 and loss.beta in (0, 1)".into()));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.model.cycle.validate()?;
        self.model.denoiser.validate()?;
        if let Some(mode) = self.stage.denoise_mode() {
            if self.model.denoiser.mode != mode {
                return Err(Error::Config(format!(
                    "stage {} needs model.denoiser.mode = {mode}, got {}",
                    self.stage, self.model.denoiser.mode
                )));
            }
        }
        self.data.validate()
    }

    /// Builds a config from an optional TOML document and `key=value`
    /// overrides. The stage and preset (default `full`) select the base
    /// values; the file and then the overrides are layered on top.
    pub fn from_sources(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut layered = match file {
            Some(text) => text
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("config file: {e}")))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut layered, o)?;
        }
        let stage: Stage = match layered.get("stage") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("`stage` must be a string".into())),
            None => return Err(Error::Config("`stage` is required".into())),
        };
        let preset = match layered.get("preset") {
            Some(v) => v
                .clone()
                .try_into::<Preset>()
                .map_err(|e| Error::Config(format!("preset: {e}")))?,
            None => Preset::Full,
        };
        let base = toml::Table::try_from(TrainConfig::preset(stage, preset)).map_err(|e| Error::Serde(e.to_string()))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(layered));
        let cfg: TrainConfig = merged.try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn default_kind(stage: Stage) -> DatasetKind {
    match stage {
        Stage::DenoiserRaw | Stage::DenoiserSrgb => DatasetKind::SrgbFolder,
        _ => DatasetKind::RawPairFolder,
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal and taken
/// as a bare string if that fails.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Argument(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Argument(format!("override {spec:?} has an empty key")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Argument(format!("override {spec:?}: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
