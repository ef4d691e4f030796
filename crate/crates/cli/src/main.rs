//! `cycleisp` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 dimension
//! or Bayer-pattern error, 4 data error (empty or corrupt inputs, checksum
//! mismatch, non-finite loss), 5 I/O or image codec error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cycleisp::app;
use cycleisp::models::DenoiseMode;
use cycleisp::noise::NoiseParams;
use cycleisp::pipeline::{Checkpoint, TrainConfig};
use cycleisp::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cycleisp", version, about = "sRGB <-> RAW pipeline modeling, noisy pair synthesis, denoising and color matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML training config; unset keys take the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override on the config tree (repeatable), e.g.
    /// `--set stage=rgb2raw --set preset=toy --set data.crop=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self, extra: &[String]) -> Result<TrainConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        TrainConfig::from_sources(text.as_deref(), &overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one stage. The stage comes from the config (`stage = ...`).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Prerequisite checkpoints (branches for joint fine-tuning, a
        /// joint checkpoint for noisy fine-tuning or pair synthesis).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Dataset root; overrides `data.root`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output directory for checkpoints and the metrics stream.
        #[arg(long)]
        output: PathBuf,
    },
    /// Synthesize clean/noisy pairs from a folder of sRGB images.
    Synth {
        /// Folder of sRGB images.
        #[arg(long)]
        input: PathBuf,
        /// sRGB->RAW or CycleISP checkpoint (raw mode); CycleISP checkpoint (srgb mode).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_mode, default_value = "raw")]
        mode: DenoiseMode,
        /// Output folder; one subdirectory per image.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Denoise one image (`.png`) or RAW array (`.bin` with a JSON sidecar).
    Denoise {
        #[arg(long)]
        input: PathBuf,
        /// Denoiser checkpoint; its mode must match `--mode`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: DenoiseMode,
        #[arg(long)]
        output: PathBuf,
        /// Clean reference; enables the PSNR/SSIM record.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// RAW noise factors as `shot,read`; defaults to the input sidecar.
        #[arg(long, value_parser = parse_noise)]
        noise: Option<NoiseParams>,
    },
    /// Evaluate a denoiser on a folder of pairs and write a JSON table.
    Eval {
        /// Pair folder (saved pairs or clean/noisy scene directories).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Table file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-render a source image with the colors of a registered target.
    ColorMatch {
        /// Source image (structure).
        #[arg(long)]
        input: PathBuf,
        /// Registered target image (colors), same size as the source.
        #[arg(long)]
        target: PathBuf,
        /// CycleISP checkpoint; the clean joint fine-tuned one by default.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print parameter counts of the configured networks.
    CountParams {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn parse_mode(s: &str) -> std::result::Result<DenoiseMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_noise(s: &str) -> std::result::Result<NoiseParams, String> {
    let (a, b) = s.split_once(',').ok_or("expected shot,read")?;
    let shot: f64 = a.trim().parse().map_err(|e| format!("shot: {e}"))?;
    let read: f64 = b.trim().parse().map_err(|e| format!("read: {e}"))?;
    NoiseParams::new(shot, read).map_err(|e| e.to_string())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn load(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            checkpoint,
            input,
            output,
        } => {
            let extra: Vec<String> = input.iter().map(|p| format!("data.root={:?}", p.display().to_string())).collect();
            let cfg = cfg.load(&extra)?;
            let ckpts = checkpoint.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let out = app::cmd_train(&cfg, &ckpts, &output)?;
            log::info!(
                "stage {} finished at step {}; best validation PSNR {:?}",
                cfg.stage,
                out.last.manifest.step,
                out.best.manifest.psnr
            );
        }
        Command::Synth {
            input,
            checkpoint,
            mode,
            output,
            seed,
        } => {
            let names = app::cmd_synth(&input, &load(&checkpoint)?, mode, &output, seed)?;
            log::info!("wrote {} pairs to {}", names.len(), output.display());
        }
        Command::Denoise {
            input,
            checkpoint,
            mode,
            output,
            reference,
            noise,
        } => {
            let report = app::cmd_denoise(&input, &load(&checkpoint)?, mode, noise, reference.as_deref(), &output)?;
            print_json(&report)?;
        }
        Command::Eval {
            input,
            checkpoint,
            output,
        } => {
            let table = app::cmd_eval(&input, &load(&checkpoint)?, &output)?;
            print_json(&table.mean)?;
        }
        Command::ColorMatch {
            input,
            target,
            checkpoint,
            output,
        } => {
            app::cmd_color_match(&input, &target, &load(&checkpoint)?, &output)?;
        }
        Command::CountParams { cfg } => {
            // Counting needs no stage-specific setting; default to the RAW
            // denoiser stage of the full preset.
            let mut extra = Vec::new();
            if cfg.config.is_none() && !cfg.overrides.iter().any(|o| o.trim_start().starts_with("stage")) {
                extra.push("stage=denoiser_raw".to_string());
            }
            let cfg = cfg.load(&extra)?;
            print_json(&app::count_params(&cfg.model.cycle, &cfg.model.denoiser))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
