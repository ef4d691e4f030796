//! Data ingestion, pair synthesis, staged training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod io;
pub mod optim;
pub mod pairs;
pub mod train;

pub use checkpoint::{Checkpoint, Manifest, ModelSpec};
pub use config::{LossConfig, ModelConfig, Preset, Stage, TrainConfig};
pub use dataset::{prepare_corpus, CropStream, DatasetKind, DatasetSpec, Scene};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use pairs::{synth_raw_pairs, synth_srgb_pairs, PairDomain, PairSample, Provenance};
pub use train::{run_training, MetricRecord, StageInputs, TrainData, TrainOutcome};
