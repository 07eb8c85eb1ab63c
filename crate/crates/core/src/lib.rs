//! # strukt
//!
//! Music structure analysis with temporal adaptation: long audio windows are
//! analysed at a reduced frame rate (hop scaled by an integer ratio `N`) so a
//! whole song fits into one encoder pass at roughly the cost of a short
//! full-resolution window.
//!
//! The pipeline:
//!
//! ```text
//! AudioClip -> melgram (hop = N * h) -> encoder -> boundary / function heads
//!           -> peak picking -> SegmentTrack -> hit-rate F-measures, ACC
//! ```
//!
//! Modules:
//!
//! - [`audio`]: WAV ingestion, synthetic structured songs, window cropping
//! - [`frontend`]: STFT, mel filterbank and hop-scaled log-mel features
//! - [`annotations`]: segment tracks, vocabularies, frame-level targets
//! - [`nn`]: reverse-mode tape, parameter store and the Conformer-style encoder
//! - [`losses`]: contrastive, weighted BCE, smooth-L1, focal and the
//!   magnitude-normalised combination
//! - [`postprocess`]: peak picking and track reconstruction
//! - [`metrics`]: boundary hit rates and frame accuracy
//! - [`trainer`]: Adam training loop, full-song inference, model files
//! - [`harness`]: ablation grids and the cost profiler

pub mod annotations;
pub mod audio;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod postprocess;
pub mod trainer;

pub use annotations::{ActivationTargets, OutputGrid, Segment, SegmentTrack, Vocabulary, Window};
pub use audio::{AudioClip, SongSpec, Timbre};
pub use error::{Error, Result};
pub use frontend::{FeatureStats, FrontendConfig, MelGram};
pub use harness::{AblationSpec, CostRow};
pub use losses::{LossReport, LossWeights};
pub use matrix::Matrix;
pub use metrics::{HitRate, MetricsReport};
pub use nn::{EncoderConfig, ParamStore, Tape};
pub use postprocess::PeakPickConfig;
pub use trainer::{Model, TrainConfig};
