//! Minimal reverse-mode tensor engine and the structure encoder built on it.

pub mod encoder;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use encoder::{forward, init_params, project_embeddings, EncoderConfig, EncoderOutput};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Init, ParamStore};
pub use tape::{backward, NodeId, Tape, TapeStats};
