//! Fixtures shared by the benchmarks.

use strukt::audio::AudioClip;
use strukt::{EncoderConfig, FrontendConfig, Matrix};

/// Deterministic pseudo-noise clip of `seconds` at the default rate.
pub fn noise_clip(seconds: f64) -> AudioClip {
    let sr = FrontendConfig::default().sample_rate;
    let n = (seconds * sr as f64) as usize;
    let mut state = 0x2545_f491_u32;
    let samples = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state as f32 / u32::MAX as f32) - 0.5
        })
        .collect();
    AudioClip::new(samples, sr)
}

/// Standard-normal-ish features of the encoder's width.
pub fn features(cfg: &EncoderConfig, frames: usize) -> Matrix {
    Matrix::from_vec(
        frames,
        cfg.n_mels,
        (0..frames * cfg.n_mels).map(|i| ((i * 7919 % 1000) as f64 / 500.0) - 1.0).collect(),
    )
}
