//! Log-mel front end with hop scaling.
//!
//! The analysis hop is `ratio * base_hop`: raising the ratio lowers the frame
//! rate by the same factor, so a window `ratio` times longer yields the same
//! number of frames as the base configuration. Framing is centred (the clip is
//! zero-padded by `n_fft / 2` on both sides), which makes that frame-count
//! law exact: `frames = 1 + floor(num_samples / hop)`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub n_fft: usize,
    pub n_mels: usize,
    /// Pre-training hop in samples.
    pub base_hop: usize,
    /// Integer down-sampling ratio applied to the hop.
    pub ratio: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            n_mels: 128,
            base_hop: 240,
            ratio: 1,
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            log_floor: 1e-5,
        }
    }
}

impl FrontendConfig {
    pub fn with_ratio(self, ratio: usize) -> Self {
        Self { ratio, ..self }
    }

    pub fn effective_hop(&self) -> usize {
        self.ratio * self.base_hop
    }

    /// Frames per second after hop scaling.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.effective_hop() as f64
    }

    pub fn hop_millis(&self) -> f64 {
        1000.0 * self.effective_hop() as f64 / self.sample_rate as f64
    }

    /// Number of analysis frames for a clip of `num_samples` samples.
    pub fn frames_for(&self, num_samples: usize) -> usize {
        1 + num_samples / self.effective_hop()
    }

    /// Frames for a window of `seconds` at this config's sample rate.
    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        self.frames_for((seconds * self.sample_rate as f64).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::Config(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.ratio == 0 || self.base_hop == 0 {
            return Err(Error::Config("hop and ratio must be positive".into()));
        }
        if self.effective_hop() > self.n_fft {
            return Err(Error::Config(format!(
                "effective hop {} exceeds n_fft {}",
                self.effective_hop(),
                self.n_fft
            )));
        }
        if self.n_mels == 0 || self.sample_rate == 0 || !(self.log_floor > 0.0) {
            return Err(Error::Config("n_mels, sample_rate and log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log-mel spectrogram, `[frames x n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelGram {
    pub values: Matrix,
    pub frame_rate: f64,
    pub effective_hop: usize,
}

impl MelGram {
    pub fn frames(&self) -> usize {
        self.values.rows
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power spectrogram `|DFT(hann * frame)|^2`, `[frames x (n_fft/2 + 1)]`.
///
/// Frame `k` is centred on sample `k * hop`; samples outside the clip read
/// as zero.
pub fn stft_power(clip: &AudioClip, cfg: &FrontendConfig) -> Result<Matrix> {
    cfg.validate()?;
    if clip.len() < cfg.n_fft {
        return Err(Error::InputTooShort(format!(
            "{} samples, need at least n_fft = {}",
            clip.len(),
            cfg.n_fft
        )));
    }
    let n_fft = cfg.n_fft;
    let hop = cfg.effective_hop();
    let frames = cfg.frames_for(clip.len());
    let bins = n_fft / 2 + 1;
    let window = hann(n_fft);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let half = (n_fft / 2) as isize;
    let mut out = Matrix::zeros(frames, bins);
    out.data
        .par_chunks_mut(bins)
        .enumerate()
        .for_each_init(
            || {
                (
                    vec![Complex::new(0.0, 0.0); n_fft],
                    vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                )
            },
            |(buf, scratch), (k, row)| {
                let start = (k * hop) as isize - half;
                for (i, slot) in buf.iter_mut().enumerate() {
                    let idx = start + i as isize;
                    let s = if idx >= 0 && (idx as usize) < clip.len() {
                        clip.samples[idx as usize] as f64
                    } else {
                        0.0
                    };
                    *slot = Complex::new(s * window[i], 0.0);
                }
                fft.process_with_scratch(buf, scratch);
                for (b, v) in row.iter_mut().enumerate() {
                    *v = buf[b].norm_sqr();
                }
            },
        );
    Ok(out)
}

/// Triangular mel filterbank stored sparsely, one weight run per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_bins: usize,
    /// Centre frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.filters.len(), self.n_bins);
        for (r, (start, w)) in self.filters.iter().enumerate() {
            m.row_mut(r)[*start..start + w.len()].copy_from_slice(w);
        }
        m
    }

    /// Applies the filterbank to one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// HTK triangles with apex 1.0 at mel-equally-spaced centres in `(0, sr/2)`.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let n_bins = cfg.n_fft / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut filters = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let weights: Vec<(usize, f64)> = (0..n_bins)
            .filter_map(|b| {
                let f = b as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                (w > 0.0).then_some((b, w))
            })
            .collect();
        let Some(&(first, _)) = weights.first() else {
            return Err(Error::Config(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        };
        filters.push((first, weights.into_iter().map(|(_, w)| w).collect()));
    }
    Ok(MelFilterbank {
        n_bins,
        centers_hz: points[1..=cfg.n_mels].to_vec(),
        filters,
    })
}

/// Log-mel features at the config's (scaled) hop.
pub fn melgram(clip: &AudioClip, cfg: &FrontendConfig) -> Result<MelGram> {
    let fb = mel_filterbank(cfg)?;
    melgram_with(clip, cfg, &fb)
}

/// As [`melgram`] with a precomputed filterbank.
pub fn melgram_with(clip: &AudioClip, cfg: &FrontendConfig, fb: &MelFilterbank) -> Result<MelGram> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "clip sample rate {} Hz differs from front-end rate {} Hz (no resampling)",
            clip.sample_rate, cfg.sample_rate
        )));
    }
    let power = stft_power(clip, cfg)?;
    let mut values = Matrix::zeros(power.rows, cfg.n_mels);
    let floor = cfg.log_floor;
    for (r, p) in power.rows_iter().enumerate() {
        let out = values.row_mut(r);
        fb.apply(p, out);
        for v in out.iter_mut() {
            *v = v.max(floor).ln();
        }
    }
    Ok(MelGram {
        values,
        frame_rate: cfg.frame_rate(),
        effective_hop: cfg.effective_hop(),
    })
}

/// Per-band standardisation statistics, fitted on a training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    pub fn fit<'a>(grams: impl IntoIterator<Item = &'a MelGram>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for g in grams {
            if sum.is_empty() {
                sum = vec![0.0; g.n_mels()];
                sq = vec![0.0; g.n_mels()];
            }
            if g.n_mels() != sum.len() {
                return Err(Error::Config("melgrams disagree on band count".into()));
            }
            for row in g.values.rows_iter() {
                for (b, &v) in row.iter().enumerate() {
                    sum[b] += v;
                    sq[b] += v * v;
                }
            }
            count += g.frames();
        }
        if count == 0 {
            return Err(Error::Precondition("no frames to fit feature statistics".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, gram: &MelGram) -> Matrix {
        let mut out = gram.values.clone();
        let cols = out.cols;
        for row in out.data.chunks_exact_mut(cols) {
            for (b, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[b]) / self.std[b];
            }
        }
        out
    }
}

pub const MELGRAM_MAGIC: &[u8; 4] = b"MELG";
pub const ACTIVATION_MAGIC: &[u8; 4] = b"ACTV";

/// Writes `[magic, u32 frames, u32 bands, f32 frame_rate]` followed by
/// little-endian `f32` values in row-major order.
pub fn write_frame_dump(path: impl AsRef<Path>, magic: &[u8; 4], values: &Matrix, frame_rate: f64) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 4 * values.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(values.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(values.cols as u32).to_le_bytes());
    buf.extend_from_slice(&(frame_rate as f32).to_le_bytes());
    for &v in &values.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Reads a dump written by [`write_frame_dump`], checking the magic.
pub fn read_frame_dump(path: impl AsRef<Path>, magic: &[u8; 4]) -> Result<(Matrix, f32)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != magic {
        return Err(Error::Format(format!("{}: bad dump header", path.display())));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let rows = u32::from_le_bytes(word(4)) as usize;
    let cols = u32::from_le_bytes(word(8)) as usize;
    let rate = f32::from_le_bytes(word(12));
    if bytes.len() != 16 + 4 * rows * cols {
        return Err(Error::Format(format!("{}: truncated dump body", path.display())));
    }
    let data = (0..rows * cols)
        .map(|i| f32::from_le_bytes(word(16 + 4 * i)) as f64)
        .collect();
    Ok((Matrix::from_vec(rows, cols, data), rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, sr: u32, amp: f64) -> AudioClip {
        let n = (seconds * sr as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
                .collect(),
            sr,
        )
    }

    #[test]
    fn bin_centred_sine_concentrates_energy() {
        let cfg = FrontendConfig::default();
        let f = 10.0 * cfg.sample_rate as f64 / cfg.n_fft as f64;
        let p = stft_power(&sine(f, 1.0, cfg.sample_rate, 1.0), &cfg).unwrap();
        // An interior frame, away from the zero-padded edges.
        let row = p.row(p.rows / 2);
        for (b, &v) in row.iter().enumerate() {
            if (b as isize - 10).abs() > 2 {
                assert!(row[10] >= 100.0 * v, "bin {b}: {v} vs {}", row[10]);
            }
        }
    }

    #[test]
    fn silence_has_zero_power_and_floor_logs() {
        let cfg = FrontendConfig::default();
        let clip = AudioClip::silence(1.0, cfg.sample_rate);
        assert!(stft_power(&clip, &cfg).unwrap().data.iter().all(|&v| v == 0.0));
        let g = melgram(&clip, &cfg).unwrap();
        assert!(g.values.data.iter().all(|&v| v == 1e-5f64.ln()));
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let cfg = FrontendConfig::default();
        let clip = AudioClip::silence(0.01, cfg.sample_rate);
        assert!(matches!(stft_power(&clip, &cfg), Err(Error::InputTooShort(_))));
    }

    #[test]
    fn frame_count_is_centred_formula() {
        let cfg = FrontendConfig::default();
        assert_eq!(cfg.frames_for(720_000), 3001);
        let clip = AudioClip::silence(3.0, cfg.sample_rate);
        assert_eq!(stft_power(&clip, &cfg).unwrap().rows, 1 + 72_000 / 240);
    }

    #[test]
    fn mel_formula_and_filter_shape() {
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
        let cfg = FrontendConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let dense = fb.dense();
        assert_eq!(dense.shape(), (128, 1025));
        for c in 0..dense.cols {
            let s: f64 = (0..dense.rows).map(|r| dense.get(r, c)).sum();
            assert!((0.0..=2.0).contains(&s));
        }
        for row in dense.rows_iter() {
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            assert!(max > 0.0 && max <= 1.0);
            assert_eq!(row.iter().filter(|&&v| v == max).count(), 1);
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn too_many_mels_is_a_config_error() {
        let cfg = FrontendConfig {
            n_fft: 64,
            n_mels: 128,
            base_hop: 16,
            ..Default::default()
        };
        assert!(matches!(mel_filterbank(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn frame_rate_follows_ratio() {
        let cfg = FrontendConfig::default().with_ratio(3);
        assert!((cfg.frame_rate() - 100.0 / 3.0).abs() < 1e-12);
        assert!((cfg.hop_millis() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(FrontendConfig { n_fft: 1000, ..Default::default() }.validate().is_err());
        assert!(FrontendConfig::default().with_ratio(9).validate().is_err());
        assert!(FrontendConfig::default().with_ratio(8).validate().is_ok());
    }

    #[test]
    fn mismatched_sample_rate_is_rejected() {
        let clip = AudioClip::silence(1.0, 44_100);
        assert!(matches!(melgram(&clip, &FrontendConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn ratio_melgram_equals_strided_base_melgram() {
        let cfg = FrontendConfig::default();
        let clip = sine(523.0, 4.0, cfg.sample_rate, 0.3);
        let base = melgram(&clip, &cfg).unwrap();
        for n in 2..=5 {
            let coarse = melgram(&clip, &cfg.with_ratio(n)).unwrap();
            let mut diff = 0.0;
            let mut norm = 0.0;
            for r in 0..coarse.frames() {
                for (a, b) in coarse.values.row(r).iter().zip(base.values.row(r * n)) {
                    diff += (a - b).powi(2);
                    norm += b * b;
                }
            }
            assert!((diff / norm).sqrt() < 0.10);
        }
    }

    #[test]
    fn louder_clip_never_lowers_energy() {
        let cfg = FrontendConfig::default();
        let clip = sine(300.0, 0.5, cfg.sample_rate, 0.2);
        let quiet = melgram(&clip, &cfg).unwrap();
        let loud = melgram(&clip.scaled(2.5), &cfg).unwrap();
        for (q, l) in quiet.values.data.iter().zip(&loud.values.data) {
            assert!(l >= q);
        }
    }

    #[test]
    fn standardisation_centres_bands() {
        let cfg = FrontendConfig::default();
        let g = melgram(&sine(440.0, 1.0, cfg.sample_rate, 0.5), &cfg).unwrap();
        let stats = FeatureStats::fit([&g]).unwrap();
        let z = stats.apply(&g);
        for b in 0..z.cols {
            let m: f64 = (0..z.rows).map(|r| z.get(r, b)).sum::<f64>() / z.rows as f64;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.melg");
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.5, -3.0, 0.0, 4.0, 5.5]);
        write_frame_dump(&path, MELGRAM_MAGIC, &m, 33.25).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MELG");
        assert_eq!(bytes.len(), 16 + 24);
        let (back, rate) = read_frame_dump(&path, MELGRAM_MAGIC).unwrap();
        assert_eq!(back, m);
        assert_eq!(rate, 33.25);
        assert!(read_frame_dump(&path, ACTIVATION_MAGIC).is_err());
    }
}
