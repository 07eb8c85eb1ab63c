//! Audio ingestion, synthetic structured songs and window cropping.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{Segment, SegmentTrack, Vocabulary};
use crate::error::{Error, Result};

/// Sample rate shared by the synthetic corpus and the default front end.
pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;

/// Length of the raised-cosine crossfade at section joins, in seconds.
pub const CROSSFADE_SECONDS: f64 = 0.05;

/// Minimum section length accepted by [`SongSpec::validate`].
pub const MIN_SECTION_SECONDS: f64 = 2.0;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }
}

/// Reads a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, mono or stereo).
///
/// Stereo input is downmixed by the channel mean and every sample is clipped
/// to `[-1, 1]`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // The file is readable, so read failures from here on mean bad content.
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| match e {
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAVE variant", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (expected 1 or 2)",
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(e.to_string()))?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };
    let channels = spec.channels as usize;
    let samples: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let mean = frame.iter().sum::<f32>() / channels as f32;
            mean.clamp(-1.0, 1.0)
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::InputTooShort(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a mono IEEE float 32-bit WAV file.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Acoustic realisation of one section label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub fundamental_hz: f64,
    /// Relative amplitudes of the first four partials.
    pub harmonics: Vec<f64>,
    /// Uniform noise amplitude (linear, full scale = 1).
    pub noise_level: f64,
}

/// Recipe for a synthetic structured song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongSpec {
    pub seed: u64,
    /// `(label, duration in seconds)` in playback order.
    pub section_plan: Vec<(String, f64)>,
    pub sample_rate: u32,
    pub timbre_map: BTreeMap<String, Timbre>,
}

impl SongSpec {
    pub fn duration(&self) -> f64 {
        self.section_plan.iter().map(|(_, d)| d).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.section_plan.is_empty() {
            return Err(Error::Config("song has no sections".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        for (label, dur) in &self.section_plan {
            if !(*dur >= MIN_SECTION_SECONDS) {
                return Err(Error::Config(format!(
                    "section '{label}' lasts {dur} s (minimum {MIN_SECTION_SECONDS} s)"
                )));
            }
            if !self.timbre_map.contains_key(label) {
                return Err(Error::Config(format!("no timbre for label '{label}'")));
            }
        }
        let noise_cap = 10f64.powf(-20.0 / 20.0);
        for (label, t) in &self.timbre_map {
            if t.harmonics.len() != 4 {
                return Err(Error::Config(format!(
                    "timbre '{label}' needs 4 partials, got {}",
                    t.harmonics.len()
                )));
            }
            if t.noise_level < 0.0 || t.noise_level > noise_cap + 1e-12 {
                return Err(Error::Config(format!(
                    "timbre '{label}' noise level {} above -20 dBFS",
                    t.noise_level
                )));
            }
            let nyquist = self.sample_rate as f64 / 2.0;
            if t.fundamental_hz <= 0.0 || 4.0 * t.fundamental_hz >= nyquist {
                return Err(Error::Config(format!(
                    "timbre '{label}' fundamental {} Hz out of range",
                    t.fundamental_hz
                )));
            }
        }
        let used: Vec<&Timbre> = self
            .timbre_map
            .iter()
            .filter(|(l, _)| self.section_plan.iter().any(|(p, _)| p == *l))
            .map(|(_, t)| t)
            .collect();
        for (i, a) in used.iter().enumerate() {
            for b in &used[i + 1..] {
                let semis = 12.0 * (a.fundamental_hz / b.fundamental_hz).log2().abs();
                if semis < 3.0 - 1e-9 {
                    return Err(Error::Config(format!(
                        "fundamentals {} Hz and {} Hz are only {semis:.2} semitones apart",
                        a.fundamental_hz, b.fundamental_hz
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground-truth track of the plan, interning labels into `vocab`.
    pub fn track(&self, vocab: &mut Vocabulary) -> SegmentTrack {
        let mut t = 0.0;
        let segments = self
            .section_plan
            .iter()
            .map(|(label, dur)| {
                let seg = Segment {
                    start: t,
                    end: t + dur,
                    label: vocab.intern(label),
                };
                t += dur;
                seg
            })
            .collect();
        SegmentTrack {
            segments,
            duration: t,
        }
    }
}

fn render_partials(timbre: &Timbre, t: f64) -> f64 {
    let norm: f64 = timbre.harmonics.iter().sum::<f64>().max(1e-12);
    let mut acc = 0.0;
    for (k, amp) in timbre.harmonics.iter().enumerate() {
        acc += amp * (2.0 * PI * (k + 1) as f64 * timbre.fundamental_hz * t).sin();
    }
    0.6 * acc / norm
}

/// Renders a song from its plan.
///
/// Deterministic in `spec`; the returned track echoes the plan with labels
/// interned into `vocab`.
pub fn synthesize_song(spec: &SongSpec, vocab: &mut Vocabulary) -> Result<(AudioClip, SegmentTrack)> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let track = spec.track(vocab);
    let n = (spec.duration() * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let timbres: Vec<&Timbre> = spec
        .section_plan
        .iter()
        .map(|(label, _)| &spec.timbre_map[label])
        .collect();
    // Interior joins in seconds.
    let joins: Vec<f64> = track.segments.iter().skip(1).map(|s| s.start).collect();
    let half = CROSSFADE_SECONDS / 2.0;
    let mut samples = Vec::with_capacity(n);
    let mut section = 0usize;
    for i in 0..n {
        let t = i as f64 / sr;
        while section + 1 < timbres.len() && t >= track.segments[section].end {
            section += 1;
        }
        let noise: f64 = rng.gen_range(-1.0..=1.0);
        // Crossfade weight of the previous section around the nearest join.
        let fade = joins
            .iter()
            .enumerate()
            .find(|(_, &b)| (t - b).abs() < half)
            .map(|(j, &b)| (j, 0.5 * (1.0 + (PI * (t - (b - half)) / CROSSFADE_SECONDS).cos())));
        let value = match fade {
            Some((j, g)) => {
                let (prev, next) = (timbres[j], timbres[j + 1]);
                g * (render_partials(prev, t) + prev.noise_level * noise)
                    + (1.0 - g) * (render_partials(next, t) + next.noise_level * noise)
            }
            None => {
                let tb = timbres[section];
                render_partials(tb, t) + tb.noise_level * noise
            }
        };
        samples.push(value.clamp(-1.0, 1.0) as f32);
    }
    Ok((AudioClip::new(samples, spec.sample_rate), track))
}

/// Default label palette of the synthetic corpus.
pub const DEFAULT_LABELS: [&str; 5] = ["intro", "verse", "chorus", "bridge", "outro"];

/// Parameters for generating a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_songs: usize,
    pub seed: u64,
    pub n_labels: usize,
    pub min_sections: usize,
    pub max_sections: usize,
    pub min_section_seconds: f64,
    pub max_section_seconds: f64,
    pub sample_rate: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_songs: 40,
            seed: 0,
            n_labels: 5,
            min_sections: 3,
            max_sections: 6,
            min_section_seconds: 6.0,
            max_section_seconds: 16.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Label palette timbres: fundamentals four semitones apart from 110 Hz,
/// each label with its own partial profile and noise floor.
pub fn palette(n_labels: usize, transpose_semitones: f64) -> BTreeMap<String, Timbre> {
    let profiles = [
        [1.0, 0.5, 0.25, 0.125],
        [1.0, 0.1, 0.6, 0.05],
        [0.6, 1.0, 0.3, 0.4],
        [1.0, 0.8, 0.6, 0.4],
        [0.3, 0.2, 1.0, 0.6],
    ];
    (0..n_labels)
        .map(|k| {
            let name = DEFAULT_LABELS
                .get(k)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("part{k}"));
            let semis = 4.0 * k as f64 + transpose_semitones;
            let timbre = Timbre {
                fundamental_hz: 110.0 * 2f64.powf(semis / 12.0),
                harmonics: profiles[k % profiles.len()].to_vec(),
                noise_level: 0.02 + 0.015 * (k % 5) as f64,
            };
            (name, timbre)
        })
        .collect()
}

/// Draws a corpus of song recipes. Adjacent sections never share a label.
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<SongSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_songs)
        .map(|_| {
            let transpose = rng.gen_range(-1.0..=1.0);
            let timbre_map = palette(cfg.n_labels, transpose);
            let labels: Vec<&String> = timbre_map.keys().collect();
            let n_sections = rng.gen_range(cfg.min_sections..=cfg.max_sections);
            let mut plan: Vec<(String, f64)> = Vec::with_capacity(n_sections);
            for _ in 0..n_sections {
                let label = loop {
                    let candidate = labels[rng.gen_range(0..labels.len())];
                    if labels.len() < 2 || plan.last().map_or(true, |(l, _)| l != candidate) {
                        break candidate.clone();
                    }
                };
                let dur = rng.gen_range(cfg.min_section_seconds..=cfg.max_section_seconds);
                plan.push((label, (dur * 10.0).round() / 10.0));
            }
            SongSpec {
                seed: rng.gen(),
                section_plan: plan,
                sample_rate: cfg.sample_rate,
                timbre_map,
            }
        })
        .collect()
}

/// Cuts `length` seconds starting at `start`, zero-filling past the source.
///
/// Returns the window and the offset actually applied (start rounded to a
/// sample), which is what targets must be aligned to.
pub fn crop_window(clip: &AudioClip, start: f64, length: f64) -> (AudioClip, f64) {
    let sr = clip.sample_rate as f64;
    let begin = (start.max(0.0) * sr).round() as usize;
    let n = (length * sr).round() as usize;
    let mut samples = vec![0.0f32; n];
    if begin < clip.len() {
        let avail = (clip.len() - begin).min(n);
        samples[..avail].copy_from_slice(&clip.samples[begin..begin + avail]);
    }
    (AudioClip::new(samples, clip.sample_rate), begin as f64 / sr)
}

/// Crops a window at an offset drawn uniformly from `[0, max(0, duration - length)]`.
pub fn random_crop<R: Rng + ?Sized>(clip: &AudioClip, length: f64, rng: &mut R) -> (AudioClip, f64) {
    let span = (clip.duration() - length).max(0.0);
    let start = if span > 0.0 { rng.gen_range(0.0..=span) } else { 0.0 };
    crop_window(clip, start, length)
}
