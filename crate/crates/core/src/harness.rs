//! Ablation grids over window length and hop ratio, and the cost profiler.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::Vocabulary;
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::frontend::{mel_filterbank, melgram_with, FeatureStats, FrontendConfig};
use crate::metrics::MetricsReport;
use crate::nn::{backward, encoder, EncoderConfig, Tape, TapeStats};
use crate::trainer::{evaluate, train, Model, Song, Split, TrainConfig, TrainHooks};

/// Grid of training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub t_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub cl_enabled: Vec<bool>,
    pub repeats: usize,
    pub base: TrainConfig,
    pub encoder: EncoderConfig,
    pub frontend: FrontendConfig,
    pub split_seed: u64,
    /// Cells whose encoder sequence would exceed this length are recorded as
    /// failures instead of being trained.
    pub max_seq_len: Option<usize>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            t_values: vec![8.0, 16.0, 24.0, 32.0, 48.0, 96.0],
            n_values: vec![1, 2, 3, 4, 5],
            cl_enabled: vec![true],
            repeats: 1,
            base: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            frontend: FrontendConfig::default(),
            split_seed: 0,
            max_seq_len: None,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_values.is_empty() || self.n_values.is_empty() || self.cl_enabled.is_empty() || self.repeats == 0 {
            return Err(Error::Config("ablation axes must be non-empty".into()));
        }
        for &t in &self.t_values {
            for &n in &self.n_values {
                TrainConfig {
                    window_t: t,
                    ratio_n: n,
                    ..self.base.clone()
                }
                .validate(&self.frontend.with_ratio(n))?;
            }
        }
        Ok(())
    }

    /// Encoder sequence length of a `(T, N)` crop.
    pub fn seq_len(&self, t: f64, n: usize) -> usize {
        self.encoder.output_len(self.frontend.with_ratio(n).frames_for_seconds(t))
    }
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub t: f64,
    pub n: usize,
    pub cl: bool,
    pub repeat: usize,
    pub seq_len: usize,
    pub acc: f64,
    pub hr05f: f64,
    pub hr3f: f64,
    pub time_per_batch: f64,
    pub error: Option<String>,
}

fn run_cell(spec: &AblationSpec, songs: &[Song], vocab: &Vocabulary, split: &Split, t: f64, n: usize, cl: bool, repeat: usize) -> Result<(MetricsReport, f64)> {
    let cfg = TrainConfig {
        window_t: t,
        ratio_n: n,
        contrastive: cl,
        seed: spec.base.seed + repeat as u64,
        ..spec.base.clone()
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| &songs[i]).collect::<Vec<_>>();
    let (tr, va, te) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let frontend = spec.frontend.with_ratio(n);
    let model = Model::initialise(spec.encoder, frontend, vocab.clone(), &tr, cfg.seed)?;
    let start = Instant::now();
    let out = train(model, &tr, &va, &cfg, TrainHooks::default())?;
    let per_batch = start.elapsed().as_secs_f64() / cfg.total_steps.max(1) as f64;
    let report = MetricsReport::mean(&evaluate(&out.model, &te, &cfg.peaks)?);
    Ok((report, per_batch))
}

/// Trains one model per `(T, N, cl, repeat)` cell and scores it on the
/// test split. A failing cell is recorded and the grid continues.
pub fn run_ablation(spec: &AblationSpec, songs: &[Song], vocab: &Vocabulary) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    let split = Split::new(songs.len(), spec.split_seed);
    let mut rows = Vec::new();
    for &t in &spec.t_values {
        for &n in &spec.n_values {
            for &cl in &spec.cl_enabled {
                for repeat in 0..spec.repeats {
                    let seq_len = spec.seq_len(t, n);
                    let result = match spec.max_seq_len {
                        Some(max) if seq_len > max => Err(Error::Config(format!("sequence length {seq_len} exceeds budget {max}"))),
                        _ => run_cell(spec, songs, vocab, &split, t, n, cl, repeat),
                    };
                    let mut row = AblationRow {
                        t,
                        n,
                        cl,
                        repeat,
                        seq_len,
                        acc: f64::NAN,
                        hr05f: f64::NAN,
                        hr3f: f64::NAN,
                        time_per_batch: f64::NAN,
                        error: None,
                    };
                    match result {
                        Ok((m, time)) => {
                            row.acc = m.acc;
                            row.hr05f = m.hr_05.f;
                            row.hr3f = m.hr_3.f;
                            row.time_per_batch = time;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// `T,N,cl,ACC,HR.5F,HR3F,time/batch` plus repeat, sequence length and error.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("T,N,cl,ACC,HR.5F,HR3F,time/batch,repeat,seq_len,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
            r.t,
            r.n,
            r.cl,
            r.acc,
            r.hr05f,
            r.hr3f,
            r.time_per_batch,
            r.repeat,
            r.seq_len,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        ));
    }
    out
}

/// Closed-form operation and storage counts of one encoder forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticCost {
    pub seq_len: usize,
    /// Multiply-add FLOPs of all matrix products and convolutions.
    pub dense_flops: u64,
    /// Floats held by every recorded value, parameters and inputs included.
    pub activation_floats: u64,
    /// Attention score and probability floats.
    pub attention_floats: u64,
    pub param_floats: u64,
}

/// Counts for a forward pass over `frames` input frames.
pub fn analytic_cost(cfg: &EncoderConfig, frames: usize) -> AnalyticCost {
    let l = cfg.output_len(frames) as u64;
    let d = cfg.d_model as u64;
    let f = (cfg.ff_mult * cfg.d_model) as u64;
    let h = cfg.n_heads as u64;
    let dh = cfg.head_dim() as u64;
    let m = cfg.n_mels as u64;
    let s = cfg.stem_stride as u64;
    let k = cfg.conv_kernel as u64;
    let c = cfg.n_classes as u64;
    let frames = frames as u64;

    // (flops, floats) of each building block.
    let linear = |i: u64, o: u64| (2 * l * i * o, i * o + o + 2 * l * o);
    let norm = |w: u64| (0, 2 * w + 3 * l * w);
    let add = |a: (u64, u64), b: (u64, u64)| (a.0 + b.0, a.1 + b.1);
    let ff = [norm(d), linear(d, f), (0, l * f), linear(f, d)].into_iter().fold((0, 0), add);
    let concat = if h > 1 { l * d } else { 0 };
    let heads = (h * 4 * l * l * dh, h * (4 * l * dh + 2 * l * l) + concat);
    let attention = [norm(d), linear(d, d), linear(d, d), linear(d, d), heads, linear(d, d)]
        .into_iter()
        .fold((0, 0), add);
    let conv = [
        norm(d),
        linear(d, 2 * d),
        (0, 4 * l * d),
        (2 * l * d * k, k * d + d + 2 * l * d),
        norm(d),
        (0, l * d),
        linear(d, d),
    ]
    .into_iter()
    .fold((0, 0), add);
    let residuals = 6 * l * d;
    let backbone = [ff, attention, conv, ff, norm(d), (0, residuals)].into_iter().fold((0, 0), add);
    let head = [attention, ff, (0, 2 * l * d)].into_iter().fold((0, 0), add);
    let stem = [
        (0, frames * m + s * m),
        (2 * l * s * m, l * m),
        linear(m, d),
        (0, 3 * l * d),
    ]
    .into_iter()
    .fold((0, 0), add);
    let nb = cfg.n_backbone_blocks as u64;
    let nh = cfg.n_head_blocks as u64;
    let outputs = add(linear(d, 1), linear(d, c));
    let total = [stem, (nb * backbone.0, nb * backbone.1), (nh * head.0, nh * head.1), outputs]
        .into_iter()
        .fold((0, 0), add);
    AnalyticCost {
        seq_len: l as usize,
        dense_flops: total.0,
        activation_floats: total.1,
        attention_floats: cfg.attention_blocks() as u64 * h * 2 * l * l,
        param_floats: cfg.param_count() as u64,
    }
}

/// Measured and analytic cost of one training-shaped batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub t: f64,
    pub n: usize,
    pub seq_len: usize,
    /// Median seconds per batch (front end, forward and backward).
    pub time_per_batch: f64,
    pub analytic_flops: u64,
    pub analytic_activation_floats: u64,
    pub attention_floats: u64,
    pub peak_param_floats: u64,
}

/// Timing protocol of [`profile_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub warmup: usize,
    pub timed: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            timed: 20,
            batch_size: 1,
            seed: 0,
        }
    }
}

/// Tape counters of a forward pass and the loss used for timing.
pub fn forward_stats(cfg: &EncoderConfig, frames: usize, seed: u64) -> Result<TapeStats> {
    let params = encoder::init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = crate::matrix::Matrix::from_vec(frames, cfg.n_mels, (0..frames * cfg.n_mels).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut tape = Tape::new();
    encoder::forward(&params, &x, cfg, &mut tape)?;
    Ok(tape.stats())
}

/// Times front end + forward + backward on noise of `t` seconds at ratio `n`.
pub fn profile_cost(t: f64, n: usize, cfg: &EncoderConfig, frontend: &FrontendConfig, prof: &ProfileConfig) -> Result<CostRow> {
    cfg.validate()?;
    if prof.timed == 0 || prof.batch_size == 0 {
        return Err(Error::Config("timed steps and batch size must be positive".into()));
    }
    let fe = frontend.with_ratio(n);
    fe.validate()?;
    let fb = mel_filterbank(&fe)?;
    let params = encoder::init_params(cfg, prof.seed)?;
    let stats = FeatureStats::identity(fe.n_mels);
    let mut rng = ChaCha8Rng::seed_from_u64(prof.seed);
    let samples = (t * fe.sample_rate as f64).round() as usize;
    let clips: Vec<AudioClip> = (0..prof.batch_size)
        .map(|_| AudioClip::new((0..samples).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), fe.sample_rate))
        .collect();

    let run_batch = || -> Result<()> {
        for clip in &clips {
            let gram = melgram_with(clip, &fe, &fb)?;
            let x = stats.apply(&gram);
            let mut tape = Tape::new();
            let out = encoder::forward(&params, &x, cfg, &mut tape)?;
            let b = tape.mean(out.boundary_logits);
            let f = tape.mean(out.function_logits);
            let root = tape.add(b, f);
            std::hint::black_box(backward(&tape, root, &params)?);
        }
        Ok(())
    };
    for _ in 0..prof.warmup {
        run_batch()?;
    }
    let mut times = Vec::with_capacity(prof.timed);
    for _ in 0..prof.timed {
        let start = Instant::now();
        run_batch()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };

    let a = analytic_cost(cfg, fe.frames_for(samples));
    let b = prof.batch_size as u64;
    Ok(CostRow {
        t,
        n,
        seq_len: a.seq_len,
        time_per_batch: median,
        analytic_flops: a.dense_flops * b,
        analytic_activation_floats: a.activation_floats * b,
        attention_floats: a.attention_floats * b,
        peak_param_floats: a.param_floats,
    })
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut out = String::from("T,N,seq_len,time_per_batch,analytic_flops,analytic_activation_floats,attention_floats,peak_param_floats\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{},{}\n",
            r.t, r.n, r.seq_len, r.time_per_batch, r.analytic_flops, r.analytic_activation_floats, r.attention_floats, r.peak_param_floats
        ));
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
