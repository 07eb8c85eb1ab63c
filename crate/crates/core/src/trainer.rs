//! Training loop, full-song inference and the model file.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{segment_pairs, targets_from_track, OutputGrid, SegmentTrack, Vocabulary, Window};
use crate::audio::{random_crop, synthesize_song, AudioClip, SongSpec};
use crate::error::{Error, Result};
use crate::frontend::{mel_filterbank, melgram_with, FeatureStats, FrontendConfig, MelFilterbank};
use crate::losses::{self, LossReport, LossWeights};
use crate::matrix::Matrix;
use crate::metrics::{evaluate_song, MetricsReport};
use crate::nn::{backward, encoder, EncoderConfig, NodeId, ParamStore, Tape};
use crate::postprocess::PeakPickConfig;

pub const MODEL_MAGIC: &[u8; 4] = b"STKM";
const MODEL_VERSION: u32 = 1;

/// A recording with its reference segmentation.
#[derive(Debug, Clone)]
pub struct Song {
    pub id: String,
    pub clip: AudioClip,
    pub track: SegmentTrack,
}

/// Renders every recipe; song ids are `song000`, `song001`, ...
pub fn songs_from_specs(specs: &[SongSpec], vocab: &mut Vocabulary) -> Result<Vec<Song>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (clip, track) = synthesize_song(spec, vocab)?;
            Ok(Song {
                id: format!("song{i:03}"),
                clip,
                track,
            })
        })
        .collect()
}

/// Loads `NAME.wav` / `NAME.tsv` pairs from a directory, sorted by name.
pub fn load_corpus_dir(dir: impl AsRef<Path>, vocab: &mut Vocabulary) -> Result<Vec<Song>> {
    let dir = dir.as_ref();
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    let mut songs = Vec::new();
    for wav in wavs {
        let tsv = wav.with_extension("tsv");
        if !tsv.exists() {
            continue;
        }
        let clip = crate::audio::load_wav(&wav)?;
        let track = crate::annotations::parse_segments(&tsv, Some(clip.duration()), vocab)?;
        let id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        songs.push(Song { id, clip, track });
    }
    if songs.is_empty() {
        return Err(Error::Precondition(format!("no wav/tsv pairs in {}", dir.display())));
    }
    Ok(songs)
}

/// Deterministic train / validation / test partition of song indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffles `0..n` with `seed` and cuts it 70 / 10 / 20.
    pub fn new(n: usize, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (n as f64 * 0.2).round() as usize;
        let n_val = (n as f64 * 0.1).round() as usize;
        let test = idx[..n_test].to_vec();
        let val = idx[n_test..n_test + n_val].to_vec();
        let train = idx[n_test + n_val..].to_vec();
        Self { train, val, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Crop length in seconds.
    pub window_t: f64,
    pub ratio_n: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr0: f64,
    pub lr_decay_gamma: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub eval_every: usize,
    pub max_pairs: usize,
    /// Width of the boundary target bump, seconds.
    pub ramp_width: f64,
    pub contrastive: bool,
    /// Process batch items on the rayon pool. Results do not depend on it.
    pub parallel: bool,
    pub peaks: PeakPickConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_t: 48.0,
            ratio_n: 2,
            batch_size: 8,
            total_steps: 2000,
            lr0: 1e-3,
            lr_decay_gamma: 0.99,
            lr_decay_every: 500,
            seed: 0,
            loss: LossWeights::default(),
            eval_every: 500,
            max_pairs: 64,
            ramp_width: 1.0,
            contrastive: true,
            parallel: true,
            peaks: PeakPickConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, frontend: &FrontendConfig) -> Result<()> {
        let samples = self.window_t * frontend.sample_rate as f64;
        if !(samples >= (frontend.n_fft * self.ratio_n) as f64) {
            return Err(Error::Config(format!(
                "window of {} s is shorter than n_fft x N = {} samples",
                self.window_t,
                frontend.n_fft * self.ratio_n
            )));
        }
        if self.batch_size == 0 || self.ratio_n == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("batch_size, ratio_n and lr_decay_every must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !(self.ramp_width > 0.0) {
            return Err(Error::Config("lr0 and ramp_width must be positive".into()));
        }
        self.loss.validate()
    }

    /// `lr0 * gamma^floor(step / every)`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr0 * self.lr_decay_gamma.powi((step / self.lr_decay_every) as i32)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Everything needed to run inference on new audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub frontend: FrontendConfig,
    pub vocab: Vocabulary,
    pub stats: FeatureStats,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    encoder: EncoderConfig,
    frontend: FrontendConfig,
    init_seed: u64,
    vocabulary: Vec<String>,
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::ModelFile("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFile("bad length".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Model {
    /// Fresh model with statistics fitted on `songs` at the front-end's ratio.
    pub fn initialise(encoder_cfg: EncoderConfig, frontend: FrontendConfig, vocab: Vocabulary, songs: &[&Song], seed: u64) -> Result<Self> {
        let fb = mel_filterbank(&frontend)?;
        let grams = songs
            .par_iter()
            .map(|s| melgram_with(&s.clip, &frontend, &fb))
            .collect::<Result<Vec<_>>>()?;
        let stats = FeatureStats::fit(&grams)?;
        Ok(Self {
            encoder: encoder_cfg,
            frontend,
            vocab,
            stats,
            params: encoder::init_params(&encoder_cfg, seed)?,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            encoder: self.encoder,
            frontend: self.frontend,
            init_seed: self.params.init_seed,
            vocabulary: self.vocab.labels().to_vec(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(32 + json.len() + 8 * (self.params.len() + 2 * self.stats.mean.len()));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        write_f64s(&mut out, &self.stats.mean);
        write_f64s(&mut out, &self.stats.std);
        write_f64s(&mut out, self.params.values());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MODEL_MAGIC {
            return Err(Error::ModelFile("missing STKM magic".into()));
        }
        let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::ModelFile(format!("unsupported model version {version}")));
        }
        let n = c.u64()? as usize;
        let header: ModelHeader = serde_json::from_slice(c.take(n)?)?;
        let mean = c.f64s()?;
        let std = c.f64s()?;
        let values = c.f64s()?;
        if c.pos != bytes.len() {
            return Err(Error::ModelFile("trailing bytes after parameters".into()));
        }
        header.encoder.validate()?;
        header.frontend.validate()?;
        if mean.len() != header.frontend.n_mels || std.len() != mean.len() {
            return Err(Error::ModelFile("feature statistics do not match n_mels".into()));
        }
        let mut params = encoder::init_params(&header.encoder, header.init_seed)?;
        params
            .set_values(values)
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        Ok(Self {
            encoder: header.encoder,
            frontend: header.frontend,
            vocab: Vocabulary::from_labels(&header.vocabulary),
            stats: FeatureStats { mean, std },
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Output grid rate in frames per second.
    pub fn grid_rate(&self) -> f64 {
        self.frontend.frame_rate() / self.encoder.stem_stride as f64
    }

    /// Standardised log-mel features of `clip`.
    pub fn features(&self, clip: &AudioClip) -> Result<Matrix> {
        self.features_with(clip, &mel_filterbank(&self.frontend)?)
    }

    fn features_with(&self, clip: &AudioClip, fb: &MelFilterbank) -> Result<Matrix> {
        let gram = melgram_with(clip, &self.frontend, fb)?;
        Ok(self.stats.apply(&gram))
    }
}

/// Boundary activation curve and function logits of a whole song.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub boundary: Vec<f64>,
    pub functions: Matrix,
    pub grid_rate: f64,
}

/// One forward pass over the complete recording.
pub fn infer_full_song(model: &Model, clip: &AudioClip) -> Result<Activations> {
    let fb = mel_filterbank(&model.frontend)?;
    infer_with(model, clip, &fb)
}

fn infer_with(model: &Model, clip: &AudioClip, fb: &MelFilterbank) -> Result<Activations> {
    let need = model.frontend.n_fft * model.frontend.ratio;
    if clip.len() < need {
        return Err(Error::InputTooShort(format!(
            "{} samples, need at least {need} at ratio {}",
            clip.len(),
            model.frontend.ratio
        )));
    }
    let x = model.features_with(clip, fb)?;
    let mut tape = Tape::new();
    let out = encoder::forward(&model.params, &x, &model.encoder, &mut tape)?;
    let boundary = tape.value(out.boundary_logits).data.iter().map(|&z| crate::nn::tape::sigmoid(z)).collect();
    Ok(Activations {
        boundary,
        functions: tape.value(out.function_logits).clone(),
        grid_rate: model.grid_rate(),
    })
}

/// Full-song metrics for each song, in input order.
pub fn evaluate(model: &Model, songs: &[&Song], peaks: &PeakPickConfig) -> Result<Vec<MetricsReport>> {
    let fb = mel_filterbank(&model.frontend)?;
    songs
        .par_iter()
        .map(|s| {
            let a = infer_with(model, &s.clip, &fb)?;
            evaluate_song(&a.boundary, &a.functions, a.grid_rate, &s.track, peaks).map(|(r, _)| r)
        })
        .collect()
}

/// Frame share of each class over `songs`, counted at 10 Hz.
pub fn class_counts(songs: &[&Song], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for s in songs {
        for seg in &s.track.segments {
            if seg.label < n_classes {
                counts[seg.label] += (seg.duration() * 10.0).round() as usize;
            }
        }
    }
    counts
}

/// Everything computed for one batch item.
struct ItemResult {
    grad: Vec<f64>,
    report: LossReport,
}

struct StepContext<'a> {
    model: &'a Model,
    fb: &'a MelFilterbank,
    cfg: &'a TrainConfig,
    class_weights: &'a [f64],
}

/// Loss components of one training window, still on the tape.
#[derive(Debug, Clone, Copy)]
pub struct WindowLoss {
    pub boundary_parts: [NodeId; 3],
    pub function: NodeId,
    pub contrastive: Option<NodeId>,
    pub pair_count: usize,
}

impl WindowLoss {
    /// The magnitude-normalised objective.
    pub fn combine(&self, tape: &mut Tape, w: &LossWeights) -> Result<NodeId> {
        losses::combine(tape, self.boundary_parts, self.function, self.contrastive, w)
    }

    pub fn report(&self, tape: &Tape, combined: NodeId) -> LossReport {
        let [b_wbce, b_l1, b_focal] = self.boundary_parts;
        LossReport {
            boundary_wbce: tape.scalar(b_wbce),
            boundary_smooth_l1: tape.scalar(b_l1),
            boundary_focal: tape.scalar(b_focal),
            function_wbce: tape.scalar(self.function),
            contrastive: self.contrastive.map(|n| tape.scalar(n)),
            combined: tape.scalar(combined),
            pair_count: self.pair_count,
        }
    }
}

/// Records the encoder and every loss term for one cropped window.
///
/// `features` are the standardised features of the crop starting at
/// `window.offset` in `track`. `params` stands in for the model's own
/// parameters. Contrastive pairs are drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn window_loss<R: Rng + ?Sized>(
    model: &Model,
    params: &ParamStore,
    features: &Matrix,
    track: &SegmentTrack,
    window: Window,
    cfg: &TrainConfig,
    class_weights: &[f64],
    rng: &mut R,
    tape: &mut Tape,
) -> Result<WindowLoss> {
    let enc = &model.encoder;
    let out = encoder::forward(params, features, enc, tape)?;
    let grid = OutputGrid {
        rate: model.grid_rate(),
        len: tape.value(out.boundary_logits).rows,
    };
    let targets = targets_from_track(track, window, grid, cfg.ramp_width, enc.n_classes);
    if targets.valid_count() == 0 {
        return Err(Error::AllMasked);
    }
    let w = &cfg.loss;

    let pb = tape.sigmoid(out.boundary_logits);
    let bw = losses::boundary_weights(&targets.boundary, &targets.valid);
    let hard: Vec<bool> = targets.boundary.iter().map(|&t| t > 0.5).collect();
    let b_wbce = losses::wbce_node(tape, pb, &targets.boundary, &bw, &targets.valid)?;
    let b_l1 = losses::smooth_l1_node(tape, pb, &targets.boundary, &targets.valid, w.smooth_l1_beta)?;
    let b_focal = losses::focal_node(tape, pb, &hard, &targets.valid, w.focal_alpha, w.focal_gamma)?;

    let c = enc.n_classes;
    let pf = tape.sigmoid(out.function_logits);
    let mut fw = vec![1.0; grid.len * c];
    let mut fmask = vec![false; grid.len * c];
    for (j, label) in targets.labels().into_iter().enumerate() {
        if let Some(l) = label {
            fw[j * c..(j + 1) * c].fill(class_weights[l]);
            fmask[j * c..(j + 1) * c].fill(true);
        }
    }
    let f_wbce = losses::wbce_node(tape, pf, &targets.functions.data, &fw, &fmask)?;

    let mut cl = None;
    let mut pair_count = 0;
    if cfg.contrastive && w.gamma > 0.0 {
        let pairs = segment_pairs(track, window, cfg.max_pairs, rng);
        let mut seg_ids: Vec<usize> = Vec::new();
        let mut spans = Vec::new();
        let span_of = |i: usize| {
            let s = &track.segments[i];
            grid.frames_in(s.start - window.offset, s.end - window.offset)
        };
        let mut kept = Vec::new();
        for p in &pairs {
            let (a, b) = (span_of(p.i), span_of(p.j));
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let mut slot = |i: usize, r: std::ops::Range<usize>| match seg_ids.iter().position(|&s| s == i) {
                Some(k) => k,
                None => {
                    seg_ids.push(i);
                    spans.push(r);
                    spans.len() - 1
                }
            };
            let (ka, kb) = (slot(p.i, a), slot(p.j, b));
            kept.push((ka, kb, p.same_label));
        }
        if !kept.is_empty() {
            let z: Vec<NodeId> = encoder::project_embeddings(params, tape, out.embeddings, &spans)?;
            cl = losses::contrastive_node(tape, &z, &kept, w.margin)?;
            pair_count = kept.len();
        }
    }
    Ok(WindowLoss {
        boundary_parts: [b_wbce, b_l1, b_focal],
        function: f_wbce,
        contrastive: cl,
        pair_count,
    })
}

impl StepContext<'_> {
    fn item(&self, song: &Song, seed: u64) -> Result<ItemResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (clip, offset) = random_crop(&song.clip, self.cfg.window_t, &mut rng);
        let window = Window::new(offset, self.cfg.window_t);
        let x = self.model.features_with(&clip, self.fb)?;
        let mut tape = Tape::new();
        let params = &self.model.params;
        let parts = window_loss(self.model, params, &x, &song.track, window, self.cfg, self.class_weights, &mut rng, &mut tape)?;
        let root = parts.combine(&mut tape, &self.cfg.loss)?;
        let report = parts.report(&tape, root);
        let grad = backward(&tape, root, params)?;
        Ok(ItemResult { grad, report })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<MetricsReport>,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (the final ones without
    /// validation songs).
    pub model: Model,
    pub final_params: ParamStore,
    pub log: Vec<LogEntry>,
    /// Completed steps when the selected parameters were evaluated.
    pub best_step: usize,
    /// Parameter indices that received a nonzero gradient at least once.
    pub touched: Vec<bool>,
}

/// Optional side channels of a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Receives one JSON line per step.
    pub log: Option<&'a mut dyn Write>,
    /// Best model so far is written here at every evaluation.
    pub checkpoint: Option<PathBuf>,
}

/// Trains `model` in place on `train` songs; validation songs drive model
/// selection by full-song accuracy.
pub fn train(mut model: Model, train: &[&Song], val: &[&Song], cfg: &TrainConfig, mut hooks: TrainHooks) -> Result<TrainOutcome> {
    cfg.validate(&model.frontend)?;
    if train.is_empty() {
        return Err(Error::Precondition("no training songs".into()));
    }
    if model.frontend.ratio != cfg.ratio_n {
        return Err(Error::Config(format!(
            "model front end uses ratio {}, config asks for {}",
            model.frontend.ratio, cfg.ratio_n
        )));
    }
    let fb = mel_filterbank(&model.frontend)?;
    let class_weights = losses::class_weights(&class_counts(train, model.encoder.n_classes));
    let mut adam = Adam::new(model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.total_steps);
    let mut touched = vec![false; model.params.len()];
    let mut best: Option<(f64, usize, ParamStore)> = None;

    let checkpoint = hooks.checkpoint.clone();
    let evaluate_now = |model: &Model, step: usize, best: &mut Option<(f64, usize, ParamStore)>| -> Result<Option<MetricsReport>> {
        if val.is_empty() {
            return Ok(None);
        }
        let mean = MetricsReport::mean(&evaluate(model, val, &cfg.peaks)?);
        if best.as_ref().map_or(true, |(acc, _, _)| mean.acc > *acc) {
            *best = Some((mean.acc, step, model.params.clone()));
            if let Some(path) = &checkpoint {
                model.save(path)?;
            }
        }
        Ok(Some(mean))
    };

    for step in 0..cfg.total_steps {
        let items: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.gen_range(0..train.len()), rng.gen()))
            .collect();
        let ctx = StepContext {
            model: &model,
            fb: &fb,
            cfg,
            class_weights: &class_weights,
        };
        let results: Vec<Result<ItemResult>> = if cfg.parallel {
            items.par_iter().map(|&(s, seed)| ctx.item(train[s], seed)).collect()
        } else {
            items.iter().map(|&(s, seed)| ctx.item(train[s], seed)).collect()
        };
        let mut grad = vec![0.0; model.params.len()];
        let mut reports = Vec::with_capacity(results.len());
        for r in results {
            let r = r.map_err(|e| match e {
                Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
                other => other,
            })?;
            for (g, v) in grad.iter_mut().zip(&r.grad) {
                *g += v;
            }
            reports.push(r.report);
        }
        let k = 1.0 / cfg.batch_size as f64;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient of {} is {}", model.params.name_at(i).unwrap_or("?"), grad[i]),
            });
        }
        for (g, t) in grad.iter_mut().zip(touched.iter_mut()) {
            *g *= k;
            *t |= *g != 0.0;
        }
        let lr = cfg.learning_rate(step);
        adam.step(model.params.values_mut(), &grad, lr);

        let done = step + 1;
        let validation = if cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.total_steps) {
            evaluate_now(&model, done, &mut best)?
        } else {
            None
        };
        let entry = LogEntry {
            step,
            lr,
            loss: LossReport::mean(&reports),
            validation,
        };
        if let Some(w) = hooks.log.as_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        log.push(entry);
    }

    let final_params = model.params.clone();
    let best_step = match best {
        Some((_, step, params)) => {
            model.params = params;
            step
        }
        None => cfg.total_steps,
    };
    Ok(TrainOutcome {
        model,
        final_params,
        log,
        best_step,
        touched,
    })
}
