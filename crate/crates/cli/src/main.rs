use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use strukt::annotations::{parse_segments, OutputGrid, Vocabulary};
use strukt::audio::{generate_corpus, load_wav, write_wav, CorpusConfig, DEFAULT_LABELS};
use strukt::frontend::{melgram, write_frame_dump, ACTIVATION_MAGIC, MELGRAM_MAGIC};
use strukt::harness::{ablation_csv, cost_csv, profile_cost, run_ablation, write_text, ProfileConfig};
use strukt::metrics::score_tracks;
use strukt::trainer::{infer_full_song, load_corpus_dir, songs_from_specs, train, Song, Split, TrainHooks};
use strukt::postprocess::{peak_pick, reconstruct_track};
use strukt::{AblationSpec, EncoderConfig, FrontendConfig, Matrix, MetricsReport, Model, PeakPickConfig, TrainConfig};

#[derive(Parser)]
#[command(name = "strukt", version, about = "Music structure analysis with long windows and coarse hops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of WAV files with TSV annotations.
    Synth(SynthArgs),
    /// Compute a log-mel spectrogram and dump it as binary frames.
    Melgram(MelgramArgs),
    /// Train a model on a directory of WAV/TSV pairs.
    Train(TrainArgs),
    /// Segment a recording with a trained model.
    Segment(SegmentArgs),
    /// Score estimated annotations against references.
    Score(ScoreArgs),
    /// Run a training grid over window lengths and hop ratios.
    Ablate(AblateArgs),
    /// Time one training-shaped batch and report analytic costs.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    n_songs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    n_labels: usize,
}

#[derive(Args)]
struct MelgramArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    ratio: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct PeakArgs {
    /// Half-width of the local-maximum window, seconds.
    #[arg(long, default_value_t = 3.0)]
    peak_max_window: f64,
    /// Half-width of the moving-mean window, seconds.
    #[arg(long, default_value_t = 6.0)]
    peak_mean_window: f64,
    #[arg(long, default_value_t = 0.05)]
    peak_delta: f64,
    #[arg(long, default_value_t = 3.0)]
    peak_min_separation: f64,
}

impl PeakArgs {
    fn config(self) -> PeakPickConfig {
        PeakPickConfig {
            max_window: self.peak_max_window,
            mean_window: self.peak_mean_window,
            delta: self.peak_delta,
            min_separation: self.peak_min_separation,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Window length in seconds.
    #[arg(long = "T", default_value_t = 48.0)]
    window_t: f64,
    /// Hop down-sampling ratio.
    #[arg(long = "N", default_value_t = 2)]
    ratio_n: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long)]
    no_contrastive: bool,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    backbone_blocks: usize,
    #[arg(long, default_value_t = 2)]
    head_blocks: usize,
    /// TOML or JSON file whose keys override the flags. Top-level keys set
    /// training options; an `encoder` table sets encoder options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    peaks: PeakArgs,
}

#[derive(Args)]
struct SegmentArgs {
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the boundary curve and function logits as binary frames.
    #[arg(long)]
    activations: Option<PathBuf>,
    #[command(flatten)]
    peaks: PeakArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// CSV mirror of the per-song rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Frame rate of the accuracy grid.
    #[arg(long, default_value_t = 25.0)]
    grid_rate: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory of WAV/TSV pairs; a synthetic corpus is rendered otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    n_songs: usize,
    #[arg(long, default_value_t = 0)]
    corpus_seed: u64,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long = "T")]
    window_t: f64,
    #[arg(long = "N")]
    ratio_n: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    timed: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Melgram(a) => melgram_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Segment(a) => segment(a),
        Command::Score(a) => score(a),
        Command::Ablate(a) => ablate(a),
        Command::Profile(a) => profile(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let cfg = CorpusConfig {
        n_songs: a.n_songs,
        seed: a.seed,
        n_labels: a.n_labels,
        ..Default::default()
    };
    let specs = generate_corpus(&cfg);
    let mut vocab = Vocabulary::from_labels(DEFAULT_LABELS.iter().take(a.n_labels));
    let songs = songs_from_specs(&specs, &mut vocab)?;
    for song in &songs {
        write_wav(&song.clip, a.out.join(format!("{}.wav", song.id)))?;
        song.track.write_tsv(&vocab, a.out.join(format!("{}.tsv", song.id)))?;
    }
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&specs)?)?;
    vocab.save(a.out.join("vocab.txt"))?;
    println!("wrote {} songs to {}", songs.len(), a.out.display());
    Ok(())
}

fn melgram_cmd(a: MelgramArgs) -> Result<()> {
    let clip = load_wav(&a.input)?;
    let cfg = FrontendConfig {
        sample_rate: clip.sample_rate,
        ..FrontendConfig::default().with_ratio(a.ratio)
    };
    cfg.validate()?;
    let gram = melgram(&clip, &cfg)?;
    write_frame_dump(&a.out, MELGRAM_MAGIC, &gram.values, gram.frame_rate)?;
    println!("{} frames x {} bands at {:.3} fps", gram.frames(), gram.n_mels(), gram.frame_rate);
    Ok(())
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    Ok(if is_toml {
        serde_json::to_value(toml::from_str::<toml::Value>(&text)?)?
    } else {
        serde_json::from_str(&text)?
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut vocab = Vocabulary::from_labels(DEFAULT_LABELS);
    let songs = load_corpus_dir(&a.corpus, &mut vocab)?;
    let mut cfg = TrainConfig {
        window_t: a.window_t,
        ratio_n: a.ratio_n,
        batch_size: a.batch_size,
        total_steps: a.steps,
        lr0: a.lr,
        seed: a.seed,
        eval_every: a.eval_every,
        contrastive: !a.no_contrastive,
        peaks: a.peaks.config(),
        ..Default::default()
    };
    let mut enc = EncoderConfig {
        d_model: a.d_model,
        n_backbone_blocks: a.backbone_blocks,
        n_head_blocks: a.head_blocks,
        n_classes: vocab.len(),
        ..Default::default()
    };
    if let Some(path) = &a.config {
        let mut file = read_config_file(path)?;
        if let Some(e) = file.as_object_mut().and_then(|o| o.remove("encoder")) {
            let mut v = serde_json::to_value(enc)?;
            merge(&mut v, e);
            enc = serde_json::from_value(v).context("encoder section of the config file")?;
        }
        let mut v = serde_json::to_value(&cfg)?;
        merge(&mut v, file);
        cfg = serde_json::from_value(v).context("config file")?;
    }
    if enc.n_classes != vocab.len() {
        bail!("encoder has {} classes but the corpus uses {} labels", enc.n_classes, vocab.len());
    }

    let split = Split::new(songs.len(), cfg.seed);
    let mut train_idx: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
    train_idx.sort_unstable();
    let tr: Vec<&Song> = train_idx.iter().map(|&i| &songs[i]).collect();
    let va: Vec<&Song> = split.val.iter().map(|&i| &songs[i]).collect();
    let frontend = FrontendConfig::default().with_ratio(cfg.ratio_n);
    let model = Model::initialise(enc, frontend, vocab, &tr, cfg.seed)?;
    eprintln!(
        "training on {} songs ({} validation), {} parameters, L' = {}",
        tr.len(),
        va.len(),
        model.params.len(),
        enc.output_len(frontend.frames_for_seconds(cfg.window_t))
    );

    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let hooks = TrainHooks {
        log: log_file.as_mut().map(|w| w as &mut dyn std::io::Write),
        checkpoint: Some(a.out.clone()),
    };
    let outcome = train(model, &tr, &va, &cfg, hooks)?;
    outcome.model.save(&a.out)?;
    eprintln!("best step {}, model written to {}", outcome.best_step, a.out.display());
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let clip = load_wav(&a.input)?;
    let act = infer_full_song(&model, &clip)?;
    let peaks = a.peaks.config();
    peaks.validate(act.grid_rate)?;
    let boundaries: Vec<f64> = peak_pick(&act.boundary, act.grid_rate, &peaks)
        .into_iter()
        .filter(|&b| b > 0.0 && b < clip.duration())
        .collect();
    let track = reconstruct_track(&boundaries, &act.functions, act.grid_rate, clip.duration())?;
    track.write_tsv(&model.vocab, &a.out)?;
    if let Some(path) = &a.activations {
        let c = act.functions.cols;
        let mut m = Matrix::zeros(act.boundary.len(), 1 + c);
        for (j, &b) in act.boundary.iter().enumerate() {
            m.set(j, 0, b);
            m.row_mut(j)[1..].copy_from_slice(act.functions.row(j));
        }
        write_frame_dump(path, ACTIVATION_MAGIC, &m, act.grid_rate)?;
    }
    println!("{} segments", track.segments.len());
    Ok(())
}

#[derive(Serialize)]
struct SongScore {
    song_id: String,
    acc: f64,
    hr05_p: f64,
    hr05_r: f64,
    hr05_f: f64,
    hr3_p: f64,
    hr3_r: f64,
    hr3_f: f64,
}

impl SongScore {
    fn new(song_id: String, m: &MetricsReport) -> Self {
        Self {
            song_id,
            acc: m.acc,
            hr05_p: m.hr_05.precision,
            hr05_r: m.hr_05.recall,
            hr05_f: m.hr_05.f,
            hr3_p: m.hr_3.precision,
            hr3_r: m.hr_3.recall,
            hr3_f: m.hr_3.f,
        }
    }
}

fn score(a: ScoreArgs) -> Result<()> {
    let mut refs: Vec<PathBuf> = fs::read_dir(&a.reference)
        .with_context(|| format!("reading {}", a.reference.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    refs.sort();
    let mut vocab = Vocabulary::default();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for r in refs {
        let name = r.file_name().expect("file has a name");
        let est_path = a.est.join(name);
        if !est_path.exists() {
            eprintln!("skipping {}: no estimate", name.to_string_lossy());
            continue;
        }
        let reference = parse_segments(&r, None, &mut vocab)?;
        let estimate = parse_segments(&est_path, Some(reference.duration), &mut vocab)?;
        let grid = OutputGrid {
            rate: a.grid_rate,
            len: (reference.duration * a.grid_rate).ceil() as usize,
        };
        let m = score_tracks(&reference, &estimate, grid)?;
        let id = r.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push(SongScore::new(id, &m));
        reports.push(m);
    }
    if rows.is_empty() {
        bail!("no reference/estimate pairs found");
    }
    let mean = MetricsReport::mean(&reports);
    let report = serde_json::json!({ "songs": rows, "mean": SongScore::new("mean".into(), &mean) });
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path)?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    println!(
        "{} songs: ACC {:.3}  HR.5F {:.3}  HR3F {:.3}",
        rows.len(),
        mean.acc,
        mean.hr_05.f,
        mean.hr_3.f
    );
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let spec: AblationSpec = serde_json::from_value(read_config_file(&a.spec)?).context("ablation spec")?;
    let mut vocab = Vocabulary::from_labels(DEFAULT_LABELS);
    let songs = match &a.corpus {
        Some(dir) => load_corpus_dir(dir, &mut vocab)?,
        None => songs_from_specs(
            &generate_corpus(&CorpusConfig {
                n_songs: a.n_songs,
                seed: a.corpus_seed,
                ..Default::default()
            }),
            &mut vocab,
        )?,
    };
    let spec = AblationSpec {
        encoder: EncoderConfig {
            n_classes: vocab.len(),
            ..spec.encoder
        },
        ..spec
    };
    let rows = run_ablation(&spec, &songs, &vocab)?;
    write_text(&a.out, &ablation_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {} failed", rows.len(), failed);
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let prof = ProfileConfig {
        warmup: a.warmup,
        timed: a.timed,
        batch_size: a.batch_size,
        seed: 0,
    };
    let row = profile_cost(a.window_t, a.ratio_n, &EncoderConfig::default(), &FrontendConfig::default(), &prof)?;
    write_text(&a.out, &cost_csv(std::slice::from_ref(&row)))?;
    println!("L' = {}, {:.3} s per batch", row.seq_len, row.time_per_batch);
    Ok(())
}
