use strukt::annotations::Vocabulary;
use strukt::audio::{generate_corpus, write_wav, CorpusConfig, DEFAULT_LABELS};
use strukt::trainer::{evaluate, infer_full_song, load_corpus_dir, songs_from_specs, train, Song, TrainHooks};
use strukt::{EncoderConfig, FrontendConfig, Model, OutputGrid, PeakPickConfig, TrainConfig};

fn corpus(n: usize, seed: u64) -> (Vec<Song>, Vocabulary) {
    let mut vocab = Vocabulary::from_labels(DEFAULT_LABELS);
    let specs = generate_corpus(&CorpusConfig {
        n_songs: n,
        seed,
        ..Default::default()
    });
    (songs_from_specs(&specs, &mut vocab).unwrap(), vocab)
}

fn small_encoder(n_classes: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_backbone_blocks: 1,
        n_head_blocks: 1,
        n_heads: 2,
        proj_dim: 4,
        n_classes,
        ..Default::default()
    }
}

#[test]
fn corpus_directory_round_trip() {
    let (songs, vocab) = corpus(3, 12);
    let dir = tempfile::tempdir().unwrap();
    for s in &songs {
        write_wav(&s.clip, dir.path().join(format!("{}.wav", s.id))).unwrap();
        s.track.write_tsv(&vocab, dir.path().join(format!("{}.tsv", s.id))).unwrap();
    }
    let mut v2 = Vocabulary::from_labels(DEFAULT_LABELS);
    let loaded = load_corpus_dir(dir.path(), &mut v2).unwrap();
    assert_eq!(loaded.len(), 3);
    for (a, b) in songs.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.clip.len(), b.clip.len());
        assert_eq!(a.track.segments.len(), b.track.segments.len());
        let worst = a.clip.samples.iter().zip(&b.clip.samples).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst < 1e-4, "{worst}");
    }
}

#[test]
fn saved_model_reproduces_activations() {
    let (songs, vocab) = corpus(2, 5);
    let refs: Vec<&Song> = songs.iter().collect();
    let enc = small_encoder(vocab.len());
    let model = Model::initialise(enc, FrontendConfig::default().with_ratio(2), vocab, &refs, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.stkm");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    let a = infer_full_song(&model, &songs[0].clip).unwrap();
    let b = infer_full_song(&back, &songs[0].clip).unwrap();
    assert_eq!(a, b);
    let grid = OutputGrid::for_samples(songs[0].clip.len(), &model.frontend, enc.stem_stride);
    assert_eq!(a.boundary.len(), grid.len);
    assert_eq!(a.functions.shape(), (grid.len, enc.n_classes));
    assert!(a.boundary.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn short_training_run_logs_and_evaluates() {
    let (songs, vocab) = corpus(6, 8);
    let refs: Vec<&Song> = songs.iter().collect();
    let (tr, va) = refs.split_at(4);
    let cfg = TrainConfig {
        window_t: 8.0,
        ratio_n: 2,
        batch_size: 2,
        total_steps: 6,
        eval_every: 3,
        ..Default::default()
    };
    let enc = small_encoder(vocab.len());
    let model = Model::initialise(enc, FrontendConfig::default().with_ratio(2), vocab, tr, 0).unwrap();
    let mut log = Vec::new();
    let out = train(
        model,
        tr,
        va,
        &cfg,
        TrainHooks {
            log: Some(&mut log),
            checkpoint: None,
        },
    )
    .unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(out.log.iter().filter(|e| e.validation.is_some()).count(), 2);
    assert!([3, 6].contains(&out.best_step), "{}", out.best_step);
    let reports = evaluate(&out.model, va, &PeakPickConfig::default()).unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert!((0.0..=1.0).contains(&r.acc));
        assert!((0.0..=1.0).contains(&r.hr_3.f));
    }
}
