use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use strukt::frontend::{mel_filterbank, melgram_with};
use strukt::metrics::hit_rate_f;
use strukt::nn::{backward, encoder, Tape};
use strukt::{EncoderConfig, FrontendConfig};
use strukt_bench::{features, noise_clip};

fn frontend(c: &mut Criterion) {
    let clip = noise_clip(10.0);
    let mut group = c.benchmark_group("melgram_10s");
    for ratio in [1usize, 2, 5] {
        let cfg = FrontendConfig::default().with_ratio(ratio);
        let fb = mel_filterbank(&cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(ratio), &ratio, |b, _| {
            b.iter(|| melgram_with(&clip, &cfg, &fb).unwrap())
        });
    }
    group.finish();
}

fn encoder_step(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let params = encoder::init_params(&cfg, 0).unwrap();
    let mut group = c.benchmark_group("encoder_forward_backward");
    group.sample_size(10);
    for seq_len in [128usize, 256, 512] {
        let x = features(&cfg, seq_len * cfg.stem_stride);
        group.bench_with_input(BenchmarkId::from_parameter(seq_len), &seq_len, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let out = encoder::forward(&params, &x, &cfg, &mut tape).unwrap();
                let root = tape.mean(out.function_logits);
                backward(&tape, root, &params).unwrap()
            })
        });
    }
    group.finish();
}

fn matching(c: &mut Criterion) {
    let reference: Vec<f64> = (0..64).map(|i| i as f64 * 3.1).collect();
    let estimate: Vec<f64> = (0..64).map(|i| i as f64 * 3.1 + ((i % 5) as f64 - 2.0) * 0.3).collect();
    c.bench_function("hit_rate_f_64", |b| b.iter(|| hit_rate_f(&reference, &estimate, 0.5)));
}

criterion_group!(benches, frontend, encoder_step, matching);
criterion_main!(benches);
