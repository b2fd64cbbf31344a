use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use i2p::encoder::{forward_collect, init_encoder, EncoderConfig, LinearId};
use i2p::knowledge_injector::{calibrate_default, compute_importance};
use i2p::numerics::rng_for;
use i2p::par::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn images(n: usize, pixels: usize) -> Vec<Vec<f64>> {
    (0..n as u64)
        .map(|i| {
            let mut rng = rng_for(0, 0, i);
            (0..pixels).map(|_| rng.random::<f64>()).collect()
        })
        .collect()
}

fn forward(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let enc = init_encoder(cfg).unwrap();
    let imgs = images(32, cfg.pixels());
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let ids: Vec<String> = (0..refs.len()).map(|i| i.to_string()).collect();
    let mut g = c.benchmark_group("forward_collect_32");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| forward_collect(&enc, &refs, &ids, exec).unwrap())
        });
    }
    g.finish();
}

fn importance(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let enc = init_encoder(cfg).unwrap();
    let imgs = images(16, cfg.pixels());
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let moments = calibrate_default(&enc, &refs, &LinearId::all(cfg.depth), 1e-4).unwrap();
    let mut g = c.benchmark_group("importance_all_layers");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| compute_importance(&enc, &moments, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, importance);
criterion_main!(benches);
