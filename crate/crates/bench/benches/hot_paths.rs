use std::hint::black_box;

use celltissue::labels::rasterize_points;
use celltissue::metrics::match_detections;
use celltissue::postprocess::extract_peaks;
use celltissue::tinynet::{synth_generate, Graph, ModelVariant, NetInput, NetworkConfig, SynthParams, TinyNetwork};
use celltissue::{CellPoint, ScalarField};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize, side: f64) -> Vec<CellPoint> {
    (0..n)
        .map(|_| {
            CellPoint::new(rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(1..=2))
                .with_confidence(rng.random())
        })
        .collect()
}

fn peaks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let field = ScalarField::from_fn(1, 256, 256, |_, _, _| rng.random());
    c.bench_function("extract_peaks 256x256 d=7", |b| {
        b.iter(|| extract_peaks(black_box(&field), 7, 0.5))
    });
}

fn matching(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dets = random_points(&mut rng, 400, 1024.0);
    let gts = random_points(&mut rng, 400, 1024.0);
    c.bench_function("match_detections 400x400", |b| {
        b.iter(|| match_detections(black_box(&dets), black_box(&gts), 15.0))
    });
}

fn rasterize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = random_points(&mut rng, 300, 1024.0);
    c.bench_function("rasterize 300 points 1024px r=7", |b| {
        b.iter(|| rasterize_points(black_box(&pts), 1024, 2, 1.4, 0.2).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let s = synth_generate(&SynthParams { n_samples: 1, ..SynthParams::default() }, 0)
        .unwrap()
        .remove(0);
    let labels = s.tissue_mask.to_one_hot();
    let mut group = c.benchmark_group("forward 64px");
    for v in [
        ModelVariant::CellOnly,
        ModelVariant::PredTo(celltissue::tinynet::Position::Bottleneck),
        "sharing:both-both-both".parse().unwrap(),
    ] {
        let net = TinyNetwork::new(v, NetworkConfig::default(), 0).unwrap();
        group.bench_function(v.to_string(), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let input = NetInput {
                    cell_image: &s.cell_image,
                    tissue_image: &s.tissue_image,
                    tissue_labels: Some(&labels),
                    geometry: s.geometry,
                };
                net.forward(&mut g, &input, None).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, peaks, matching, rasterize, forward);
criterion_main!(benches);
