use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cofcn_core::evaluation::{delong_ci, delong_test, roc_auc};
use cofcn_core::model::{CoFcn, CoFcnConfig};
use cofcn_core::selection::{fit_gmm, GmmOptions};
use cofcn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let a = labels.iter().map(|&l| rng.random::<f64>() + l as u8 as f64 * 0.5).collect();
    let b = labels.iter().map(|&l| rng.random::<f64>() + l as u8 as f64 * 0.3).collect();
    (a, b, labels)
}

fn roc(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc");
    for n in [100, 1_000, 10_000] {
        let (a, b, labels) = scored(n, 1);
        group.bench_with_input(BenchmarkId::new("auc", n), &n, |bch, _| {
            bch.iter(|| roc_auc(black_box(&a), &labels).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("delong_ci", n), &n, |bch, _| {
            bch.iter(|| delong_ci(black_box(&a), &labels, 0.95).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("delong_test", n), &n, |bch, _| {
            bch.iter(|| delong_test(black_box(&a), &b, &labels).unwrap())
        });
    }
    group.finish();
}

fn gmm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<[f64; 3]> = (0..2_000)
        .map(|i| {
            let off = (i % 6) as f64;
            [off + rng.random::<f64>(), rng.random::<f64>() - off, rng.random::<f64>()]
        })
        .collect();
    let opts = GmmOptions::default();
    c.bench_function("gmm_fit_6x2000", |b| b.iter(|| fit_gmm(black_box(&points), 0, &opts).unwrap()));
}

fn forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random = |shape: [usize; 4]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
    };
    let q = random([1, 3, 128, 128]);
    let s = random([1, 6, 128, 128]);
    let m = CoFcn::new(CoFcnConfig::with_k(2)).unwrap();
    let mut group = c.benchmark_group("cofcn");
    group.sample_size(10);
    group.bench_function("forward_k2", |b| b.iter(|| m.forward(black_box(&q), &s).unwrap()));
    group.finish();
}

criterion_group!(benches, roc, gmm, forward);
criterion_main!(benches);
