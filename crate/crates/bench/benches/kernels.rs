use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgmp::gmm::{em_fit, refine, EmOptions, RefineMode, Vec6};
use rgmp::model::{ModelConfig, PolicyModel};
use rgmp::numerics::{Conv2d, ConvSpec, DenseTensor};
use rgmp::rope::build_rope_table;
use rgmp::spatial_mixing::{
    spatial_block_forward, wkv_scan, BlockOptions, InitMode, PatchSequence, SpatialBlockParams,
};
use std::hint::black_box;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = c.benchmark_group("conv3x3");
    for ch in [16, 32, 64] {
        let layer = Conv2d::new("bench", ConvSpec::new(ch, ch, 3, 1), &mut rng);
        let x = random(&[1, ch, 32, 32], &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(ch), &x, |b, x| {
            b.iter(|| layer.forward(black_box(x)).unwrap())
        });
    }
    g.finish();
}

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("wkv_scan");
    let (batch, channels, patch) = (1, 32, 8);
    for steps in [4, 16, 64] {
        let n = batch * steps * channels * patch * patch;
        let mut seq = |lo: f64, hi: f64| {
            let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            PatchSequence::from_steps(batch, steps, channels, patch, data).unwrap()
        };
        let (k, v, w) = (seq(0.5, 2.0), seq(-1.0, 1.0), seq(0.1, 0.9));
        let u = vec![0.5; channels];
        g.bench_function(BenchmarkId::from_parameter(steps), |b| {
            b.iter(|| wkv_scan(black_box(&k), &v, &w, &u, InitMode::K).unwrap())
        });
    }
    g.finish();
}

fn block(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = SpatialBlockParams::new("bench", 32, BlockOptions::with_patch(8), &mut rng);
    let table = build_rope_table(32, 32, 32).unwrap();
    let x = random(&[1, 32, 32, 32], &mut rng);
    c.bench_function("spatial_block_32x32x32", |b| {
        b.iter(|| spatial_block_forward(black_box(&x), &p, &table).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = PolicyModel::new(ModelConfig::default(), &mut rng).unwrap();
    let x = DenseTensor::from_fn(&[1, 3, 128, 128], |_| rng.random::<f64>());
    let mut g = c.benchmark_group("network");
    g.sample_size(10);
    g.bench_function("forward_128", |b| {
        b.iter(|| model.forward(black_box(&x)).unwrap())
    });
    g.finish();
}

fn gmm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Vec6> = (0..3000)
        .map(|i| {
            std::array::from_fn(
                |d| if d == i % 6 { 1.0 } else { 0.0 } + rng.random_range(-0.2..0.2),
            )
        })
        .collect();
    let mut g = c.benchmark_group("gmm");
    g.sample_size(10);
    g.bench_function("em_fit_k6_n3000", |b| {
        b.iter(|| em_fit(black_box(&x), 6, &EmOptions::default()).unwrap())
    });
    let theta = em_fit(&x, 6, &EmOptions::default()).unwrap().params;
    for mode in [RefineMode::Nearest, RefineMode::Aggregate] {
        g.bench_function(format!("refine_{mode:?}").to_lowercase(), |b| {
            b.iter(|| refine(black_box(&x[17]), &theta, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, scan, block, network, gmm);
criterion_main!(benches);
