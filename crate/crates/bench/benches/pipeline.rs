//! Benchmarks for the pipeline hot spots: the NAMF statistic, a full
//! heatmap sweep, and the first convolution layer.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radloc_core::namf::{heatmap, namf_statistic, sample_covariance, CovarianceFactor, HeatmapGrid, HeatmapMeta};
use radloc_core::nn::layers::{ConvLayer, Mode};
use radloc_core::nn::tensor::Tensor;
use radloc_core::scenario::{
    build_clutter_scene, sample_target, RadarSiteConfig, SceneSynthesizer, ScenarioId,
};

fn bench_namf(c: &mut Criterion) {
    let cfg = RadarSiteConfig::original();
    let scene = build_clutter_scene(&cfg, 16, 3).unwrap();
    let provider = cfg.steering_provider(16, 1);
    let synth = SceneSynthesizer::new(&scene, &cfg, provider).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let target = sample_target(&cfg, 0.0, 10.0, None, &mut rng).unwrap();
    let returns = synth.synthesize(&target, 100, 100.0, &mut rng).unwrap();
    let bin = &returns.bins[returns.target_bin];
    let factor = CovarianceFactor::new(&sample_covariance(&bin.z)).unwrap();
    let steer = provider.steer(25.0, 0.0).unwrap();

    c.bench_function("namf_statistic_16x100", |b| {
        b.iter(|| namf_statistic(&bin.y, &factor, &steer).unwrap())
    });

    let grid = HeatmapGrid::matched(&cfg, 0.4);
    let meta = HeatmapMeta {
        scenario_id: ScenarioId::O,
        mean_output_scnr_db: 20.0,
        seed: 0,
    };
    c.bench_function("heatmap_5x26", |b| {
        b.iter(|| heatmap(&returns, &grid, &provider, &target, meta).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv = ConvLayer::new(1, 32, 1, 3, &mut rng);
    let mut input = Tensor::zeros(vec![32, 1, 5, 1, 26]);
    for v in input.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    c.bench_function("conv_forward_b32", |b| {
        b.iter(|| conv.forward(&input, Mode::Infer).unwrap())
    });
}

criterion_group!(benches, bench_namf, bench_conv);
criterion_main!(benches);
