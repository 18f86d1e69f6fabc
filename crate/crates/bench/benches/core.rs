use criterion::{black_box, criterion_group, criterion_main, Criterion};

use qdtile::dataset::Level;
use qdtile::features::evaluate;
use qdtile::lm::{Batch, Model, ModelConfig, SamplingParams};
use qdtile::pipeline::solver_weights;
use qdtile::wfc::solve;
use qdtile::{AdjacencyRules, FeatureConfig, SiteBorder, TileCatalog};

const H: usize = 8;
const W: usize = 12;

fn bench_wfc(c: &mut Criterion) {
    let catalog = TileCatalog::representative();
    let rules = AdjacencyRules::representative(&catalog).unwrap();
    let weights = solver_weights(&rules);
    let pre = SiteBorder::standard(&catalog).preconstraints(H, W);
    let mut seed = 0u64;
    c.bench_function("wfc_solve_12x8", |b| {
        b.iter(|| {
            seed += 1;
            black_box(solve(H, W, &rules, &weights, &pre, seed).unwrap())
        })
    });
}

fn bench_features(c: &mut Criterion) {
    let catalog = TileCatalog::representative();
    let rules = AdjacencyRules::representative(&catalog).unwrap();
    let weights = solver_weights(&rules);
    let pre = SiteBorder::standard(&catalog).preconstraints(H, W);
    let layout = (0..)
        .find_map(|s| solve(H, W, &rules, &weights, &pre, s).unwrap().layout)
        .unwrap();
    let cfg = FeatureConfig::default();
    c.bench_function("features_12x8", |b| b.iter(|| black_box(evaluate(&layout, &catalog, &cfg))));
}

fn bench_model(c: &mut Criterion) {
    let cfg = ModelConfig::small(H * W + 2);
    let model: Model<f32> = Model::init(cfg, 0).unwrap();
    let seq = H * W + 1;
    let batch = Batch {
        batch: 4,
        seq,
        tokens: (0..4 * seq as u32).map(|i| i % 7).collect(),
        targets: (0..4 * seq as u32).map(|i| (i + 1) % 7).collect(),
        labels: vec![[Level::Mid; 5]; 4],
    };
    c.bench_function("model_forward_b4", |b| b.iter(|| black_box(model.loss(&batch).unwrap())));
    c.bench_function("model_forward_backward_b4", |b| {
        b.iter(|| black_box(model.loss_and_grad(&batch).unwrap()))
    });
    c.bench_function("model_sample_12x8", |b| {
        let mut seed = 0;
        b.iter(|| {
            seed += 1;
            black_box(
                model
                    .sample(&[Level::Mid; 5], H, W, &SamplingParams::default(), seed)
                    .unwrap(),
            )
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_wfc, bench_features, bench_model
}
criterion_main!(benches);
