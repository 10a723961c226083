use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use exposure_core::models::{loss_and_gradients, LossConfig, Objective};
use exposure_core::synthesis::{generate_world, sample_observed};
use exposure_core::training::{init_models, sample_batch, train};
use exposure_core::{rng_from_seed, SyntheticSpec, TrainConfig};

fn training(c: &mut Criterion) {
    let world = generate_world(&SyntheticSpec::new(300, 4, 3)).unwrap();
    let g = sample_observed(&world, &mut rng_from_seed(4)).unwrap();
    let cfg = TrainConfig::default();
    let mut rng = rng_from_seed(5);
    let (link, prop) = init_models(g.dim(), g.categories(), &mut rng);

    c.bench_function("sample_batch/k4", |b| b.iter(|| sample_batch(&g, &cfg, &mut rng).unwrap()));

    let mut group = c.benchmark_group("loss_and_gradients");
    for objective in [Objective::NoProp, Objective::Mle, Objective::W, Objective::Pu, Objective::Ap] {
        let loss_cfg = LossConfig::new(objective, 1.0, if objective.risk_estimator().is_some() { 10.0 } else { 0.0 });
        group.bench_function(format!("{objective:?}"), |b| {
            b.iter_batched(
                || sample_batch(&g, &cfg, &mut rng).unwrap(),
                |batch| loss_and_gradients(&link, &prop, &batch, &g, &loss_cfg).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();

    let one_epoch = TrainConfig { epochs: 1, ..TrainConfig::default() };
    c.bench_function("train/one_epoch", |b| b.iter(|| train(&g, &one_epoch).unwrap()));
}

criterion_group!(benches, training);
criterion_main!(benches);
