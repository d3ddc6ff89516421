use criterion::{criterion_group, criterion_main, Criterion};
use uqaudit_bench::{blur_model, test_image};
use uqaudit_core::priors::{GmrfPrior, TvPotential};
use uqaudit_core::samplers::{ExactGaussianSampler, GibbsHyperPriors, GibbsOptions, GibbsSampler, MyulaSampler};
use uqaudit_core::{ChainConfig, GaussianPrior, PosteriorSampler, SeedPath, Shape};

const SIZE: usize = 32;

fn chains(c: &mut Criterion) {
    let shape = Shape::new(SIZE, SIZE);
    let model = blur_model(5, 0.02);
    let y = test_image(SIZE);
    let op = model.operator(shape).unwrap();
    let mut group = c.benchmark_group("chain_200_samples");
    group.sample_size(20);

    let prior = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap();
    let exact = ExactGaussianSampler::new(prior, model.clone(), &ChainConfig::new(1.0, 0, 200)).unwrap();
    group.bench_function("exact-gaussian", |b| b.iter(|| exact.sample(&y, &SeedPath::new(1)).unwrap()));

    let gibbs = GibbsSampler::new(
        &model,
        shape,
        &GmrfPrior::new(1.0, 1e-5).unwrap(),
        GibbsHyperPriors::default(),
        GibbsOptions::default(),
        ChainConfig::new(1.0, 0, 200),
    )
    .unwrap();
    group.bench_function("gibbs-gmrf", |b| b.iter(|| gibbs.sample(&y, &SeedPath::new(1)).unwrap()));

    let theta = 1.0 / op.lipschitz();
    let step = 0.9 / (op.lipschitz() + 1.0 / theta);
    let myula = MyulaSampler::new(&model, shape, TvPotential::new(5.0).unwrap(), theta, ChainConfig::new(step, 0, 200)).unwrap();
    group.bench_function("myula-tv", |b| b.iter(|| myula.sample(&y, &SeedPath::new(1)).unwrap()));
    group.finish();
}

criterion_group!(benches, chains);
criterion_main!(benches);
