use uqaudit_core::report::{report_from_json, report_to_json};
use uqaudit_core::samplers::{ExactGaussianSampler, GibbsHyperPriors, GibbsOptions, GibbsSampler};
use uqaudit_core::priors::GmrfPrior;
use uqaudit_core::{
    brute_coverage, run_audit, AuditConfig, ChainConfig, GaussianPrior, Kernel, ObservationModel, RegionKind, SeedPath,
    Shape, TrialSampling,
};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn report_is_independent_of_thread_count() {
    let shape = Shape::new(8, 8);
    let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.05).unwrap();
    let dataset = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap().draw_dataset(6, &SeedPath::new(1)).unwrap();
    let gibbs = GibbsSampler::new(
        &model,
        shape,
        &GmrfPrior::new(1.0, 1e-5).unwrap(),
        GibbsHyperPriors::default(),
        GibbsOptions::default(),
        ChainConfig::new(1.0, 20, 100),
    )
    .unwrap();
    let mut cfg = AuditConfig::new(vec![0.05, 0.1, 0.5], 24, RegionKind::Ball, 9);
    cfg.sampling = TrialSampling::WithReplacement;
    let one = in_pool(1, || run_audit(&dataset, &gibbs, &model, &cfg).unwrap());
    let three = in_pool(3, || run_audit(&dataset, &gibbs, &model, &cfg).unwrap());
    let a = report_to_json(&one).unwrap();
    assert_eq!(a, report_to_json(&three).unwrap());
    assert_eq!(report_to_json(&report_from_json(&a).unwrap()).unwrap(), a);
    assert_eq!(
        one.trials.iter().map(|t| &t.misses).collect::<Vec<_>>(),
        three.trials.iter().map(|t| &t.misses).collect::<Vec<_>>()
    );
}

#[test]
fn audit_agrees_with_brute_force_coverage() {
    let shape = Shape::new(8, 8);
    let model = ObservationModel::new(Kernel::uniform(3).unwrap(), 0.05).unwrap();
    let truth = GaussianPrior::smooth(shape, 0.5, 0.05).unwrap();
    let assumed = truth.scaled(0.5).unwrap();
    let n = 1000;
    let dataset = truth.draw_dataset(n, &SeedPath::new(3)).unwrap();
    let sampler = ExactGaussianSampler::new(assumed.clone(), model.clone(), &ChainConfig::new(1.0, 0, 500)).unwrap();
    let cfg = AuditConfig::new(vec![0.2], n, RegionKind::Hpd, 4);
    let report = run_audit(&dataset, &sampler, &model, &cfg).unwrap();
    let brute = brute_coverage(&truth, &assumed, &model, 0.2, RegionKind::Hpd, n, 500, 5).unwrap();
    // two independent estimates with n = 1000 each: 4 combined standard errors
    let se = (2.0 * 0.8 * 0.2 / n as f64).sqrt();
    let observed = report.rows[0].observed_coverage;
    assert!((observed - brute).abs() < 4.0 * se, "{observed} vs {brute}");
}
