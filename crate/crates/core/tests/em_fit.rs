mod common;

use tcmix_core::em::{fit, observed_loglik, FitConfig, Init, StopReason};
use tcmix_core::kim::{fit_kim, from_params, kim_params};
use tcmix_core::model::{ComponentParams, MixtureModel, ModelKind};
use tcmix_core::synth::{generate_dataset, preset, Generator};

use common::random_instance;

fn assert_monotone(trace: &[f64]) {
    for (i, w) in trace.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 1e-8, "objective fell at iteration {i}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn objective_never_decreases() {
    let kinds = [ModelKind::EmWire, ModelKind::Qin, ModelKind::RegMix, ModelKind::Kim];
    for seed in 0..12u64 {
        let g = 1 + (seed as usize % 3);
        let kind = kinds[seed as usize % 4];
        let (data, model) = random_instance(seed, 40, 10, g, kind);
        let omegas = model.components.iter().map(|c| c.omega).collect();
        let mut config = FitConfig::new(g, omegas, kind).with_seed(seed);
        config.n_starts = 2;
        config.max_iter = 200;
        let result = fit(&data, &config).unwrap();
        assert_monotone(&result.loglik_trace);
        assert_eq!(result.loglik_trace.len(), result.iterations + 1);
    }
}

#[test]
fn relabeled_start_gives_relabeled_fit() {
    let design = preset("table1").unwrap();
    let sim = generate_dataset(&design, 2).unwrap();
    let omegas = vec![6.0, 10.0, 16.0];
    let mut config = FitConfig::new(3, omegas.clone(), ModelKind::EmWire)
        .with_init(Init::Partition(sim.truth.clone()));
    config.max_iter = 30;
    let a = fit(&sim.data, &config).unwrap();

    let perm = [2usize, 0, 1];
    let relabeled: Vec<usize> = sim.truth.iter().map(|&h| perm[h]).collect();
    let mut permuted = vec![0.0; 3];
    for h in 0..3 {
        permuted[perm[h]] = omegas[h];
    }
    let mut config_b = FitConfig::new(3, permuted, ModelKind::EmWire).with_init(Init::Partition(relabeled));
    config_b.max_iter = 30;
    let b = fit(&sim.data, &config_b).unwrap();

    for (x, y) in a.loglik_trace.iter().zip(&b.loglik_trace) {
        assert!((x - y).abs() < 1e-8 * x.abs());
    }
    for (ca, &h) in a.model.components.iter().zip(&perm) {
        let cb = &b.model.components[h];
        assert!((ca.p - cb.p).abs() < 1e-8);
        assert!((ca.rho - cb.rho).abs() < 1e-6);
        assert!((ca.d2 - cb.d2).abs() < 1e-6);
    }
    let mapped: Vec<usize> = a.assignments.iter().map(|&h| perm[h]).collect();
    assert_eq!(mapped, b.assignments);
}

#[test]
fn ar1_residual_at_zero_correlation_is_regression_mixture() {
    for seed in 0..4 {
        let (data, model) = random_instance(seed, 30, 8, 2, ModelKind::RegMix);
        let labels: Vec<usize> = (0..data.n()).map(|j| j % 2).collect();
        let omegas: Vec<f64> = model.components.iter().map(|c| c.omega).collect();
        let base = |kind| {
            let mut c = FitConfig::new(2, omegas.clone(), kind).with_init(Init::Partition(labels.clone()));
            c.max_iter = 100;
            c
        };
        let mut kim_config = base(ModelKind::Kim);
        kim_config.fixed_rho = Some(0.0);
        let kim = fit_kim(&data, &kim_config).unwrap();
        let reg = fit(&data, &base(ModelKind::RegMix)).unwrap();
        assert_eq!(kim.iterations, reg.iterations);
        for (a, b) in kim.loglik_trace.iter().zip(&reg.loglik_trace) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for (a, b) in kim.model.components.iter().zip(&reg.model.components) {
            assert!((a.theta2 - b.sigma2).abs() < 1e-8);
            assert_eq!(a.rho, 0.0);
        }
    }
}

#[test]
fn ar1_residual_loglik_equals_gene_effect_model_without_noise() {
    for seed in 0..4 {
        let (data, model) = random_instance(seed, 20, 7, 3, ModelKind::Kim);
        let mut mapped = MixtureModel {
            family: ModelKind::EmWire.family(),
            ..model.clone()
        };
        for c in &mut mapped.components {
            c.sigma2 = 0.0;
            c.d2 = 0.0;
        }
        let a = observed_loglik(&data, &model).unwrap();
        let b = observed_loglik(&data, &mapped).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn no_cluster_effect_objective_is_observed_loglik() {
    let (data, model) = random_instance(9, 40, 8, 2, ModelKind::Qin);
    let omegas = model.components.iter().map(|c| c.omega).collect();
    let mut config = FitConfig::new(2, omegas, ModelKind::Qin);
    config.n_starts = 1;
    config.max_iter = 50;
    let r = fit(&data, &config).unwrap();
    let direct = observed_loglik(&data, &r.model).unwrap();
    assert!((r.loglik() - direct).abs() < 1e-9 * direct.abs());
    assert!((r.marginal_loglik - direct).abs() < 1e-9 * direct.abs());
}

#[test]
fn baseline_recovers_its_own_parameters_better_with_more_genes() {
    let mut design = preset("recovery").unwrap();
    design.generator = Generator::Kim;
    for c in &mut design.components {
        c.sigma2 = 0.0;
        c.d2 = 0.0;
    }
    let error_at = |n: usize| {
        let mut d = design.clone();
        d.n_genes = n;
        d.seed = 11;
        let mut total = 0.0;
        for rep in 0..3 {
            let sim = generate_dataset(&d, rep).unwrap();
            let start: Vec<_> = sim.params.iter().map(tcmix_core::kim::KimParams::from).collect();
            let omegas = sim.params.iter().map(|c| c.omega).collect();
            let config = from_params(FitConfig::new(3, omegas, ModelKind::Kim), &start);
            let r = fit_kim(&sim.data, &config).unwrap();
            for (est, truth) in kim_params(&r.model).iter().zip(&sim.params) {
                total += (est.theta2 - truth.theta2).abs() + (est.rho - truth.rho).abs();
            }
        }
        total / 9.0
    };
    let small = error_at(60);
    let medium = error_at(240);
    let large = error_at(960);
    assert!(large < small, "{small} {medium} {large}");
    assert!(large < 0.05, "{large}");
}

#[test]
fn random_starts_are_deterministic() {
    let (data, model) = random_instance(5, 45, 9, 3, ModelKind::EmWire);
    let omegas: Vec<f64> = model.components.iter().map(|c| c.omega).collect();
    let mut config = FitConfig::new(3, omegas, ModelKind::EmWire).with_seed(42);
    config.n_starts = 3;
    config.max_iter = 60;
    let a = fit(&data, &config).unwrap();
    let b = fit(&data, &config).unwrap();
    assert_eq!(a.loglik_trace, b.loglik_trace);
    assert_eq!(a.start_logliks, b.start_logliks);
    let best = a.start_logliks.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.loglik(), best);
}

#[test]
fn stop_reason_is_reported() {
    let (data, model) = random_instance(6, 30, 8, 2, ModelKind::RegMix);
    let omegas: Vec<f64> = model.components.iter().map(|c| c.omega).collect();
    let mut config = FitConfig::new(2, omegas.clone(), ModelKind::EmWire);
    config.max_iter = 2;
    let r = fit(&data, &config).unwrap();
    assert_eq!(r.stop_reason, StopReason::MaxIter);
    assert!(!r.converged);
    let config = FitConfig::new(2, omegas, ModelKind::RegMix);
    let r = fit(&data, &config).unwrap();
    assert!(r.converged);
    assert_ne!(r.stop_reason, StopReason::MaxIter);
}

#[test]
fn invalid_requests_are_rejected() {
    let (data, _) = random_instance(7, 6, 5, 2, ModelKind::EmWire);
    assert!(fit(&data, &FitConfig::new(6, vec![5.0; 6], ModelKind::EmWire)).is_err());
    assert!(fit(&data, &FitConfig::new(2, vec![5.0], ModelKind::EmWire)).is_err());
    let bad = FitConfig::new(2, vec![5.0, 6.0], ModelKind::EmWire).with_init(Init::Partition(vec![0, 1, 2, 0, 1, 0]));
    assert!(fit(&data, &bad).is_err());
    let short = FitConfig::new(2, vec![5.0, 6.0], ModelKind::EmWire).with_init(Init::Partition(vec![0, 1]));
    assert!(fit(&data, &short).is_err());
    let params = vec![
        ComponentParams {
            p: 0.7,
            beta: vec![0.0; 3],
            theta2: 0.5,
            rho: 0.2,
            sigma2: 0.5,
            d2: 0.1,
            omega: 5.0,
        };
        2
    ];
    let unnormalized = FitConfig::new(2, vec![5.0, 6.0], ModelKind::EmWire).with_init(Init::Params(params));
    assert!(fit(&data, &unnormalized).is_err());
}
