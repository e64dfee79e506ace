//! Monte Carlo checks of sampling, estimators and experiment plumbing.

use num_complex::Complex64;
use sepspike::config::ModelConfig;
use sepspike::dequiv::{find_edge, solve_at, ClassicalLocator, Law, SolverOptions};
use sepspike::estimators::{adaptive_value, calibrate_omega, count_outliers, scan_cap};
use sepspike::harness::{run, ExperimentConfig, ExperimentKind, Statistic};
use sepspike::sampling::{DrawOptions, Sampler, Spectrum};
use sepspike::spectra::SeparableModel;

#[test]
fn null_top_eigenvalue_sticks_to_edge() {
    let sampler = Sampler::new(&SeparableModel::null(200, 200), DrawOptions::default()).unwrap();
    let hits = (0..100)
        .filter(|&s| {
            let l1 = sampler.draw(s, 0).unwrap().eigenvalues[0];
            (3.5..=4.5).contains(&l1)
        })
        .count();
    assert!(hits >= 99, "{hits}/100 draws near the edge");
}

#[test]
fn calibration_is_stable_across_seeds() {
    let a = calibrate_omega(200, 200, 10_000, 0.05, 0.1, 1).unwrap();
    let b = calibrate_omega(200, 200, 10_000, 0.05, 0.1, 2).unwrap();
    assert!(a.omega > 0.0 && a.omega < 1.0);
    let rel = (a.omega - b.omega).abs() / a.omega;
    assert!(rel < 0.1, "omega {} vs {} (relative change {rel})", a.omega, b.omega);
    assert!(a.coverage() >= 0.95);
}

#[test]
fn null_model_counts_zero_at_nominal_level() {
    let (p, n, eps) = (200, 200, 0.05);
    let cal = calibrate_omega(p, n, 2000, eps, 0.1, 11).unwrap();
    let cap = scan_cap(p, n, 0.1);
    let sampler = Sampler::new(
        &SeparableModel::null(p, n),
        DrawOptions {
            spectrum: Spectrum::Top(cap + 2),
            ..DrawOptions::default()
        },
    )
    .unwrap();
    let zeros = (0..500)
        .filter(|&r| {
            let d = sampler.draw(99, r).unwrap();
            count_outliers(&d.eigenvalues, cal.omega, cap).0.value == 0
        })
        .count();
    let freq = zeros as f64 / 500.0;
    assert!(freq >= 1.0 - eps - 0.02, "q = 0 in {freq} of draws");
}

#[test]
fn adaptive_estimator_on_classical_locations() {
    let n = 2000;
    let sigma = 4.0;
    let model = SeparableModel::null(n, n);
    let law = Law::from_model(&model);
    let edge = find_edge(&law, 1e-12).unwrap();
    let loc = ClassicalLocator::new(&law, &edge).unwrap();
    // MP with d = 1: theta = sigma (1 + 1 / (sigma - 1))
    let theta = sigma * (1.0 + 1.0 / (sigma - 1.0));
    let mut spectrum = vec![theta];
    spectrum.extend((1..n).map(|j| loc.gamma(j).unwrap()));
    let est = adaptive_value(&spectrum, 1, theta, n).unwrap();
    assert!((est - sigma).abs() < 0.05, "sigma_hat {est}");
}

#[test]
fn averaged_law_far_from_support() {
    let n = 400;
    let z = Complex64::new(10.0, (n as f64).powf(-0.4));
    let law = Law::null(n, n);
    let mc = solve_at(&law, z, &SolverOptions::default()).unwrap().mc;
    let sampler = Sampler::new(&SeparableModel::null(n, n), DrawOptions::default()).unwrap();
    for rep in 0..20 {
        let d = sampler.draw(5, rep).unwrap();
        let m: Complex64 = d.eigenvalues.iter().map(|&l| 1.0 / (l - z)).sum::<Complex64>() / n as f64;
        assert!(
            (m - mc).norm() <= 10.0 / n as f64,
            "rep {rep}: |m - mc| = {}",
            (m - mc).norm()
        );
    }
}

fn small(kind: ExperimentKind, model: ModelConfig, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        model,
        reps,
        ..ExperimentConfig::preset(kind)
    }
}

#[test]
fn sticking_without_spikes_is_exact() {
    let r = run(&small(ExperimentKind::Sticking, ModelConfig::null(120, 150), 5)).unwrap();
    let devs: Vec<_> = r.metrics.iter().filter(|m| m.name.starts_with("n_dev_")).collect();
    assert!(!devs.is_empty());
    for m in devs {
        assert!(m.raw.iter().all(|&v| v == 0.0), "{} not exact", m.name);
    }
    assert!(r.passed);
}

#[test]
fn subcritical_spike_stays_at_edge() {
    let n = 500;
    let r = run(&small(
        ExperimentKind::OutlierLocation,
        ModelConfig::identity_spiked(n, n, &[1.5], &[]),
        60,
    ))
    .unwrap();
    let med = Statistic::Median.of(&r.metric("edge_dev").unwrap().summary);
    assert!(med <= 5.0 * (n as f64).powf(-2.0 / 3.0), "median |l1 - edge| = {med}");
}

#[test]
fn oracle_prial_is_one_hundred() {
    let cfg = ExperimentConfig {
        oracle: true,
        sweep: vec![100.0],
        ..small(
            ExperimentKind::Prial,
            ExperimentConfig::preset(ExperimentKind::Prial).model,
            10,
        )
    };
    let r = run(&cfg).unwrap();
    let prial = r.metric("prial_n100").unwrap().summary.mean;
    assert!((prial - 100.0).abs() < 1e-9, "{prial}");
}

#[test]
fn adaptive_bias_shrinks_with_n() {
    let cfg = ExperimentConfig {
        dims: vec![(100, 200), (600, 1200)],
        sigmas: vec![8.0],
        ..small(
            ExperimentKind::AdaptiveTable,
            ExperimentConfig::preset(ExperimentKind::AdaptiveTable).model,
            40,
        )
    };
    let r = run(&cfg).unwrap();
    let small_n = r.metric("sigma_hat_p100_n200_s8").unwrap().summary.mean;
    let large_n = r.metric("sigma_hat_p600_n1200_s8").unwrap().summary.mean;
    assert!((large_n - 8.0).abs() < (small_n - 8.0).abs(), "{small_n} vs {large_n}");
}

#[test]
fn experiments_are_reproducible() {
    let cfg = small(
        ExperimentKind::Overlap,
        ModelConfig::identity_spiked(150, 150, &[3.0], &[]),
        8,
    );
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.metrics.len(), b.metrics.len());
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(x.raw, y.raw, "{}", x.name);
    }
}
