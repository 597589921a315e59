//! Seeded Monte Carlo checks of the limit behaviour at the reference
//! setting `φ = 1.5, ω² = σ² = 1` with Gaussian `b` and `e`.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use rca_core::estimator::{ci_phi, qmle, EstimatorConfig, SearchRegion};
use rca_core::innovations::{
    lyapunov_exponent, sample_stable_reference, InnovationSpec, SeedStream,
};
use rca_core::likelihood::{
    hessian, hessian_limit, limit_f, loglik, loglik_diff_normalized, LikelihoodPoint,
};
use rca_core::montecarlo::stats::{ks_two_sample, median};
use rca_core::montecarlo::{
    likelihood_surface_scan, ExperimentConfig, ExperimentKind, SurfaceLattice,
};
use rca_core::process::{
    empirical_growth_rate, growth_diagnostics, simulate_with, y_partial_sums, ModelParams,
    SimulationOptions, Trajectory,
};

const PHI: f64 = 1.5;

fn path(spec: &InnovationSpec, n: usize, seed: u64, rep: u64) -> Trajectory {
    simulate_with(
        ModelParams::new(PHI),
        spec,
        n,
        SeedStream::new(seed, rep),
        SimulationOptions {
            record_innovations: true,
            scaled_channel: true,
        },
    )
    .unwrap()
}

fn gaussian(n: usize, seed: u64, rep: u64) -> Trajectory {
    path(&InnovationSpec::gaussian(1.0, 1.0), n, seed, rep)
}

fn theta() -> LikelihoodPoint {
    LikelihoodPoint::new(PHI, 1.0, 1.0).unwrap()
}

fn region() -> SearchRegion {
    SearchRegion::new(0.5, 2.5, 0.25, 4.0).unwrap()
}

#[test]
fn normalized_difference_tracks_the_limit_function() {
    let u = LikelihoodPoint::new(PHI + 0.2, 1.5, 1.0).unwrap();
    let target = limit_f(u.s, u.x, PHI, 1.0).unwrap();
    let hits = (0..100u64)
        .into_par_iter()
        .filter(|&r| {
            let traj = gaussian(8000, 11, r);
            (loglik_diff_normalized(&traj, &u, &theta()).unwrap() - target).abs() < 0.05
        })
        .count();
    assert!(hits >= 90, "{hits} of 100 within 0.05");
}

#[test]
fn normalized_difference_forgets_y() {
    let gaps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let traj = gaussian(8000, 12, r);
            let lo = LikelihoodPoint::new(PHI + 0.2, 1.5, 0.5).unwrap();
            let hi = LikelihoodPoint::new(PHI + 0.2, 1.5, 2.0).unwrap();
            (loglik_diff_normalized(&traj, &lo, &theta()).unwrap()
                - loglik_diff_normalized(&traj, &hi, &theta()).unwrap())
            .abs()
        })
        .collect();
    assert!(median(&gaps) < 0.05, "{}", median(&gaps));
}

#[test]
fn hessian_converges_to_its_limit() {
    let limit = hessian_limit(&theta(), PHI, 1.0);
    let gaps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|r| (hessian(&gaussian(8000, 13, r), &theta()).unwrap() - limit).amax())
        .collect();
    assert!(median(&gaps) < 0.05, "{}", median(&gaps));
}

#[test]
fn normalized_path_settles() {
    let gaps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let g = growth_diagnostics(&gaussian(5000, 14, r)).unwrap();
            (g.normalized[5000] - g.normalized[2500]).abs()
        })
        .collect();
    assert!(median(&gaps) < 1e-3, "{}", median(&gaps));
}

#[test]
fn partial_sums_of_y_converge_geometrically() {
    let gaps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|r| {
            let y = y_partial_sums(&gaussian(400, 15, r), 400).unwrap();
            (y[400] - y[200]).abs()
        })
        .collect();
    assert!(median(&gaps) < 1e-3, "{}", median(&gaps));
}

#[test]
fn growth_rate_matches_the_lyapunov_exponent() {
    let spec = InnovationSpec::gaussian(0.25, 1.0);
    let lyap = lyapunov_exponent(&spec, PHI).unwrap();
    let rates: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| empirical_growth_rate(&path(&spec, 5000, 16, r)).unwrap())
        .collect();
    assert!(
        (median(&rates) - lyap).abs() < 0.05,
        "{} vs {lyap}",
        median(&rates)
    );
}

#[test]
fn paths_diverge_in_probability() {
    let growing = (0..200u64)
        .into_par_iter()
        .filter(|&r| {
            let traj = gaussian(2000, 17, r);
            traj.ln_abs(2000) > traj.ln_abs(1000)
        })
        .count();
    assert!(growing as f64 > 0.95 * 200.0, "{growing} of 200");
}

#[test]
fn stable_reference_is_heavy_tailed_and_self_consistent() {
    let spec = InnovationSpec::pareto(1.5, 1.0, 1.0);
    let a = sample_stable_reference(1.5, 100_000, 2000, &spec, SeedStream::new(21, 0)).unwrap();
    let b = sample_stable_reference(1.5, 100_000, 2000, &spec, SeedStream::new(21, 1)).unwrap();
    let (_, p) = ks_two_sample(&a, &b).unwrap();
    assert!(p > 0.01, "{p}");

    let centre = median(&a);
    assert!(centre.is_finite());
    let mut sorted = a.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| sorted[(p * sorted.len() as f64) as usize];
    // Gaussian fit through the quartiles
    let scale = (quantile(0.75) - quantile(0.25)) / (2.0 * Normal::standard().inverse_cdf(0.75));
    let fit = Normal::new(centre, scale).unwrap();
    let (q99, fit99) = (quantile(0.99), fit.inverse_cdf(0.99));
    assert!(
        q99 - centre > 3.0 * (fit99 - centre),
        "q99 {q99}, fit {fit99}"
    );
}

#[test]
fn estimates_barely_move_with_y() {
    let n = 4000;
    let cfg = EstimatorConfig::default();
    let sds: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| {
            let traj = gaussian(n, 18, r);
            let e: Vec<f64> = [0.25, 1.0, 4.0]
                .iter()
                .map(|&y| qmle(&traj, &region(), y, &cfg).unwrap().eta1)
                .collect();
            let m = e.iter().sum::<f64>() / 3.0;
            (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt()
        })
        .collect();
    let bound = 0.5 / (n as f64).sqrt();
    assert!(median(&sds) < bound, "{} vs {bound}", median(&sds));
}

#[test]
fn likelihood_is_flat_in_y_at_the_estimate() {
    let n = 8000;
    let traj = gaussian(n, 19, 0);
    let est = qmle(&traj, &region(), 1.0, &EstimatorConfig::default()).unwrap();
    let values: Vec<f64> = (0..17)
        .map(|i| {
            let y = 0.25 * 16f64.powf(i as f64 / 16.0);
            loglik(&traj, &LikelihoodPoint::new(est.eta1, est.eta2, y).unwrap()).unwrap()
        })
        .collect();
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(range / (n as f64) < 0.02, "{}", range / n as f64);
}

#[test]
fn phi_interval_coverage() {
    let n = 2000;
    let cfg = EstimatorConfig::default();
    let covered = (0..1000u64)
        .into_par_iter()
        .filter(|&r| {
            let est = qmle(&gaussian(n, 20, r), &region(), 1.0, &cfg).unwrap();
            ci_phi(&est, n, 0.95).unwrap().contains(PHI)
        })
        .count();
    let share = covered as f64 / 1000.0;
    assert!(share > 0.92 && share < 0.975, "{share}");
}

#[test]
fn surface_gaps_shrink_along_the_ladder() {
    let mut decreasing = 0;
    let mut flat_in_y = true;
    for seed in 0..10u64 {
        let mut cfg = ExperimentConfig::reference(ExperimentKind::LikelihoodSurface);
        cfg.n = 8000;
        cfg.reps = 20;
        cfg.master_seed = 500 + seed;
        cfg.surface = SurfaceLattice {
            ladder: vec![500, 2000, 8000],
            ..SurfaceLattice::around(PHI, 1.0, 1.0)
        };
        let scan = likelihood_surface_scan(&cfg).unwrap();
        assert!(scan.failures.is_empty());
        if scan.medians.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap) {
            decreasing += 1;
        }
        flat_in_y &= scan.medians.last().unwrap().y_spread < 0.05;
    }
    assert!(decreasing >= 9, "{decreasing} of 10");
    assert!(flat_in_y);
}
