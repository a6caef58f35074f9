//! Acceptance suite: the ten load-bearing guarantees of the crate, each as
//! one test that prints a single `acceptance NN PASS` line with its measured
//! margin and runtime. Tolerances are pinned here, in code.
//!
//! 01  two-step mean equals the dense Kronecker solve (50 random instances)
//! 02  factored variance equals the dense covariance diagonal (50 instances)
//! 03  family reductions: Matern(1/2) = exponential, powerexp(2) = Gaussian
//! 04  spatial fit recovers range and nugget weight from simulated data
//! 05  temporal fit recovers multiplicative seasonal AR coefficients
//! 06  innovation variance ratio: AR(1) closed form and Monte Carlo check
//! 07  parametric-bootstrap standard errors track the Monte Carlo truth
//! 08  shared-model runtime is bit-identical to the monolithic predictor
//! 09  forward selection prefers informative sensors and skips duplicates
//! 10  reference-dataset reproduction (ignored unless the dataset is given)

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sepkrig::acf::{SpatialAcfModel, SpatialFamily, TemporalAcfModel, TemporalKind};
use sepkrig::bootstrap::{bootstrap_standard_errors, simulate_dataset};
use sepkrig::grid::{read_readings_csv, ObservationGrid, SensorLayout};
use sepkrig::kriging::{
    dense_kriging_oracle, factored_variance, predict_mean, two_step_mean, FittedField,
    PredictionTarget, TemporalModel,
};
use sepkrig::runtime::{run_distributed, RuntimeMode};
use sepkrig::selection::{forward_select, Metric};
use sepkrig::spatial_fit::{fit_spatial, sample_spatial_correlation};
use sepkrig::temporal_fit::{
    fit_seasonal_ar, innovation_variance_ratio, simulate, SeasonalArModel,
};
use sepkrig::trend::{estimate_sigma, moving_average_trend, TrendEstimate};

/// Random symmetric positive definite matrix with unit diagonal.
fn random_correlation(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = random_spd(n, rng);
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (d[i] * d[j]))
}

/// Random symmetric positive definite matrix with an arbitrary diagonal.
fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * (0.5 * n as f64)
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// 01: the two-step mean (temporal regression per sensor, then spatial
/// interpolation) must equal conditioning on the full Kronecker system, to
/// within 1e-10 relative, for arbitrary SPD factors — not just ones arising
/// from a correlation family.
#[test]
fn a01_two_step_mean_equals_the_dense_solve() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = rng.random_range(2..=5);
        let t = rng.random_range(3..=6);
        let p = rng.random_range(1..=4);
        let h = rng.random_range(1..=3);
        let r_s = random_correlation(s, &mut rng);
        let r_t = random_correlation(t, &mut rng);
        let rprime_s = random_spd(p, &mut rng);
        let rprime_t = random_spd(h, &mut rng);
        let rho_s = random_matrix(p, s, -0.8, 0.8, &mut rng);
        let rho_t = random_matrix(h, t, -0.8, 0.8, &mut rng);
        let centered = random_matrix(t, s, -3.0, 3.0, &mut rng);
        let mu_prime = random_matrix(h, p, -5.0, 5.0, &mut rng);

        let fast = two_step_mean(&r_s, &rho_s, &r_t, &rho_t, &centered, &mu_prime).unwrap();
        let (dense, _) = dense_kriging_oracle(
            &r_s, &rho_s, &rprime_s, &r_t, &rho_t, &rprime_t, &centered, &mu_prime, 1.0,
        )
        .unwrap();
        for k in 0..h {
            for q in 0..p {
                let rel = (fast[(k, q)] - dense[(k, q)]).abs() / (1.0 + dense[(k, q)].abs());
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(worst <= 1e-10, "worst relative gap {worst:e} exceeds 1e-10");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5s");
    println!(
        "acceptance 01 PASS: two-step mean matches the dense solve on 50 instances \
         (worst rel {worst:.3e}, {elapsed:?})"
    );
}

/// 02: the factored per-point variance must equal the corresponding diagonal
/// entries of the dense predictive covariance, to 1e-10 relative, again for
/// arbitrary SPD factors.
#[test]
fn a02_factored_variance_equals_the_dense_covariance_diagonal() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let sigma2 = 1.7;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = rng.random_range(2..=5);
        let t = rng.random_range(3..=6);
        let p = rng.random_range(1..=4);
        let h = rng.random_range(1..=3);
        let r_s = random_correlation(s, &mut rng);
        let r_t = random_correlation(t, &mut rng);
        let rprime_s = random_spd(p, &mut rng);
        let rprime_t = random_spd(h, &mut rng);
        let rho_s = random_matrix(p, s, -0.7, 0.7, &mut rng);
        let rho_t = random_matrix(h, t, -0.7, 0.7, &mut rng);
        let centered = random_matrix(t, s, -3.0, 3.0, &mut rng);
        let mu_prime = DMatrix::zeros(h, p);

        let factored = factored_variance(
            &r_s,
            &rho_s,
            &DVector::from_fn(p, |i, _| rprime_s[(i, i)]),
            &r_t,
            &rho_t,
            &DVector::from_fn(h, |i, _| rprime_t[(i, i)]),
            sigma2,
        )
        .unwrap();
        let (_, cov) = dense_kriging_oracle(
            &r_s, &rho_s, &rprime_s, &r_t, &rho_t, &rprime_t, &centered, &mu_prime, sigma2,
        )
        .unwrap();
        for q in 0..p {
            for k in 0..h {
                // column-stacked joint index: target q varies over columns
                let joint = q * h + k;
                let rel =
                    (factored[(k, q)] - cov[(joint, joint)]).abs() / (1.0 + cov[(joint, joint)].abs());
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(worst <= 1e-10, "worst relative gap {worst:e} exceeds 1e-10");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5s");
    println!(
        "acceptance 02 PASS: factored variance matches the dense covariance diagonal \
         on 50 instances (worst rel {worst:.3e}, {elapsed:?})"
    );
}

/// 03: Matern with smoothness 1/2 must reduce to the exponential family
/// (1e-10 relative) and power-exponential with exponent 2 to the Gaussian
/// family (1e-12 relative), across 1000 distances.
#[test]
fn a03_family_reductions_hold_pointwise() {
    let started = Instant::now();
    let range = 6.0;
    let weight = 0.9;
    let matern = SpatialAcfModel::new(SpatialFamily::Matern, range, Some(0.5), weight).unwrap();
    let exponential =
        SpatialAcfModel::new(SpatialFamily::Exponential, range, None, weight).unwrap();
    let powerexp =
        SpatialAcfModel::new(SpatialFamily::PowerExponential, range, Some(2.0), weight).unwrap();
    let gaussian = SpatialAcfModel::new(SpatialFamily::Gaussian, range, None, weight).unwrap();

    let mut worst_matern = 0.0f64;
    let mut worst_powerexp = 0.0f64;
    for i in 0..1000 {
        let d = (i + 1) as f64 * 0.05; // 0.05 .. 50, zero handled below
        let e = exponential.eval(d);
        let g = gaussian.eval(d);
        worst_matern = worst_matern.max((matern.eval(d) - e).abs() / e.abs().max(1e-300));
        worst_powerexp = worst_powerexp.max((powerexp.eval(d) - g).abs() / g.abs().max(1e-300));
    }
    assert!(worst_matern <= 1e-10, "Matern(1/2) vs exponential: {worst_matern:e}");
    assert!(worst_powerexp <= 1e-12, "powerexp(2) vs Gaussian: {worst_powerexp:e}");
    assert_eq!(matern.eval(0.0), 1.0);
    assert_eq!(powerexp.eval(0.0), 1.0);
    let elapsed = started.elapsed();
    println!(
        "acceptance 03 PASS: Matern(1/2)=exponential (worst rel {worst_matern:.3e}), \
         powerexp(2)=Gaussian (worst rel {worst_powerexp:.3e}) over 1000 distances ({elapsed:?})"
    );
}

/// 04: fitting an exponential model to 5000 simulated frames over 10 sensors
/// must recover the true range 15 within 10% and the true nugget weight 0.9
/// within 0.05, in under a minute.
#[test]
fn a04_spatial_fit_recovers_the_generating_model() {
    let started = Instant::now();
    let layout = SensorLayout::new(
        (0..10).map(|i| format!("s{i}")).collect(),
        vec![
            [0.0, 0.0],
            [7.0, 2.0],
            [14.0, 0.5],
            [21.0, 3.0],
            [28.0, 1.0],
            [2.0, 12.0],
            [9.0, 14.0],
            [17.0, 11.0],
            [25.0, 13.0],
            [30.0, 28.0],
        ],
    )
    .unwrap();
    let truth = FittedField {
        trend: TrendEstimate::constant(20.0, 5000, 1.0).unwrap(),
        spatial: SpatialAcfModel::new(SpatialFamily::Exponential, 15.0, None, 0.9).unwrap(),
        temporal: TemporalModel::Acf(
            TemporalAcfModel::new(TemporalKind::Ar1, 0.3, 1.0).unwrap(),
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let grid = simulate_dataset(&truth, &layout, 5000, 0.0, 1.0, &mut rng).unwrap();

    let trend = moving_average_trend(&grid, 500).unwrap();
    let sample = sample_spatial_correlation(&grid, &trend).unwrap();
    let fit = fit_spatial(SpatialFamily::Exponential, layout.dist(), &sample, 8).unwrap();
    let elapsed = started.elapsed();

    assert!(fit.converged, "fit did not converge: {fit:?}");
    let range_err = (fit.model.range() - 15.0).abs() / 15.0;
    let weight_err = (fit.model.nugget_weight() - 0.9).abs();
    assert!(range_err <= 0.10, "range {} is off by {range_err:.3}", fit.model.range());
    assert!(
        weight_err <= 0.05,
        "nugget weight {} is off by {weight_err:.3}",
        fit.model.nugget_weight()
    );
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60s");
    println!(
        "acceptance 04 PASS: recovered range {:.3} (true 15, rel err {:.3}) and nugget weight \
         {:.4} (true 0.9, err {:.4}) from 10x5000 simulated frames ({elapsed:?})",
        fit.model.range(),
        range_err,
        fit.model.nugget_weight(),
        weight_err
    );
}

/// 05: fitting the two-lag multiplicative seasonal AR to 50000 simulated
/// frames must recover coefficients (0.7, 0.4) at lags (1, 10) within 0.02,
/// in under 30 seconds.
#[test]
fn a05_temporal_fit_recovers_the_seasonal_coefficients() {
    let started = Instant::now();
    let truth = SeasonalArModel::new(vec![1, 10], vec![0.7, 0.4], 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let series = simulate(&truth, 50_000, 5_000, &mut rng);
    let residuals = DMatrix::from_column_slice(series.len(), 1, &series);

    let fit = fit_seasonal_ar(&residuals, &[1, 10]).unwrap();
    let elapsed = started.elapsed();

    assert!(fit.converged, "fit did not converge after {} sweeps", fit.sweeps);
    let errs: Vec<f64> = fit
        .model
        .coeffs()
        .iter()
        .zip([0.7, 0.4])
        .map(|(got, want)| (got - want).abs())
        .collect();
    assert!(
        errs.iter().all(|e| *e <= 0.02),
        "coefficients {:?} deviate {errs:?} from (0.7, 0.4)",
        fit.model.coeffs()
    );
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, budget 30s");
    println!(
        "acceptance 05 PASS: recovered seasonal AR coefficients {:?} (true [0.7, 0.4], \
         errors {:.4} and {:.4}) from 50000 frames ({elapsed:?})",
        fit.model.coeffs(),
        errs[0],
        errs[1]
    );
}

/// 06: the spectral innovation-variance ratio must match the AR(1) closed
/// form 1 - phi^2 to 1e-10, and for a genuinely multiplicative model it must
/// sit within 1% of a million-draw simulation estimate.
#[test]
fn a06_innovation_variance_ratio_is_exact_and_calibrated() {
    let started = Instant::now();
    let mut worst_ar1 = 0.0f64;
    for phi in [0.2, 0.5, 0.8, 0.95] {
        let model = SeasonalArModel::new(vec![1], vec![phi], 1.0).unwrap();
        let ratio = innovation_variance_ratio(&model).unwrap();
        let exact = 1.0 - phi * phi;
        worst_ar1 = worst_ar1.max((ratio - exact).abs() / exact);
    }
    assert!(worst_ar1 <= 1e-10, "AR(1) ratio deviates from 1 - phi^2 by {worst_ar1:e}");

    let model = SeasonalArModel::new(vec![1, 12], vec![0.6, 0.35], 1.0).unwrap();
    let ratio = innovation_variance_ratio(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let draws = simulate(&model, 1_000_000, 10_000, &mut rng);
    let variance = draws.iter().map(|v| v * v).sum::<f64>() / draws.len() as f64;
    let mc_ratio = 1.0 / variance; // unit innovation variance
    let gap = (ratio - mc_ratio).abs() / mc_ratio;
    assert!(
        gap <= 0.01,
        "spectral ratio {ratio} vs Monte Carlo {mc_ratio} differ by {gap:.4}"
    );
    let elapsed = started.elapsed();
    println!(
        "acceptance 06 PASS: AR(1) ratio matches 1-phi^2 (worst rel {worst_ar1:.3e}); \
         multiplicative ratio {ratio:.6} within {gap:.4} of the 1e6-draw estimate ({elapsed:?})"
    );
}

/// 07: on a 6-sensor, 2000-frame field, the parametric-bootstrap standard
/// error of the first seasonal coefficient must land within a factor 1.5 of
/// the Monte Carlo truth (200 independent datasets refit from the true
/// model), the report must be reproducible bit for bit, and the whole thing
/// must finish inside ten minutes.
#[test]
fn a07_bootstrap_standard_errors_track_the_monte_carlo_truth() {
    let started = Instant::now();
    let layout = SensorLayout::new(
        (0..6).map(|i| format!("s{i}")).collect(),
        vec![[0.0, 0.0], [3.0, 0.5], [6.5, 1.0], [1.0, 4.0], [4.5, 5.0], [7.5, 6.0]],
    )
    .unwrap();
    let t = 2000;
    let truth = FittedField {
        trend: TrendEstimate::constant(20.0, t, 0.8).unwrap(),
        spatial: SpatialAcfModel::new(SpatialFamily::Exponential, 4.0, None, 0.95).unwrap(),
        temporal: TemporalModel::SeasonalAr(
            SeasonalArModel::new(vec![1, 24], vec![0.6, 0.3], 1.0).unwrap(),
        ),
    };

    // Monte Carlo truth: the sampling spread of the refitted phi_1 across
    // 200 independent datasets drawn from the true field
    let phi1: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(707);
            rng.set_stream(b + 1);
            let grid = simulate_dataset(&truth, &layout, t, 0.0, 1.0, &mut rng).unwrap();
            let mean = grid.values().iter().sum::<f64>() / (t * 6) as f64;
            let trend = TrendEstimate::constant(mean, t, 1.0).unwrap();
            let residuals = trend.residuals(&grid).unwrap();
            fit_seasonal_ar(&residuals, &[1, 24]).unwrap().model.coeffs()[0]
        })
        .collect();
    let mc_mean = phi1.iter().sum::<f64>() / phi1.len() as f64;
    let se_mc = (phi1.iter().map(|v| (v - mc_mean).powi(2)).sum::<f64>()
        / (phi1.len() - 1) as f64)
        .sqrt();

    // one observed dataset, fitted end to end, then bootstrapped
    let mut rng = ChaCha8Rng::seed_from_u64(708);
    let observed = simulate_dataset(&truth, &layout, t, 0.0, 1.0, &mut rng).unwrap();
    let mean = observed.values().iter().sum::<f64>() / (t * 6) as f64;
    let rough = TrendEstimate::constant(mean, t, 1.0).unwrap();
    let sigma = estimate_sigma(&observed, &rough).unwrap();
    let trend = TrendEstimate::constant(mean, t, sigma).unwrap();
    let sample = sample_spatial_correlation(&observed, &trend).unwrap();
    let sfit = fit_spatial(SpatialFamily::Exponential, layout.dist(), &sample, 8).unwrap();
    let residuals = trend.residuals(&observed).unwrap();
    let tfit = fit_seasonal_ar(&residuals, &[1, 24]).unwrap();
    let fitted = FittedField {
        trend,
        spatial: sfit.model,
        temporal: TemporalModel::SeasonalAr(tfit.model),
    };

    let report = bootstrap_standard_errors(&fitted, &layout, t, 200, 7007).unwrap();
    let again = bootstrap_standard_errors(&fitted, &layout, t, 200, 7007).unwrap();
    let phi_row = report.params.iter().find(|p| p.name == "phi1").unwrap();
    let phi_row_again = again.params.iter().find(|p| p.name == "phi1").unwrap();
    assert_eq!(
        phi_row.std_err.to_bits(),
        phi_row_again.std_err.to_bits(),
        "bootstrap is not deterministic under a fixed seed"
    );
    assert!(!report.unreliable, "{} of 200 replicates failed", report.failures);

    let se_boot = phi_row.std_err;
    let factor = se_boot / se_mc;
    assert!(
        (1.0 / 1.5..=1.5).contains(&factor),
        "bootstrap SE {se_boot:.5} vs Monte Carlo SE {se_mc:.5} (factor {factor:.3})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}, budget 600s");
    println!(
        "acceptance 07 PASS: bootstrap SE {se_boot:.5} within factor {factor:.3} of the \
         Monte Carlo truth {se_mc:.5} over 200 replicates, bit-reproducible ({elapsed:?})"
    );
}

/// 08: with a shared temporal model, the distributed runtime must reproduce
/// the monolithic predictor bit for bit under 20 randomized within-frame
/// delivery schedules.
#[test]
fn a08_distributed_runtime_is_bit_identical_under_any_schedule() {
    let started = Instant::now();
    let layout = SensorLayout::new(
        (0..5).map(|i| format!("s{i}")).collect(),
        vec![[0.0, 0.0], [4.0, 1.0], [8.0, 0.0], [2.0, 5.0], [6.0, 6.0]],
    )
    .unwrap();
    let t = 300;
    let field_truth = FittedField {
        trend: TrendEstimate::constant(20.0, t, 1.0).unwrap(),
        spatial: SpatialAcfModel::new(SpatialFamily::Exponential, 5.0, None, 0.9).unwrap(),
        temporal: TemporalModel::Acf(
            TemporalAcfModel::new(TemporalKind::Ar1, 0.6, 0.9).unwrap(),
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let grid = simulate_dataset(&field_truth, &layout, t, 0.0, 1.0, &mut rng).unwrap();

    // the runtime field uses the pipeline trend, as deployed
    let window = 30;
    let field = FittedField {
        trend: moving_average_trend(&grid, window).unwrap(),
        ..field_truth
    };
    // more targets than sensors, so the monolithic path also forecasts at
    // the sensors first — the operation order the runtime distributes
    let targets = vec![
        [1.0, 1.0],
        [5.0, 2.0],
        [7.0, 4.0],
        [3.0, 3.0],
        [0.5, 4.5],
        [6.5, 1.5],
    ];
    let target = PredictionTarget::new(targets, 4).unwrap();
    let baseline = predict_mean(&field, &grid, &layout, &target).unwrap();

    for schedule_index in 0..20 {
        let mut schedule_rng = ChaCha8Rng::seed_from_u64(8080 + schedule_index);
        let schedule: Vec<Vec<usize>> = (window..t)
            .map(|_| {
                let mut perm: Vec<usize> = (0..layout.len()).collect();
                perm.shuffle(&mut schedule_rng);
                perm
            })
            .collect();
        let run = run_distributed(
            &field,
            &grid,
            &layout,
            &target,
            &RuntimeMode::Shared,
            Some(&schedule),
        )
        .unwrap();
        assert_eq!(run.mean.shape(), baseline.mean.shape());
        for (a, b) in run.mean.iter().zip(baseline.mean.iter()) {
            assert_eq!(
                a.to_bits(),
                b.to_bits(),
                "schedule {schedule_index}: runtime mean {a} differs from monolithic {b}"
            );
        }
        assert_eq!(run.messages.len(), layout.len());
    }
    let elapsed = started.elapsed();
    println!(
        "acceptance 08 PASS: distributed runtime bit-identical to the monolithic \
         predictor across 20 randomized delivery schedules ({elapsed:?})"
    );
}

/// 09: under mae, forward selection must pick the low-noise mean-like sensor
/// first when the field is strongly correlated, and must never pick a
/// nugget-free duplicate while its twin is active.
#[test]
fn a09_selection_prefers_information_and_rejects_duplicates() {
    let started = Instant::now();

    // a sensor reading the four-corner average with tiny noise, in a
    // strongly correlated field: its signal transfers to every target
    let layout = SensorLayout::new(
        vec!["c0".into(), "c1".into(), "c2".into(), "c3".into(), "center".into()],
        vec![[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0], [3.0, 3.0]],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let t = 240;
    let mut values = DMatrix::zeros(t, 5);
    for frame in 0..t {
        let wave = (frame as f64 * 0.07).sin() * 2.0 + 20.0;
        let mut sum = 0.0;
        for j in 0..4 {
            let v = wave + rng.random_range(-1.0..1.0);
            values[(frame, j)] = v;
            sum += v;
        }
        values[(frame, 4)] = sum / 4.0 + rng.random_range(-0.01..0.01);
    }
    let grid =
        ObservationGrid::complete(0.0, 60.0, layout.sensor_ids().to_vec(), values).unwrap();
    let field = FittedField {
        trend: moving_average_trend(&grid, 4).unwrap(),
        spatial: SpatialAcfModel::new(SpatialFamily::Exponential, 50.0, None, 1.0).unwrap(),
        temporal: TemporalModel::Acf(
            TemporalAcfModel::new(TemporalKind::Ar1, 0.5, 1.0).unwrap(),
        ),
    };
    let trace = forward_select(&grid, &layout, &field, Metric::Mae, 3).unwrap();
    assert_eq!(
        trace.steps[0].added, "center",
        "first pick was {:?} with scores {:?}",
        trace.steps[0].added, trace.steps[0].candidate_scores
    );

    // a duplicated sensor: same spot, same readings, no nugget — once one
    // twin is active the other must never be chosen
    let layout2 = SensorLayout::new(
        vec!["a".into(), "twin".into(), "b".into(), "c".into()],
        vec![[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [0.0, 5.0]],
    )
    .unwrap();
    let mut rng2 = ChaCha8Rng::seed_from_u64(910);
    let t2 = 180;
    let mut values2 = DMatrix::zeros(t2, 4);
    for frame in 0..t2 {
        let shared = (frame as f64 * 0.1).cos() + 15.0;
        let a = shared + rng2.random_range(-0.5..0.5);
        values2[(frame, 0)] = a;
        values2[(frame, 1)] = a;
        values2[(frame, 2)] = shared + rng2.random_range(-0.5..0.5);
        values2[(frame, 3)] = shared + rng2.random_range(-0.5..0.5);
    }
    let grid2 =
        ObservationGrid::complete(0.0, 60.0, layout2.sensor_ids().to_vec(), values2).unwrap();
    let field2 = FittedField {
        trend: moving_average_trend(&grid2, 4).unwrap(),
        spatial: SpatialAcfModel::new(SpatialFamily::Exponential, 3.0, None, 1.0).unwrap(),
        temporal: TemporalModel::Acf(
            TemporalAcfModel::new(TemporalKind::Ar1, 0.5, 1.0).unwrap(),
        ),
    };
    let trace2 = forward_select(&grid2, &layout2, &field2, Metric::Mae, 3).unwrap();
    let picked: Vec<&str> = trace2.steps.iter().map(|s| s.added.as_str()).collect();
    let twins = picked.iter().filter(|p| **p == "a" || **p == "twin").count();
    assert_eq!(twins, 1, "selected {picked:?}");

    let elapsed = started.elapsed();
    println!(
        "acceptance 09 PASS: mean-like sensor picked first under mae; duplicate sensor \
         never selected while its twin is active (picked {picked:?}) ({elapsed:?})"
    );
}

/// 10: refitting the published reference dataset must reproduce the reported
/// parameters: exponential range 24.692 and nugget 0.191 within 5%, seasonal
/// coefficients (0.977, 0.078, 0.047) within 0.01. Runs only when
/// `SEPKRIG_REFERENCE_DATA` points at a directory holding `readings.csv`
/// and `layout.csv` (10-minute sampling).
#[test]
#[ignore = "needs the reference dataset; set SEPKRIG_REFERENCE_DATA and run with --ignored"]
fn a10_reference_dataset_parameters_are_reproduced() {
    let Some(dir) = std::env::var_os("SEPKRIG_REFERENCE_DATA") else {
        println!("acceptance 10 SKIP: SEPKRIG_REFERENCE_DATA is not set");
        return;
    };
    let started = Instant::now();
    let dir = std::path::PathBuf::from(dir);
    let readings = read_readings_csv(&dir.join("readings.csv")).unwrap();
    let layout = SensorLayout::read_csv(&dir.join("layout.csv")).unwrap();
    let step = 600.0; // 10-minute frames
    let grid = ObservationGrid::project_to_grid(&readings, &layout, step)
        .unwrap()
        .locf_impute()
        .unwrap();

    let day = (86400.0 / step) as usize; // 144 frames
    let trend = moving_average_trend(&grid, day).unwrap();
    let sample = sample_spatial_correlation(&grid, &trend).unwrap();
    let sfit = fit_spatial(SpatialFamily::Exponential, layout.dist(), &sample, 8).unwrap();
    let range = sfit.model.range();
    let nugget = 1.0 - sfit.model.nugget_weight();
    assert!(
        (range - 24.692).abs() / 24.692 <= 0.05,
        "range {range} vs published 24.692"
    );
    assert!(
        (nugget - 0.191).abs() / 0.191 <= 0.05,
        "nugget {nugget} vs published 0.191"
    );

    let residuals = trend.residuals(&grid).unwrap();
    let tfit = fit_seasonal_ar(&residuals, &[1, day, 7 * day]).unwrap();
    let published = [0.977, 0.078, 0.047];
    for (got, want) in tfit.model.coeffs().iter().zip(published) {
        assert!(
            (got - want).abs() <= 0.01,
            "coefficient {got} vs published {want}"
        );
    }
    let elapsed = started.elapsed();
    println!(
        "acceptance 10 PASS: reference dataset reproduced range {range:.3}, nugget \
         {nugget:.3}, coefficients {:?} ({elapsed:?})",
        tfit.model.coeffs()
    );
}
