//! Statistical invariants that need serious replicate counts: null p-value
//! uniformity, Wilson-interval calibration, convergence of the empirical
//! power to the limit formula, plug-in norm consistency, and the exactness
//! of likelihood-ratio identities.

use rayon::prelude::*;

use functest::curves::{LocalCurve, TangentFunction};
use functest::functionals::multinomial_gradient;
use functest::lan::{ks_critical_value, ks_distance, log_likelihood_ratio};
use functest::measures::{variational_distance_product, FiniteMeasure};
use functest::mc::{derive_seed, rejection_rate};
use functest::testing::{run_test, NormSource, Sidedness, TestConfig};

fn base() -> FiniteMeasure {
    FiniteMeasure::uniform(3)
}

fn canonical_curve() -> LocalCurve {
    LocalCurve::new(TangentFunction::centered(&base(), &[1.0, -1.0, 0.0]).unwrap())
}

fn gradient() -> functest::functionals::CanonicalGradient {
    multinomial_gradient(&base(), &[1.0, 0.0, 0.0]).unwrap()
}

#[test]
fn p_values_are_uniform_under_the_null() {
    // The statistic is lattice-valued, so its p-values carry an intrinsic
    // KS distance ~0.009 to the uniform at n = 2000; the seed is pinned.
    let grad = gradient();
    let config = TestConfig::one_sided(0.05).unwrap();
    let m = base();
    let ps: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            let sample = m.draw(2000, derive_seed(3, r));
            run_test(&sample, &grad, &config).unwrap().p_value
        })
        .collect();
    let ks = ks_distance(&ps, |x| x.clamp(0.0, 1.0));
    let critical = ks_critical_value(0.01, ps.len()).unwrap();
    assert!(ks < critical, "KS {ks:.5} vs {critical:.5}");
}

#[test]
fn wilson_intervals_are_calibrated_at_the_null() {
    // 200 independent null runs; the 95% interval should cover alpha in at
    // least 90% of them (the slack absorbs the lattice bias of the exact
    // size, which is 0.0502 at n = 300).
    let curve = canonical_curve();
    let grad = gradient();
    let config = TestConfig::one_sided(0.05).unwrap();
    let covered = (0..200u64)
        .map(|run| {
            let report =
                rejection_rate(&curve, &grad, &config, 0.0, 300, 2000, derive_seed(1, run))
                    .unwrap();
            (report.ci_low <= 0.05 && 0.05 <= report.ci_high) as usize
        })
        .sum::<usize>();
    assert!(covered >= 180, "alpha covered in only {covered}/200 runs");
}

#[test]
fn empirical_power_converges_in_n() {
    // Average distance to the limiting power shrinks from n = 50 to
    // n = 5000, over 20 master seeds at t = 2.
    let curve = canonical_curve();
    let grad = gradient();
    let config = TestConfig::one_sided(0.05).unwrap();
    let mut gap_small_n = 0.0;
    let mut gap_large_n = 0.0;
    for k in 0..20u64 {
        let seed = derive_seed(11, k);
        let a = rejection_rate(&curve, &grad, &config, 2.0, 50, 1000, seed).unwrap();
        let b = rejection_rate(&curve, &grad, &config, 2.0, 5000, 1000, seed).unwrap();
        gap_small_n += (a.empirical_rate - a.theoretical_power).abs();
        gap_large_n += (b.empirical_rate - b.theoretical_power).abs();
    }
    gap_small_n /= 20.0;
    gap_large_n /= 20.0;
    assert!(
        gap_large_n <= gap_small_n,
        "avg gap at n=5000 ({gap_large_n:.4}) should not exceed n=50 ({gap_small_n:.4})"
    );
}

#[test]
fn plug_in_norm_tracks_the_exact_norm() {
    // At n = 10^5 the plug-in score standard deviation sits within three
    // standard errors of ||k~||. For scores k~ in {2/3, -1/3}:
    // mu4 = 2/27, sigma^2 = 2/9, whence sd(sigma-hat) ~ 5.3e-4.
    let grad = gradient();
    let m = base();
    let n = 100_000;
    let sample = m.draw(n, 2024);
    let exact = grad.norm();

    let config = TestConfig::new(0.05, Sidedness::OneSided, NormSource::PlugIn).unwrap();
    let outcome = run_test(&sample, &grad, &config).unwrap();
    // Recover the plug-in norm from the reported critical value.
    let u = functest::testing::normal_quantile(0.95).unwrap();
    let plug_in = outcome.critical_value / u;

    let mu4 = 2.0 / 27.0;
    let sigma_sq = 2.0 / 9.0;
    let se = ((mu4 - sigma_sq * sigma_sq) / (4.0 * sigma_sq * n as f64)).sqrt();
    assert!(
        (plug_in - exact).abs() <= 3.0 * se,
        "plug-in {plug_in} vs exact {exact} (3 se = {:.2e})",
        3.0 * se
    );
}

#[test]
fn likelihood_ratios_integrate_to_one() {
    // E[exp(logLR)] = 1 under the null for every n: an identity, checked
    // within three Monte Carlo standard errors.
    let curve = canonical_curve();
    let m = base();
    let n = 500;
    let values: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            let sample = m.draw(n, derive_seed(29, r));
            log_likelihood_ratio(&sample, &curve, n).exp()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    let se = (var / values.len() as f64).sqrt();
    assert!(
        (mean - 1.0).abs() <= 3.0 * se,
        "mean likelihood ratio {mean} vs 1 (3 se = {:.4})",
        3.0 * se
    );
}

#[test]
fn zero_tangent_sequence_has_zero_variational_distance() {
    // The curve with g = 0 is constant, so the n-fold products coincide for
    // every n.
    let m = base();
    let curve = LocalCurve::new(TangentFunction::centered(&m, &[0.0, 0.0, 0.0]).unwrap());
    for n in 1..=6 {
        let t_n = 2.0 / (n as f64).sqrt();
        let q = curve.measure_at(t_n);
        let d = variational_distance_product(&m, q.as_finite().unwrap(), n).unwrap();
        assert_eq!(d, 0.0, "n = {n}");
    }
}

#[test]
fn product_distance_grows_along_a_real_perturbation() {
    // Complement of the degenerate case: a genuine tangent separates the
    // product measures more with every factor.
    let m = base();
    let curve = canonical_curve();
    let q = curve.measure_at(0.3);
    let mut prev = 0.0;
    for n in 1..=6 {
        let d = variational_distance_product(&m, q.as_finite().unwrap(), n).unwrap();
        assert!(d > prev);
        prev = d;
    }
}
