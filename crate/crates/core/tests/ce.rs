//! Cross-entropy search and estimators checked against closed forms.

use proptest::prelude::*;
use raresim::ce::{
    estimate_d, estimate_is, estimate_naive, quantile, run_ce, select_best, CeConfig, IterationStatus, LevelRule,
    Schedule,
};
use raresim::expfam::{self, Block, BlockParams, FamilySpec, FixedCovGaussian, ParamPoint, SampleVector, ScaledBeta};
use raresim::objective::{Bernoulli, Objective, ToyGaussian};
use raresim::orchestrator::Serial;
use raresim::sim::{RolloutResult, SimError};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

fn mu(v: f64) -> ParamPoint {
    ParamPoint(vec![BlockParams::Gaussian { mu: vec![v] }])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rank ⌈ρN⌉ in exact integer arithmetic for ρ = permille / 1000.
fn oracle_quantile(values: &[f64], permille: u64) -> f64 {
    let n = values.len() as u64;
    let rank = (permille * n).div_ceil(1000).max(1);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank as usize - 1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantile_matches_sort_oracle(values in prop::collection::vec(-1e3f64..1e3, 1..400), permille in 1u64..1000) {
        let rho = permille as f64 / 1000.0;
        prop_assert_eq!(quantile(&values, rho).unwrap(), oracle_quantile(&values, permille));
    }

    #[test]
    fn quantile_with_ties(values in prop::collection::vec(0u8..4, 1..200), permille in 1u64..1000) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let rho = permille as f64 / 1000.0;
        prop_assert_eq!(quantile(&values, rho).unwrap(), oracle_quantile(&values, permille));
    }

    #[test]
    fn level_rules_are_min_and_max(gamma in -10.0f64..10.0, q in -10.0f64..10.0) {
        prop_assert_eq!(LevelRule::Min.level(gamma, q), gamma.min(q));
        prop_assert_eq!(LevelRule::Descend.level(gamma, q), gamma.max(q));
    }
}

#[test]
fn level_is_exact_on_crafted_inputs() {
    for n in [10usize, 999, 5000] {
        // a permutation of 1..=n scaled so order statistics are known exactly
        let values: Vec<f64> = (0..n).map(|i| ((i * 7919) % n + 1) as f64 * 0.25).collect();
        for (permille, rho) in [(10, 0.01), (100, 0.1), (200, 0.2)] {
            let q = quantile(&values, rho).unwrap();
            let rank = (permille * n as u64).div_ceil(1000).max(1);
            assert_eq!(q, rank as f64 * 0.25, "n {n}, rho {rho}");
            assert_eq!(q, oracle_quantile(&values, permille));
            for gamma in [0.0, q - 0.125, q, q + 0.125, 1e6] {
                assert_eq!(LevelRule::Min.level(gamma, q), if gamma < q { gamma } else { q });
            }
        }
    }
}

#[test]
fn level_set_average_is_the_gaussian_partial_moment() {
    // for X ~ N(0,1): E[X; X ≤ -2] = -φ(2) and P(X ≤ -2) = Φ(-2)
    let toy = ToyGaussian::new();
    let n = 100_000;
    for shift in [0.0, -1.5] {
        let theta = mu(shift);
        let samples: Vec<SampleVector> = (0..n).map(|i| expfam::sample(toy.family(), &theta, i).unwrap()).collect();
        let f: Vec<f64> = samples.iter().map(|x| x[0]).collect();
        let est = estimate_d(&samples, &f, -2.0, toy.family(), toy.theta0(), &theta).unwrap();
        // standard error of the mean of wᵢ 1{xᵢ ≤ -2} xᵢ
        let terms: Vec<f64> = samples
            .iter()
            .map(|x| {
                let w = expfam::log_likelihood_ratio(toy.family(), toy.theta0(), &theta, x).unwrap().exp();
                if x[0] <= -2.0 {
                    w * x[0]
                } else {
                    0.0
                }
            })
            .collect();
        let mean = terms.iter().sum::<f64>() / n as f64;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let exact = -std_normal().pdf(2.0);
        assert!((est.d[0] - exact).abs() <= 3.0 * se, "shift {shift}: {} vs {exact} (se {se})", est.d[0]);
        assert!((est.mass - std_normal().cdf(-2.0)).abs() < 0.1 * std_normal().cdf(-2.0));
        // the normalized target is the conditional mean -φ(2)/Φ(-2)
        let conditional = exact / std_normal().cdf(-2.0);
        assert!((est.target()[0] - conditional).abs() < 0.05);
    }
}

#[test]
fn bernoulli_estimates_have_binomial_standard_error() {
    let coin = Bernoulli::new(0.25);
    let n = 20_000;
    let r = &estimate_naive(&coin, n, &[0.5], &mut Serial::new(&coin), 3).unwrap()[0];
    let p = r.p_hat;
    assert_eq!(p, r.rare_count as f64 / n as f64);
    assert!((r.std_err - (p * (1.0 - p) / n as f64).sqrt()).abs() < 1e-15);
    assert!((p - 0.25).abs() <= 3.0 * (0.25 * 0.75 / n as f64).sqrt(), "p̂ {p}");
    assert_eq!(r.ess, n as f64);
}

#[test]
fn importance_estimates_are_consistent_across_trials() {
    let toy = ToyGaussian::new();
    let truth = std_normal().cdf(-2.0);
    let (mut estimates, mut covered) = (Vec::new(), 0);
    for trial in 0..100 {
        let r = &estimate_is(&toy, &mu(-2.0), 1000, &[-2.0], &mut Serial::new(&toy), 1000 + trial).unwrap()[0];
        covered += ((r.p_hat - truth).abs() <= 2.0 * r.std_err) as usize;
        estimates.push(r.p_hat);
    }
    let mean = estimates.iter().sum::<f64>() / 100.0;
    let sd = (estimates.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!((mean - truth).abs() <= 3.0 * sd / 10.0, "mean {mean} vs {truth}");
    assert!(covered >= 85, "only {covered}/100 two-sigma intervals cover the truth");
}

#[test]
fn base_parameters_reproduce_plain_monte_carlo() {
    let toy = ToyGaussian::new();
    let grid = [-3.0, -2.0, 0.0];
    let naive = estimate_naive(&toy, 500, &grid, &mut Serial::new(&toy), 7).unwrap();
    let is = estimate_is(&toy, toy.theta0(), 500, &grid, &mut Serial::new(&toy), 7).unwrap();
    for (a, b) in naive.iter().zip(&is) {
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert_eq!(a.std_err.to_bits(), b.std_err.to_bits());
        assert_eq!(a.rare_count, b.rare_count);
    }
}

fn toy_config(seed: u64) -> CeConfig {
    CeConfig {
        rho: 0.1,
        alpha: Schedule::Constant(0.8),
        n_k: Schedule::Constant(1000),
        iterations: 20,
        gamma: -3.0,
        level_rule: LevelRule::Descend,
        seed,
    }
}

fn final_mean(theta: &ParamPoint) -> f64 {
    theta.flatten()[0]
}

#[test]
fn toy_search_settles_at_the_conditional_mean() {
    // moment matching on {X ≤ -3} drives μ to E[X | X ≤ -3] = -φ(3)/Φ(-3)
    let fixed_point = -std_normal().pdf(3.0) / std_normal().cdf(-3.0);
    let toy = ToyGaussian::new();
    let finals: Vec<f64> = (0..9)
        .map(|seed| final_mean(&run_ce(&toy, &toy_config(seed), &mut Serial::new(&toy)).unwrap().final_theta))
        .collect();
    let m = median(finals);
    assert!((m - fixed_point).abs() < 0.1, "median μ {m} vs {fixed_point}");
}

#[test]
fn toy_search_is_reproducible_and_recorded() {
    let toy = ToyGaussian::new();
    let a = run_ce(&toy, &toy_config(4), &mut Serial::new(&toy)).unwrap();
    let b = run_ce(&toy, &toy_config(4), &mut Serial::new(&toy)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iterations.len(), 20);
    assert_eq!(a.iterations[0].theta, *toy.theta0());
    for (k, rec) in a.iterations.iter().enumerate() {
        assert_eq!(rec.k, k);
        assert_eq!(rec.gamma_k, rec.rho_quantile.max(-3.0));
        assert_eq!(rec.status, IterationStatus::Updated);
        assert!(rec.level_count >= 100);
        if let Some(next) = a.iterations.get(k + 1) {
            assert_ne!(next.theta, rec.theta);
        }
    }
    // the best iterate is the one with the lowest quantile
    let best = a.iterations.iter().min_by(|x, y| x.rho_quantile.total_cmp(&y.rho_quantile)).unwrap();
    assert_eq!(select_best(&a), best.theta);
}

#[test]
fn literal_minimum_rule_stalls_far_below_the_quantile() {
    let toy = ToyGaussian::new();
    let config = CeConfig {
        gamma: -50.0,
        level_rule: LevelRule::Min,
        iterations: 3,
        ..toy_config(1)
    };
    let h = run_ce(&toy, &config, &mut Serial::new(&toy)).unwrap();
    assert!(h.stalled());
    assert_eq!(h.final_theta, *toy.theta0());
    assert!(h.iterations.iter().all(|r| r.gamma_k == -50.0 && r.level_count == 0));
}

#[test]
fn zero_iterations_return_the_base() {
    let toy = ToyGaussian::new();
    let h = run_ce(&toy, &CeConfig { iterations: 0, ..toy_config(1) }, &mut Serial::new(&toy)).unwrap();
    assert!(h.iterations.is_empty() && !h.stalled());
    assert_eq!(h.final_theta, *toy.theta0());
}

/// Two Beta-distributed inputs plus a boxed two-dimensional Gaussian; the
/// objective rewards pushing every parameter to its limit.
struct Boxed {
    family: FamilySpec,
    theta0: ParamPoint,
}

impl Boxed {
    fn new() -> Self {
        Boxed {
            family: FamilySpec::new(vec![
                Block::Beta(ScaledBeta::new(0.0, 1.0)),
                Block::Beta(ScaledBeta::new(-1.0, 1.0)),
                Block::Gaussian(FixedCovGaussian::isotropic(vec![0.2, -0.1], 0.01)),
            ]),
            theta0: ParamPoint(vec![
                BlockParams::Beta { alpha: 2.0, beta: 2.0 },
                BlockParams::Beta { alpha: 2.0, beta: 2.0 },
                BlockParams::Gaussian { mu: vec![0.2, -0.1] },
            ]),
        }
    }
}

impl Objective for Boxed {
    fn evaluate(&self, x: &[f64], seed: u64) -> Result<RolloutResult, SimError> {
        Ok(RolloutResult {
            min_ttc: x[0] - x[1] + 10.0 * (x[2] - x[3]),
            crashed: false,
            crash_step: None,
            steps: 0,
            log_p0: 0.0,
            seed,
        })
    }

    fn fingerprint(&self) -> [u8; 32] {
        [42; 32]
    }

    fn family(&self) -> &FamilySpec {
        &self.family
    }

    fn theta0(&self) -> &ParamPoint {
        &self.theta0
    }
}

#[test]
fn every_iterate_stays_in_the_search_box() {
    let obj = Boxed::new();
    for seed in 0..4 {
        let config = CeConfig {
            rho: 0.05,
            alpha: Schedule::Constant(1.0),
            n_k: Schedule::Constant(400),
            iterations: 15,
            gamma: -100.0,
            level_rule: LevelRule::Descend,
            seed,
        };
        let h = run_ce(&obj, &config, &mut Serial::new(&obj)).unwrap();
        let thetas = h.iterations.iter().map(|r| &r.theta).chain([&h.final_theta]);
        for theta in thetas {
            assert!(obj.family().in_box(theta), "{theta:?}");
            for block in &theta.0 {
                match block {
                    BlockParams::Beta { alpha, beta } => {
                        assert!((1.5..=7.0).contains(alpha) && (1.5..=7.0).contains(beta));
                    }
                    BlockParams::Gaussian { mu } => {
                        assert!((mu[0] - 0.2).abs() <= 0.01 && (mu[1] + 0.1).abs() <= 0.01);
                    }
                }
            }
        }
        // the Gaussian mean is pushed against the wall it is driven toward
        let flat = h.final_theta.flatten();
        assert!((flat[4] - 0.19).abs() < 1e-6 && (flat[5] + 0.09).abs() < 1e-6, "{flat:?}");
    }
}
