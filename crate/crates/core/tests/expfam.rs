//! Exponential-family properties checked against quadrature and closed forms.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use raresim::expfam::{
    self, beta_mean_params, log_density, log_likelihood_ratio, mean_params, mean_to_natural, natural_params, Block,
    BlockParams, FamilySpec, FixedCovGaussian, ParamPoint, ScaledBeta, SHAPE_MAX, SHAPE_MIN,
};

/// Tanh-sinh quadrature of `g(u, 1-u)` over (0, 1); both arguments are
/// formed without cancellation so endpoint behavior is resolved.
fn tanh_sinh(g: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let mut sum = 0.0;
    for k in -320i32..=320 {
        let t = k as f64 * h;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let u = 1.0 / (1.0 + (-2.0 * s).exp());
        let v = 1.0 / (1.0 + (2.0 * s).exp());
        if u <= 0.0 || v <= 0.0 {
            continue;
        }
        let weight = std::f64::consts::FRAC_PI_4 * t.cosh() / s.cosh().powi(2);
        sum += weight * g(u, v);
    }
    sum * h
}

fn beta_family(lo: f64, hi: f64) -> FamilySpec {
    FamilySpec::new(vec![Block::Beta(ScaledBeta::new(lo, hi))])
}

fn beta(alpha: f64, beta: f64) -> ParamPoint {
    ParamPoint(vec![BlockParams::Beta { alpha, beta }])
}

#[test]
fn beta_density_integrates_to_one() {
    let fam = beta_family(80.0, 120.0);
    for &(a, b) in &[(1.5, 1.5), (2.0, 2.0), (1.5, 7.0), (7.0, 1.5), (7.0, 7.0), (3.3, 5.1)] {
        let theta = beta(a, b);
        let total = tanh_sinh(|u, _| 40.0 * log_density(&fam, &theta, &[80.0 + 40.0 * u]).unwrap().exp());
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }
}

#[test]
fn beta_mean_parameters_match_quadrature_moments() {
    let fam = beta_family(0.0, 1.0);
    for &(a, b) in &[(1.5, 2.5), (2.0, 2.0), (6.5, 1.7)] {
        let theta = beta(a, b);
        let density = |u: f64| log_density(&fam, &theta, &[u]).unwrap().exp();
        let e_ln_u = tanh_sinh(|u, _| u.ln() * density(u));
        let e_ln_v = tanh_sinh(|u, v| v.ln() * density(u));
        let (m1, m2) = beta_mean_params(a, b);
        assert_abs_diff_eq!(m1, e_ln_u, epsilon = 1e-8);
        assert_abs_diff_eq!(m2, e_ln_v, epsilon = 1e-8);
    }
}

#[test]
fn beta_mean_parameters_are_the_log_partition_gradient() {
    // central differences of ln B(α, β), computed independently by statrs
    let ln_b = |a: f64, b: f64| statrs::function::beta::ln_beta(a, b);
    let h = 1e-5;
    for &(a, b) in &[(1.5, 1.5), (2.0, 5.0), (6.9, 3.2)] {
        let (m1, m2) = beta_mean_params(a, b);
        assert_abs_diff_eq!(m1, (ln_b(a + h, b) - ln_b(a - h, b)) / (2.0 * h), epsilon = 1e-8);
        assert_abs_diff_eq!(m2, (ln_b(a, b + h) - ln_b(a, b - h)) / (2.0 * h), epsilon = 1e-8);
    }
}

#[test]
fn round_trip_on_the_search_grid() {
    let fam = beta_family(-1.0, 1.0);
    let step = (SHAPE_MAX - SHAPE_MIN) / 19.0;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let (a, b) = (SHAPE_MIN + step * i as f64, SHAPE_MIN + step * j as f64);
            let eta = mean_params(&fam, &beta(a, b)).unwrap();
            let back = mean_to_natural(&fam, &eta, None).unwrap().flatten();
            worst = worst.max((back[0] - a).abs()).max((back[1] - b).abs());
        }
    }
    assert!(worst <= 1e-8, "worst round-trip error {worst:e}");
}

#[test]
fn gaussian_density_normalizes_and_ratio_is_consistent() {
    let fam = FamilySpec::new(vec![Block::Gaussian(FixedCovGaussian::isotropic(vec![0.0], 1.0))]);
    let theta = ParamPoint(vec![BlockParams::Gaussian { mu: vec![0.7] }]);
    // map (0,1) to the real line with x = ln(u / (1-u))
    let total = tanh_sinh(|u, v| {
        let x = (u / v).ln();
        log_density(&fam, &theta, &[x]).unwrap().exp() / (u * v)
    });
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    let theta0 = ParamPoint(vec![BlockParams::Gaussian { mu: vec![0.0] }]);
    for x in [-3.0, 0.0, 1.25] {
        let direct = log_density(&fam, &theta0, &[x]).unwrap() - log_density(&fam, &theta, &[x]).unwrap();
        let llr = log_likelihood_ratio(&fam, &theta0, &theta, &[x]).unwrap();
        assert_abs_diff_eq!(llr, direct, epsilon = 1e-12);
        // closed form for unit variance: ln φ(x) - ln φ(x - μ) = -μx + μ²/2
        assert_abs_diff_eq!(llr, -0.7 * x + 0.245, epsilon = 1e-12);
    }
}

fn mixed_family() -> FamilySpec {
    FamilySpec::new(vec![
        Block::Beta(ScaledBeta::new(80.0, 120.0)),
        Block::Beta(ScaledBeta::new(-0.25, 0.25)),
        Block::Gaussian(FixedCovGaussian::isotropic(vec![0.5, -0.5, 0.0], 0.01)),
    ])
}

fn shape() -> impl Strategy<Value = f64> {
    SHAPE_MIN..=SHAPE_MAX
}

fn point() -> impl Strategy<Value = ParamPoint> {
    (shape(), shape(), shape(), shape(), prop::collection::vec(-0.01f64..=0.01, 3)).prop_map(|(a1, b1, a2, b2, d)| {
        ParamPoint(vec![
            BlockParams::Beta { alpha: a1, beta: b1 },
            BlockParams::Beta { alpha: a2, beta: b2 },
            BlockParams::Gaussian {
                mu: vec![0.5 + d[0], -0.5 + d[1], d[2]],
            },
        ])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn samples_stay_in_support(theta in point(), seed in any::<u64>()) {
        let fam = mixed_family();
        let x = expfam::sample(&fam, &theta, seed).unwrap();
        prop_assert!(x[0] >= 80.0 && x[0] <= 120.0);
        prop_assert!(x[1] >= -0.25 && x[1] <= 0.25);
        prop_assert!(log_density(&fam, &theta, &x).unwrap().is_finite());
        prop_assert_eq!(&x, &expfam::sample(&fam, &theta, seed).unwrap());
    }

    #[test]
    fn ratio_at_equal_parameters_is_exactly_zero(theta in point(), seed in any::<u64>()) {
        let fam = mixed_family();
        let x = expfam::sample(&fam, &theta, seed).unwrap();
        prop_assert_eq!(log_likelihood_ratio(&fam, &theta, &theta, &x).unwrap(), 0.0);
    }

    #[test]
    fn moment_round_trip_inside_the_box(theta in point()) {
        let fam = mixed_family();
        let eta = mean_params(&fam, &theta).unwrap();
        let back = mean_to_natural(&fam, &eta, None).unwrap();
        for (a, b) in back.flatten().iter().zip(theta.flatten()) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn projection_lands_in_the_box_and_is_idempotent(
        a in 0.2f64..30.0, b in 0.2f64..30.0, mu in prop::collection::vec(-5.0f64..5.0, 3)
    ) {
        let fam = mixed_family();
        let theta = ParamPoint(vec![
            BlockParams::Beta { alpha: a, beta: b },
            BlockParams::Beta { alpha: b, beta: a },
            BlockParams::Gaussian { mu },
        ]);
        let p = fam.project(&theta);
        prop_assert!(fam.in_box(&p));
        prop_assert_eq!(fam.project(&p), p);
    }

    #[test]
    fn natural_parameters_are_shapes_minus_one(theta in point()) {
        let fam = mixed_family();
        let nat = natural_params(&fam, &theta).unwrap();
        let flat = theta.flatten();
        for i in 0..4 {
            prop_assert_eq!(nat[i], flat[i] - 1.0);
        }
    }
}
