use super::{evaluate_batch, likelihood_weights, CeError};
use crate::expfam::ParamPoint;
use crate::objective::Objective;
use crate::orchestrator::RolloutProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Naive,
    CrossEntropy,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::CrossEntropy => "cross-entropy",
        }
    }
}

/// A rare-event probability estimate at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub gamma_test: f64,
    pub p_hat: f64,
    pub std_err: f64,
    pub rare_count: usize,
    pub n: usize,
    /// Σw / max w over the whole batch (`n` for plain Monte Carlo).
    pub ess: f64,
    pub method: Method,
}

/// Mean and standard error of `zᵢ = wᵢ 1{fᵢ ≤ γ}` for every γ in the grid.
///
/// Naive Monte Carlo goes through the same arithmetic with `wᵢ = 1`, so an
/// importance sampler whose weights are all exactly one reproduces it bit
/// for bit. For 0/1 summands the standard error equals `√(p̂(1−p̂)/n)`.
fn reports(f_values: &[f64], weights: Option<&[f64]>, gamma_test: &[f64], method: Method) -> Vec<EstimateReport> {
    let n = f_values.len();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (sum_w, max_w) = (0..n).fold((0.0, f64::NEG_INFINITY), |(s, m), i| (s + w(i), f64::max(m, w(i))));
    let ess = if max_w > 0.0 { sum_w / max_w } else { 0.0 };
    gamma_test
        .iter()
        .map(|&gamma| {
            let (mut sum, mut sum_sq, mut rare_count) = (0.0, 0.0, 0);
            for (i, &f) in f_values.iter().enumerate() {
                if f <= gamma {
                    let z = w(i);
                    sum += z;
                    sum_sq += z * z;
                    rare_count += 1;
                }
            }
            let nf = n as f64;
            let p_hat = sum / nf;
            let var = (sum_sq / nf - p_hat * p_hat).max(0.0);
            EstimateReport {
                gamma_test: gamma,
                p_hat,
                std_err: (var / nf).sqrt(),
                rare_count,
                n,
                ess,
                method,
            }
        })
        .collect()
}

fn check_n(n: usize) -> Result<(), CeError> {
    if n == 0 {
        return Err(CeError::Config("n must be ≥ 1".into()));
    }
    Ok(())
}

/// Importance-sampling estimate from `n` draws of `theta`, reweighted to the base.
pub fn estimate_is(
    objective: &dyn Objective,
    theta: &ParamPoint,
    n: usize,
    gamma_test: &[f64],
    provider: &mut dyn RolloutProvider,
    seed: u64,
) -> Result<Vec<EstimateReport>, CeError> {
    check_n(n)?;
    objective.family().check_params(theta)?;
    let batch = evaluate_batch(objective, provider, theta, n, seed)?;
    let weights = likelihood_weights(objective.family(), objective.theta0(), theta, &batch.samples)?;
    Ok(reports(&batch.f_values, Some(&weights), gamma_test, Method::CrossEntropy))
}

/// Plain Monte Carlo estimate from `n` draws of the base distribution.
pub fn estimate_naive(
    objective: &dyn Objective,
    n: usize,
    gamma_test: &[f64],
    provider: &mut dyn RolloutProvider,
    seed: u64,
) -> Result<Vec<EstimateReport>, CeError> {
    check_n(n)?;
    let batch = evaluate_batch(objective, provider, objective.theta0(), n, seed)?;
    Ok(reports(&batch.f_values, None, gamma_test, Method::Naive))
}

/// One row of a CE-versus-naive comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub gamma_test: f64,
    /// CE rare count / naive rare count.
    pub rare_ratio: f64,
    /// Naive variance / CE variance of the estimator.
    pub variance_ratio: f64,
}

/// `a / b`, with `0/0 = 1` and `x/0 = inf`.
fn ratio(a: f64, b: f64) -> f64 {
    match (a == 0.0, b == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => a / b,
    }
}

pub fn compare_report(ce: &[EstimateReport], naive: &[EstimateReport]) -> Result<Vec<ComparisonRow>, CeError> {
    if ce.len() != naive.len() {
        return Err(CeError::GridMismatch(format!(
            "{} thresholds vs {} thresholds",
            ce.len(),
            naive.len()
        )));
    }
    ce.iter()
        .zip(naive)
        .map(|(c, b)| {
            if c.gamma_test.to_bits() != b.gamma_test.to_bits() {
                return Err(CeError::GridMismatch(format!(
                    "threshold {} vs {}",
                    c.gamma_test, b.gamma_test
                )));
            }
            if c.n != b.n {
                return Err(CeError::GridMismatch(format!("sample count {} vs {}", c.n, b.n)));
            }
            Ok(ComparisonRow {
                gamma_test: c.gamma_test,
                rare_ratio: ratio(c.rare_count as f64, b.rare_count as f64),
                variance_ratio: ratio(b.std_err * b.std_err, c.std_err * c.std_err),
            })
        })
        .collect()
}

/// Samples needed for relative accuracy `eps` at probability `p`:
/// `N ≳ 1 / (p ε²)`, rounded up.
///
/// A quotient within a few ulps of an integer is taken to be that integer,
/// so decimal inputs such as `(1e-5, 0.1)` give exactly `10_000_000`.
pub fn required_sample_size(p: f64, eps: f64) -> Result<u64, CeError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CeError::Config("p must lie in (0,1]".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CeError::Config("eps must be positive".into()));
    }
    let x = 1.0 / (p * eps * eps);
    if !(x < u64::MAX as f64) {
        return Err(CeError::Config("required sample size overflows".into()));
    }
    let nearest = x.round();
    let n = if (x - nearest).abs() <= 8.0 * f64::EPSILON * x { nearest } else { x.ceil() };
    Ok(n as u64)
}
