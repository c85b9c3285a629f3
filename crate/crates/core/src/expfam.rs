//! Products of natural exponential families used as importance samplers.
//!
//! Two block kinds are supported:
//!
//! * [`ScaledBeta`]: a Beta variable stretched onto `[lo, hi]`. With
//!   `u = (x - lo) / (hi - lo)` the sufficient statistic is
//!   `(ln u, ln(1 - u))`, the natural parameter is `(alpha - 1, beta - 1)`
//!   and the log partition is `ln B(alpha, beta)`.
//! * [`FixedCovGaussian`]: a multivariate normal whose covariance stays at
//!   the base value. The statistic is `x` itself and the mean parameter is
//!   `mu`, so parameters are stored as `mu` directly.
//!
//! A [`FamilySpec`] is an ordered product of blocks and a [`ParamPoint`] is
//! one parameter setting for it. Densities are always handled on the log
//! scale; likelihood ratios are sums of per-block log differences.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::special::{digamma, ln_beta, trigamma};

/// Clamp applied to the unit-interval variable before taking logs.
pub const BOUNDARY_EPS: f64 = 1e-12;

/// Residual tolerance (∞-norm) of the Beta moment-matching solve.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITERS: usize = 100;

/// Default search box for Beta shapes.
pub const SHAPE_MIN: f64 = 1.5;
pub const SHAPE_MAX: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpFamError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("block {block}: parameter kind does not match the family")]
    BlockKind { block: usize },
    #[error("block {block}: invalid parameters: {reason}")]
    InvalidParams { block: usize, reason: String },
    #[error("block {block}: mean parameters ({eta1}, {eta2}) are not realizable by a Beta distribution")]
    NotRealizable { block: usize, eta1: f64, eta2: f64 },
    #[error("block {block}: Newton solve did not converge (residual {residual:e})")]
    NewtonFailed { block: usize, residual: f64 },
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
}

pub type Result<T> = std::result::Result<T, ExpFamError>;

/// One realization drawn from a [`FamilySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVector(pub Vec<f64>);

impl Deref for SampleVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SampleVector {
    fn from(v: Vec<f64>) -> Self {
        SampleVector(v)
    }
}

/// A one-dimensional Beta variable on `[lo, hi]` with a box on its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledBeta {
    pub lo: f64,
    pub hi: f64,
    pub shape_min: f64,
    pub shape_max: f64,
}

impl ScaledBeta {
    pub fn new(lo: f64, hi: f64) -> Self {
        ScaledBeta {
            lo,
            hi,
            shape_min: SHAPE_MIN,
            shape_max: SHAPE_MAX,
        }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 1.0)
    }

    fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Unit-interval coordinate, clamped away from the boundary.
    /// `None` when `x` lies strictly outside `[lo, hi]`.
    fn unit_coord(&self, x: f64) -> Option<f64> {
        let u = (x - self.lo) / self.width();
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        Some(u.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS))
    }
}

/// Gaussian with fixed covariance `L Lᵀ`; only the mean is searched.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedCovGaussian {
    pub mu0: Vec<f64>,
    chol: DMatrix<f64>,
    /// Half-width of the ∞-norm box around `mu0` that search iterates must stay in.
    pub box_radius: f64,
}

impl FixedCovGaussian {
    /// Builds the block from a lower-triangular Cholesky factor.
    pub fn from_cholesky(mu0: Vec<f64>, chol: DMatrix<f64>, box_radius: f64) -> Result<Self> {
        let d = mu0.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(ExpFamError::Dimension {
                what: "cholesky factor",
                expected: d,
                got: chol.nrows(),
            });
        }
        for i in 0..d {
            if !(chol[(i, i)] > 0.0) {
                return Err(ExpFamError::NotPositiveDefinite);
            }
            for j in (i + 1)..d {
                if chol[(i, j)] != 0.0 {
                    return Err(ExpFamError::NotPositiveDefinite);
                }
            }
        }
        Ok(FixedCovGaussian {
            mu0,
            chol,
            box_radius,
        })
    }

    pub fn from_covariance(mu0: Vec<f64>, cov: DMatrix<f64>, box_radius: f64) -> Result<Self> {
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(ExpFamError::NotPositiveDefinite);
        }
        let chol = cov.cholesky().ok_or(ExpFamError::NotPositiveDefinite)?.l();
        Self::from_cholesky(mu0, chol, box_radius)
    }

    /// Unit covariance, used by the analytic toy problems.
    pub fn isotropic(mu0: Vec<f64>, box_radius: f64) -> Self {
        let d = mu0.len();
        FixedCovGaussian {
            mu0,
            chol: DMatrix::identity(d, d),
            box_radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Squared Mahalanobis norm of `x - mu`.
    fn mahalanobis2(&self, x: &[f64], mu: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
        let white = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky diagonal checked at construction");
        white.norm_squared()
    }

    fn log_norm_const(&self) -> f64 {
        let log_det_half: f64 = (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum();
        -log_det_half - 0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Beta(ScaledBeta),
    Gaussian(FixedCovGaussian),
}

impl Block {
    pub fn dim(&self) -> usize {
        match self {
            Block::Beta(_) => 1,
            Block::Gaussian(g) => g.dim(),
        }
    }

    pub fn stats_dim(&self) -> usize {
        match self {
            Block::Beta(_) => 2,
            Block::Gaussian(g) => g.dim(),
        }
    }
}

/// An ordered product of exponential-family blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    blocks: Vec<Block>,
    dim: usize,
    stats_dim: usize,
}

impl FamilySpec {
    pub fn new(blocks: Vec<Block>) -> Self {
        let dim = blocks.iter().map(Block::dim).sum();
        let stats_dim = blocks.iter().map(Block::stats_dim).sum();
        FamilySpec {
            blocks,
            dim,
            stats_dim,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Sample dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the sufficient-statistic vector.
    pub fn stats_dim(&self) -> usize {
        self.stats_dim
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(ExpFamError::Dimension {
                what: "sample",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Validates structure and positivity of `theta` (not the search box).
    pub fn check_params(&self, theta: &ParamPoint) -> Result<()> {
        if theta.0.len() != self.blocks.len() {
            return Err(ExpFamError::Dimension {
                what: "parameter blocks",
                expected: self.blocks.len(),
                got: theta.0.len(),
            });
        }
        for (block, (spec, param)) in self.blocks.iter().zip(&theta.0).enumerate() {
            match (spec, param) {
                (Block::Beta(_), BlockParams::Beta { alpha, beta }) => {
                    if !(alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0) {
                        return Err(ExpFamError::InvalidParams {
                            block,
                            reason: format!("Beta shapes must be positive, got ({alpha}, {beta})"),
                        });
                    }
                }
                (Block::Gaussian(g), BlockParams::Gaussian { mu }) => {
                    if mu.len() != g.dim() {
                        return Err(ExpFamError::Dimension {
                            what: "gaussian mean",
                            expected: g.dim(),
                            got: mu.len(),
                        });
                    }
                    if mu.iter().any(|m| !m.is_finite()) {
                        return Err(ExpFamError::InvalidParams {
                            block,
                            reason: "non-finite mean".into(),
                        });
                    }
                }
                _ => return Err(ExpFamError::BlockKind { block }),
            }
        }
        Ok(())
    }

    /// Whether `theta` lies inside every block's search box.
    pub fn in_box(&self, theta: &ParamPoint) -> bool {
        self.blocks.iter().zip(&theta.0).all(|(spec, param)| match (spec, param) {
            (Block::Beta(b), BlockParams::Beta { alpha, beta }) => {
                (b.shape_min..=b.shape_max).contains(alpha) && (b.shape_min..=b.shape_max).contains(beta)
            }
            (Block::Gaussian(g), BlockParams::Gaussian { mu }) => mu
                .iter()
                .zip(&g.mu0)
                .all(|(m, m0)| (m - m0).abs() <= g.box_radius),
            _ => false,
        })
    }

    /// Coordinatewise projection onto the search box.
    pub fn project(&self, theta: &ParamPoint) -> ParamPoint {
        ParamPoint(
            self.blocks
                .iter()
                .zip(&theta.0)
                .map(|(spec, param)| match (spec, param) {
                    (Block::Beta(b), BlockParams::Beta { alpha, beta }) => BlockParams::Beta {
                        alpha: alpha.clamp(b.shape_min, b.shape_max),
                        beta: beta.clamp(b.shape_min, b.shape_max),
                    },
                    (Block::Gaussian(g), BlockParams::Gaussian { mu }) => BlockParams::Gaussian {
                        mu: mu
                            .iter()
                            .zip(&g.mu0)
                            .map(|(m, m0)| clamp_to_radius(*m, *m0, g.box_radius))
                            .collect(),
                    },
                    (_, p) => p.clone(),
                })
                .collect(),
        )
    }
}

/// `m` clamped to `[m0 - r, m0 + r]`, nudged inward by ulps where needed so
/// that `|m - m0| <= r` also holds in floating point.
fn clamp_to_radius(m: f64, m0: f64, r: f64) -> f64 {
    let mut c = m.clamp(m0 - r, m0 + r);
    while (c - m0).abs() > r {
        c = if c > m0 { c.next_down() } else { c.next_up() };
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Beta { alpha: f64, beta: f64 },
    Gaussian { mu: Vec<f64> },
}

/// One parameter setting θ, block-aligned with a [`FamilySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(pub Vec<BlockParams>);

impl ParamPoint {
    /// Flattened view: (alpha, beta) per Beta block, then mu per Gaussian block.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.0 {
            match p {
                BlockParams::Beta { alpha, beta } => {
                    out.push(*alpha);
                    out.push(*beta);
                }
                BlockParams::Gaussian { mu } => out.extend_from_slice(mu),
            }
        }
        out
    }
}

fn beta_log_density_unit(alpha: f64, beta: f64, u: f64) -> f64 {
    (alpha - 1.0) * u.ln() + (beta - 1.0) * (1.0 - u).ln() - ln_beta(alpha, beta)
}

/// ln p_θ(x), including the `-ln(hi - lo)` Jacobian of every scaled Beta.
/// Points outside a Beta block's support give `-inf`.
pub fn log_density(family: &FamilySpec, theta: &ParamPoint, x: &[f64]) -> Result<f64> {
    family.check_sample(x)?;
    family.check_params(theta)?;
    let mut total = 0.0;
    let mut offset = 0;
    for (spec, param) in family.blocks.iter().zip(&theta.0) {
        match (spec, param) {
            (Block::Beta(b), BlockParams::Beta { alpha, beta }) => {
                let Some(u) = b.unit_coord(x[offset]) else {
                    return Ok(f64::NEG_INFINITY);
                };
                total += beta_log_density_unit(*alpha, *beta, u) - b.width().ln();
                offset += 1;
            }
            (Block::Gaussian(g), BlockParams::Gaussian { mu }) => {
                let d = g.dim();
                total += g.log_norm_const() - 0.5 * g.mahalanobis2(&x[offset..offset + d], mu);
                offset += d;
            }
            _ => unreachable!("checked by check_params"),
        }
    }
    Ok(total)
}

/// Draws one sample; a pure function of `(theta, seed)`.
pub fn sample(family: &FamilySpec, theta: &ParamPoint, seed: u64) -> Result<SampleVector> {
    family.check_params(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(family.dim);
    for (spec, param) in family.blocks.iter().zip(&theta.0) {
        match (spec, param) {
            (Block::Beta(b), BlockParams::Beta { alpha, beta }) => {
                let dist = rand_distr::Beta::new(*alpha, *beta).map_err(|e| ExpFamError::InvalidParams {
                    block: out.len(),
                    reason: e.to_string(),
                })?;
                let u: f64 = dist.sample(&mut rng);
                out.push(b.lo + b.width() * u);
            }
            (Block::Gaussian(g), BlockParams::Gaussian { mu }) => {
                let d = g.dim();
                let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
                let lz = g.cholesky() * z;
                out.extend(mu.iter().zip(lz.iter()).map(|(m, v)| m + v));
            }
            _ => unreachable!("checked by check_params"),
        }
    }
    Ok(SampleVector(out))
}

/// Γ(x): `(ln u, ln(1-u))` per Beta coordinate, raw coordinates per Gaussian block.
pub fn sufficient_stats(family: &FamilySpec, x: &[f64]) -> Result<Vec<f64>> {
    family.check_sample(x)?;
    let mut out = Vec::with_capacity(family.stats_dim);
    let mut offset = 0;
    for spec in &family.blocks {
        match spec {
            Block::Beta(b) => {
                let u = ((x[offset] - b.lo) / b.width()).clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
                out.push(u.ln());
                out.push((1.0 - u).ln());
                offset += 1;
            }
            Block::Gaussian(g) => {
                out.extend_from_slice(&x[offset..offset + g.dim()]);
                offset += g.dim();
            }
        }
    }
    Ok(out)
}

/// ∇A(θ), laid out like [`sufficient_stats`].
pub fn mean_params(family: &FamilySpec, theta: &ParamPoint) -> Result<Vec<f64>> {
    family.check_params(theta)?;
    let mut out = Vec::with_capacity(family.stats_dim);
    for param in &theta.0 {
        match param {
            BlockParams::Beta { alpha, beta } => {
                let (m1, m2) = beta_mean_params(*alpha, *beta);
                out.push(m1);
                out.push(m2);
            }
            BlockParams::Gaussian { mu } => out.extend_from_slice(mu),
        }
    }
    Ok(out)
}

/// `(ψ(a) − ψ(a+b), ψ(b) − ψ(a+b))`.
pub fn beta_mean_params(alpha: f64, beta: f64) -> (f64, f64) {
    let ds = digamma(alpha + beta);
    (digamma(alpha) - ds, digamma(beta) - ds)
}

/// Natural parameters: `(alpha - 1, beta - 1)` per Beta block and `Σ⁻¹ mu`
/// per Gaussian block.
pub fn natural_params(family: &FamilySpec, theta: &ParamPoint) -> Result<Vec<f64>> {
    family.check_params(theta)?;
    let mut out = Vec::with_capacity(family.stats_dim);
    for (spec, param) in family.blocks.iter().zip(&theta.0) {
        match (spec, param) {
            (Block::Beta(_), BlockParams::Beta { alpha, beta }) => {
                out.push(alpha - 1.0);
                out.push(beta - 1.0);
            }
            (Block::Gaussian(g), BlockParams::Gaussian { mu }) => {
                let v = DVector::from_column_slice(mu);
                let y = g.chol.solve_lower_triangular(&v).expect("checked");
                let w = g.chol.transpose().solve_upper_triangular(&y).expect("checked");
                out.extend(w.iter());
            }
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// Failure of the Beta moment-matching solve, before a block index is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSolveError {
    NotRealizable,
    NoConvergence { residual: f64 },
}

/// Solves `ψ(a) − ψ(a+b) = eta1`, `ψ(b) − ψ(a+b) = eta2` by damped Newton.
///
/// The system is the stationarity condition of the strictly convex
/// `g(a, b) = ln B(a, b) − (a − 1) eta1 − (b − 1) eta2`, whose Hessian is the
/// trigamma Jacobian below; steps are halved until `g` or the residual
/// decreases and both shapes stay positive.
pub fn solve_beta_moments(eta1: f64, eta2: f64, init: (f64, f64)) -> std::result::Result<(f64, f64), BetaSolveError> {
    if !(eta1 < 0.0 && eta2 < 0.0 && eta1.exp() + eta2.exp() < 1.0) {
        return Err(BetaSolveError::NotRealizable);
    }
    let objective = |a: f64, b: f64| ln_beta(a, b) - (a - 1.0) * eta1 - (b - 1.0) * eta2;
    let residual = |a: f64, b: f64| {
        let (m1, m2) = beta_mean_params(a, b);
        (m1 - eta1, m2 - eta2)
    };
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());

    let (mut a, mut b) = init;
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        a = 2.0;
        b = 2.0;
    }
    let mut r = residual(a, b);
    let mut g = objective(a, b);
    let mut converged_at = None;
    for iter in 0..NEWTON_MAX_ITERS {
        if norm(r) <= NEWTON_TOL && converged_at.is_none() {
            converged_at = Some(iter);
        }
        // one polishing step after reaching tolerance
        if let Some(at) = converged_at {
            if iter > at {
                break;
            }
        }
        let ts = trigamma(a + b);
        let j11 = trigamma(a) - ts;
        let j22 = trigamma(b) - ts;
        let j12 = -ts;
        let det = j11 * j22 - j12 * j12;
        if !(det > 0.0) {
            break;
        }
        let da = -(j22 * r.0 - j12 * r.1) / det;
        let db = -(j11 * r.1 - j12 * r.0) / det;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + t * da, b + t * db);
            if na > 0.0 && nb > 0.0 {
                let nr = residual(na, nb);
                let ng = objective(na, nb);
                if ng < g || norm(nr) < norm(r) {
                    a = na;
                    b = nb;
                    r = nr;
                    g = ng;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(r) <= NEWTON_TOL {
        Ok((a, b))
    } else {
        Err(BetaSolveError::NoConvergence { residual: norm(r) })
    }
}

/// Inverts ∇A without projecting: returns the unconstrained maximizer.
///
/// `init` supplies the Newton starting point for Beta blocks (usually the
/// current iterate); `(2, 2)` is used otherwise.
pub fn mean_to_natural_unconstrained(
    family: &FamilySpec,
    eta: &[f64],
    init: Option<&ParamPoint>,
) -> Result<ParamPoint> {
    if eta.len() != family.stats_dim {
        return Err(ExpFamError::Dimension {
            what: "mean-parameter vector",
            expected: family.stats_dim,
            got: eta.len(),
        });
    }
    if let Some(init) = init {
        family.check_params(init)?;
    }
    let mut out = Vec::with_capacity(family.blocks.len());
    let mut offset = 0;
    for (block, spec) in family.blocks.iter().enumerate() {
        match spec {
            Block::Beta(_) => {
                let (eta1, eta2) = (eta[offset], eta[offset + 1]);
                let start = match init.map(|p| &p.0[block]) {
                    Some(BlockParams::Beta { alpha, beta }) => (*alpha, *beta),
                    _ => (2.0, 2.0),
                };
                let (alpha, beta) = solve_beta_moments(eta1, eta2, start).map_err(|e| match e {
                    BetaSolveError::NotRealizable => ExpFamError::NotRealizable { block, eta1, eta2 },
                    BetaSolveError::NoConvergence { residual } => ExpFamError::NewtonFailed { block, residual },
                })?;
                out.push(BlockParams::Beta { alpha, beta });
                offset += 2;
            }
            Block::Gaussian(g) => {
                out.push(BlockParams::Gaussian {
                    mu: eta[offset..offset + g.dim()].to_vec(),
                });
                offset += g.dim();
            }
        }
    }
    Ok(ParamPoint(out))
}

/// Inverts ∇A and projects the result onto the search box.
pub fn mean_to_natural(family: &FamilySpec, eta: &[f64], init: Option<&ParamPoint>) -> Result<ParamPoint> {
    let theta = mean_to_natural_unconstrained(family, eta, init)?;
    Ok(family.project(&theta))
}

/// `ln p0(x) − ln p_θ(x)` as a sum of per-block differences.
///
/// Beta Jacobians and Gaussian normalizers cancel and are never formed, so
/// identical parameters give exactly zero.
pub fn log_likelihood_ratio(family: &FamilySpec, theta0: &ParamPoint, theta: &ParamPoint, x: &[f64]) -> Result<f64> {
    family.check_sample(x)?;
    family.check_params(theta0)?;
    family.check_params(theta)?;
    let mut total = 0.0;
    let mut offset = 0;
    for (spec, (p0, p)) in family.blocks.iter().zip(theta0.0.iter().zip(&theta.0)) {
        match (spec, p0, p) {
            (Block::Beta(b), BlockParams::Beta { alpha: a0, beta: b0 }, BlockParams::Beta { alpha, beta }) => {
                let Some(u) = b.unit_coord(x[offset]) else {
                    return Ok(f64::NAN);
                };
                total += beta_log_density_unit(*a0, *b0, u) - beta_log_density_unit(*alpha, *beta, u);
                offset += 1;
            }
            (Block::Gaussian(g), BlockParams::Gaussian { mu: mu0 }, BlockParams::Gaussian { mu }) => {
                let d = g.dim();
                let xs = &x[offset..offset + d];
                total += 0.5 * (g.mahalanobis2(xs, mu) - g.mahalanobis2(xs, mu0));
                offset += d;
            }
            _ => unreachable!("checked by check_params"),
        }
    }
    Ok(total)
}
