//! Beta-distribution mathematics: log-density, moments, analytic gradients of
//! the negative log-likelihood in (log α, log β), and a brute-force
//! single-instance MLE used as a training oracle.
//!
//! All optimization happens in (log α, log β) so positivity is structural.

use crate::scalar::Scalar;
use crate::special::{digamma, ln_gamma};

/// Fitting box: α, β ∈ [BOX_MIN, BOX_MAX]. An unbounded MLE diverges when all
/// ratings are identical; the cap bounds the fitted variance from below at a
/// numerically safe level.
pub const BOX_MIN: f64 = 0.05;
pub const BOX_MAX: f64 = 100.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BetaError {
    #[error("beta parameter must be positive, got {0}")]
    NonPositiveParameter(f64),
    #[error("value {0} outside the open support (0, 1)")]
    OutOfSupport(f64),
    #[error("rating list is empty")]
    EmptyRatings,
}

/// Beta-distribution parameters, stored as logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams<T> {
    log_alpha: T,
    log_beta: T,
}

impl<T: Scalar> BetaParams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self, BetaError> {
        for v in [alpha, beta] {
            if !(v > T::zero()) {
                return Err(BetaError::NonPositiveParameter(v.to_f64().unwrap_or(f64::NAN)));
            }
        }
        Ok(Self { log_alpha: alpha.ln(), log_beta: beta.ln() })
    }

    pub fn from_logs(log_alpha: T, log_beta: T) -> Self {
        Self { log_alpha, log_beta }
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn beta(&self) -> T {
        self.log_beta.exp()
    }

    pub fn log_alpha(&self) -> T {
        self.log_alpha
    }

    pub fn log_beta(&self) -> T {
        self.log_beta
    }
}

/// Mean and variance of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMoments<T> {
    /// μ = α/(α+β), in (0,1).
    pub mean: T,
    /// σ² = αβ/((α+β)²(α+β+1)), in (0, 0.25); always < μ(1−μ).
    pub variance: T,
}

/// log B(α,β) = lnΓ(α) + lnΓ(β) − lnΓ(α+β). Symmetric in its arguments.
pub fn log_beta_fn<T: Scalar>(alpha: T, beta: T) -> Result<T, BetaError> {
    for v in [alpha, beta] {
        if !(v > T::zero()) {
            return Err(BetaError::NonPositiveParameter(v.to_f64().unwrap_or(f64::NAN)));
        }
    }
    Ok(ln_gamma(alpha) + ln_gamma(beta) - ln_gamma(alpha + beta))
}

/// Log density of Beta(α,β) at `y`; `y` must lie strictly inside (0, 1).
/// Corpus clipping guarantees pipeline callers never hit the boundary.
pub fn log_pdf<T: Scalar>(y: T, p: &BetaParams<T>) -> Result<T, BetaError> {
    if !(y > T::zero() && y < T::one()) {
        return Err(BetaError::OutOfSupport(y.to_f64().unwrap_or(f64::NAN)));
    }
    let (a, b) = (p.alpha(), p.beta());
    let log_b = log_beta_fn(a, b)?;
    Ok((a - T::one()) * y.ln() + (b - T::one()) * (T::one() - y).ln() - log_b)
}

/// Closed-form mean and variance.
pub fn moments<T: Scalar>(p: &BetaParams<T>) -> BetaMoments<T> {
    let (a, b) = (p.alpha(), p.beta());
    let s = a + b;
    BetaMoments { mean: a / s, variance: a * b / (s * s * (s + T::one())) }
}

/// Per-instance sufficient statistics of the Beta log-likelihood. The NLL and
/// its gradient depend on the ratings only through these three numbers, so a
/// training step over an instance costs O(1) in the number of ratings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStats<T> {
    pub n: usize,
    pub sum_log_y: T,
    pub sum_log_1my: T,
}

impl<T: Scalar> SufficientStats<T> {
    /// Accumulates Σ log y and Σ log(1−y). `ys` must be nonempty and strictly
    /// inside (0, 1).
    pub fn from_ratings(ys: &[T]) -> Result<Self, BetaError> {
        if ys.is_empty() {
            return Err(BetaError::EmptyRatings);
        }
        let mut sum_log_y = T::zero();
        let mut sum_log_1my = T::zero();
        for &y in ys {
            if !(y > T::zero() && y < T::one()) {
                return Err(BetaError::OutOfSupport(y.to_f64().unwrap_or(f64::NAN)));
            }
            sum_log_y += y.ln();
            sum_log_1my += (T::one() - y).ln();
        }
        Ok(Self { n: ys.len(), sum_log_y, sum_log_1my })
    }
}

/// Negative log-likelihood of the ratings behind `stats` under
/// Beta(exp(log_alpha), exp(log_beta)), and its gradient in the log-parameters:
///
///   ∂nll/∂logα = α·Σ_j [ψ(α) − ψ(α+β) − log y_j]
///   ∂nll/∂logβ = β·Σ_j [ψ(β) − ψ(α+β) − log(1−y_j)]
pub fn nll_and_grad_stats<T: Scalar>(
    stats: &SufficientStats<T>,
    log_alpha: T,
    log_beta: T,
) -> (T, T, T) {
    let a = log_alpha.exp();
    let b = log_beta.exp();
    let n = T::from_count(stats.n);
    let log_b_fn = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let nll = n * log_b_fn - (a - T::one()) * stats.sum_log_y - (b - T::one()) * stats.sum_log_1my;
    let psi_sum = digamma(a + b);
    let g_log_alpha = a * (n * (digamma(a) - psi_sum) - stats.sum_log_y);
    let g_log_beta = b * (n * (digamma(b) - psi_sum) - stats.sum_log_1my);
    (nll, g_log_alpha, g_log_beta)
}

/// `nll_and_grad_stats` over an explicit rating list.
pub fn nll_and_grad<T: Scalar>(
    ys: &[T],
    log_alpha: T,
    log_beta: T,
) -> Result<(T, T, T), BetaError> {
    let stats = SufficientStats::from_ratings(ys)?;
    Ok(nll_and_grad_stats(&stats, log_alpha, log_beta))
}

const GRID_STEPS: usize = 40;
const REFINE_ITERS: usize = 200;

/// Maximum-likelihood Beta fit to one instance's ratings, constrained to the
/// box α, β ∈ [0.05, 100]: coarse log-grid search refined by projected
/// gradient descent. Deterministic; never worse than the best grid point.
///
/// Symmetric sufficient statistics (Σlog y = Σlog(1−y)) are detected and fit
/// along the α = β diagonal, so symmetric data yields mean 0.5 exactly.
pub fn fit_single_instance<T: Scalar>(ys: &[T]) -> Result<BetaParams<T>, BetaError> {
    let stats = SufficientStats::from_ratings(ys)?;
    let lo = T::c(BOX_MIN).ln();
    let hi = T::c(BOX_MAX).ln();

    let symmetric = (stats.sum_log_y - stats.sum_log_1my).abs()
        <= T::c(1e-12) * (T::one() + stats.sum_log_y.abs() + stats.sum_log_1my.abs());
    if symmetric {
        let (la, _) = minimize(
            &stats,
            |stats, x| {
                let (nll, ga, gb) = nll_and_grad_stats(stats, x[0], x[0]);
                (nll, [ga + gb, T::zero()])
            },
            1,
            lo,
            hi,
        );
        return Ok(BetaParams::from_logs(la[0], la[0]));
    }

    let (xs, _) = minimize(
        &stats,
        |stats, x| {
            let (nll, ga, gb) = nll_and_grad_stats(stats, x[0], x[1]);
            (nll, [ga, gb])
        },
        2,
        lo,
        hi,
    );
    Ok(BetaParams::from_logs(xs[0], xs[1]))
}

/// Grid search plus projected gradient descent over `dim` log-parameters
/// (1 = diagonal α=β, 2 = full). Returns the best point and its objective.
fn minimize<T: Scalar>(
    stats: &SufficientStats<T>,
    f: impl Fn(&SufficientStats<T>, [T; 2]) -> (T, [T; 2]),
    dim: usize,
    lo: T,
    hi: T,
) -> ([T; 2], T) {
    let span = hi - lo;
    let steps = T::from_count(GRID_STEPS - 1);
    let grid = |i: usize| lo + span * T::from_count(i) / steps;

    let mut best = [grid(0); 2];
    let mut best_val = f(stats, best).0;
    for i in 0..GRID_STEPS {
        let n_j = if dim == 2 { GRID_STEPS } else { 1 };
        for j in 0..n_j {
            let x = [grid(i), if dim == 2 { grid(j) } else { grid(i) }];
            let v = f(stats, x).0;
            if v < best_val {
                best_val = v;
                best = x;
            }
        }
    }

    let clamp = |v: T| v.max(lo).min(hi);
    let mut step = T::c(0.5);
    let mut x = best;
    let mut val = best_val;
    for _ in 0..REFINE_ITERS {
        let (_, g) = f(stats, x);
        let mut cand = x;
        for d in 0..dim {
            cand[d] = clamp(x[d] - step * g[d]);
        }
        let cand_val = f(stats, cand).0;
        if cand_val < val {
            x = cand;
            val = cand_val;
            step *= T::c(1.2);
        } else {
            step *= T::c(0.5);
            if step < T::c(1e-12) {
                break;
            }
        }
    }
    // Descent only ever accepts improvements, so `val <= best_val` holds here.
    ([x[0], if dim == 2 { x[1] } else { x[0] }], val)
}
