//! Variance-aware clamping of predicted means to hard 0/1, with dev-set
//! threshold selection maximizing ρ + τ − MAE_μ.

use serde::{Deserialize, Serialize};

use crate::metrics::{kendall_tau, mae, spearman_rho, MetricsError};
use crate::scalar::Scalar;

/// Distance from 0/1 within which a confident mean snaps to the boundary.
pub const CLAMP_MARGIN: f64 = 0.125;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PostprocessError {
    #[error("threshold fitting needs at least 3 dev points, got {0}")]
    TooFewPoints(usize),
    #[error("predictions and targets differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("objective undefined at every candidate threshold: {0}")]
    Degenerate(MetricsError),
}

/// Snap-to-boundary rule: means within `margin` of 0 or 1 become hard 0/1
/// when the prediction's variance is below `variance_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRule<T> {
    pub margin: T,
    pub variance_threshold: T,
}

impl<T: Scalar> ClampRule<T> {
    pub fn new(variance_threshold: T) -> Self {
        Self { margin: T::c(CLAMP_MARGIN), variance_threshold }
    }
}

/// Clamped score for a (mean, variance) prediction. Boundary comparisons are
/// ≤/≥ on the margin and strict < on the variance gate; the variance itself
/// is never altered by clamping.
pub fn apply_clamp<T: Scalar>(mean: T, variance: T, rule: &ClampRule<T>) -> T {
    if variance < rule.variance_threshold {
        if mean <= rule.margin {
            return T::zero();
        }
        if mean >= T::one() - rule.margin {
            return T::one();
        }
    }
    mean
}

/// A fitted rule plus the dev objective it achieved and the unclamped
/// baseline objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampFit<T> {
    pub rule: ClampRule<T>,
    pub objective: T,
    pub baseline: T,
}

fn objective<T: Scalar>(scores: &[T], targets: &[T]) -> Result<T, MetricsError> {
    Ok(spearman_rho(scores, targets)? + kendall_tau(scores, targets)? - mae(scores, targets)?)
}

/// Selects the variance threshold maximizing ρ + τ − MAE_μ of clamped dev
/// scores against target means.
///
/// The objective is piecewise constant in the threshold, changing only where
/// it crosses an observed dev variance, so the candidate grid {0} ∪ sorted
/// distinct variances ∪ {max} makes the search exact. Ties break toward the
/// smaller threshold (less clamping). Candidates where the objective is
/// undefined (e.g. clamping collapses scores to a constant) are skipped.
pub fn fit_clamp_threshold<T: Scalar>(
    dev_preds: &[(T, T)],
    dev_target_means: &[T],
) -> Result<ClampFit<T>, PostprocessError> {
    if dev_preds.len() != dev_target_means.len() {
        return Err(PostprocessError::LengthMismatch {
            left: dev_preds.len(),
            right: dev_target_means.len(),
        });
    }
    if dev_preds.len() < 3 {
        return Err(PostprocessError::TooFewPoints(dev_preds.len()));
    }

    let mut candidates = vec![T::zero()];
    let mut variances: Vec<T> = dev_preds.iter().map(|&(_, v)| v).collect();
    variances.sort_by(|a, b| a.partial_cmp(b).expect("finite variances"));
    variances.dedup();
    candidates.extend(variances);
    candidates.push(T::max_value());

    let mut best: Option<(T, T)> = None; // (threshold, objective)
    let mut baseline = None;
    let mut last_err = None;
    for &threshold in &candidates {
        let rule = ClampRule::new(threshold);
        let scores: Vec<T> =
            dev_preds.iter().map(|&(m, v)| apply_clamp(m, v, &rule)).collect();
        match objective(&scores, dev_target_means) {
            Ok(obj) => {
                if threshold == T::zero() {
                    baseline = Some(obj);
                }
                if best.is_none_or(|(_, b)| obj > b) {
                    best = Some((threshold, obj));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }

    let Some((threshold, objective)) = best else {
        return Err(PostprocessError::Degenerate(last_err.expect("some candidate failed")));
    };
    // With a defined candidate, threshold 0 is defined too (clamping only
    // merges scores, never un-merges), so the baseline is always present.
    let baseline = baseline.expect("threshold 0 evaluates whenever any candidate does");
    Ok(ClampFit { rule: ClampRule::new(threshold), objective, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn clamp_rule_examples() {
        let rule = ClampRule::new(0.01);
        assert_eq!(apply_clamp(0.93, 0.005, &rule), 1.0);
        assert_eq!(apply_clamp(0.93, 0.02, &rule), 0.93);
        assert_eq!(apply_clamp(0.5, 0.0001, &rule), 0.5);
        assert_eq!(apply_clamp(0.07, 0.005, &rule), 0.0);
    }

    #[test]
    fn clamp_boundary_semantics() {
        let rule = ClampRule::new(0.01);
        // Margin uses ≤/≥.
        assert_eq!(apply_clamp(0.125, 0.005, &rule), 0.0);
        assert_eq!(apply_clamp(0.875, 0.005, &rule), 1.0);
        assert_eq!(apply_clamp(0.1251, 0.005, &rule), 0.1251);
        // Variance gate is strict <.
        assert_eq!(apply_clamp(0.05, 0.01, &rule), 0.05);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_margin_bounded(
            mean in 0.0f64..=1.0,
            variance in 0.0f64..0.3,
            threshold in 0.0f64..0.3,
        ) {
            let rule = ClampRule::new(threshold);
            let once = apply_clamp(mean, variance, &rule);
            let twice = apply_clamp(once, variance, &rule);
            prop_assert_eq!(once, twice);
            prop_assert!((once - mean).abs() <= CLAMP_MARGIN + 1e-12);
        }
    }

    /// Dev set where boundary predictions deserve clamping: tiny variance and
    /// exact 0/1 targets.
    fn clampable_dev() -> (Vec<(f64, f64)>, Vec<f64>) {
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for k in 0..5 {
            preds.push((0.03 + 0.01 * k as f64, 0.001));
            targets.push(0.0);
        }
        for k in 0..5 {
            preds.push((0.93 + 0.01 * k as f64, 0.001));
            targets.push(1.0);
        }
        for k in 0..10 {
            let m = 0.3 + 0.04 * k as f64;
            preds.push((m, 0.01));
            targets.push(m);
        }
        (preds, targets)
    }

    #[test]
    fn fit_clamps_confident_boundary_predictions() {
        let (preds, targets) = clampable_dev();
        let fit = fit_clamp_threshold(&preds, &targets).unwrap();
        // All boundary predictions (variance 0.001) clamp; the strict gate
        // needs a threshold above them, and 0.01 ties with the top candidate,
        // so the smaller wins.
        assert_eq!(fit.rule.variance_threshold, 0.01);
        assert!(fit.objective > fit.baseline);
        let rule = fit.rule;
        for &(m, v) in &preds[..10] {
            let c = apply_clamp(m, v, &rule);
            assert!(c == 0.0 || c == 1.0);
        }

        // Fine-sweep oracle: no threshold beats the grid choice.
        for k in 0..=1000 {
            let t = 0.05 * k as f64 / 1000.0;
            let rule = ClampRule::new(t);
            let scores: Vec<f64> = preds.iter().map(|&(m, v)| apply_clamp(m, v, &rule)).collect();
            if let Ok(obj) = objective(&scores, &targets) {
                assert!(obj <= fit.objective + 1e-12, "threshold {t} beats fit");
            }
        }
    }

    #[test]
    fn fit_ties_break_to_smallest_threshold() {
        // Nothing within the margin: every threshold scores identically.
        let preds = vec![(0.3, 0.01), (0.5, 0.02), (0.7, 0.03), (0.4, 0.04)];
        let targets = vec![0.3, 0.5, 0.7, 0.4];
        let fit = fit_clamp_threshold(&preds, &targets).unwrap();
        assert_eq!(fit.rule.variance_threshold, 0.0);
        assert_relative_eq!(fit.objective, fit.baseline);
    }

    #[test]
    fn fit_keeps_zero_when_clamping_hurts() {
        // Near-boundary predictions with mid-scale targets: clamping them
        // only increases MAE and scrambles ranks.
        let preds = vec![(0.05, 0.001), (0.9, 0.001), (0.4, 0.01), (0.5, 0.01), (0.6, 0.01)];
        let targets = vec![0.45, 0.5, 0.4, 0.48, 0.55];
        let fit = fit_clamp_threshold(&preds, &targets).unwrap();
        assert_eq!(fit.rule.variance_threshold, 0.0);
    }

    #[test]
    fn fit_rejects_small_or_misaligned_input() {
        let preds = vec![(0.5, 0.01), (0.6, 0.01)];
        assert_eq!(
            fit_clamp_threshold(&preds, &[0.5, 0.6]),
            Err(PostprocessError::TooFewPoints(2))
        );
        assert!(matches!(
            fit_clamp_threshold(&preds, &[0.5]),
            Err(PostprocessError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fit_skips_degenerate_candidates() {
        // Clamping everything would collapse scores to the constant 1.0;
        // that candidate must be skipped, not returned.
        let preds = vec![(0.9, 0.001), (0.92, 0.001), (0.95, 0.001), (0.99, 0.001)];
        let targets = vec![0.8, 0.85, 0.9, 1.0];
        let fit = fit_clamp_threshold(&preds, &targets).unwrap();
        assert_eq!(fit.rule.variance_threshold, 0.0);
    }

    proptest! {
        #[test]
        fn fitted_objective_never_below_baseline(
            rows in proptest::collection::vec(
                (0.0f64..=1.0, 1e-4f64..0.05, 0.0f64..=1.0),
                5..20
            )
        ) {
            let preds: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
            let targets: Vec<f64> = rows.iter().map(|r| r.2).collect();
            if let Ok(fit) = fit_clamp_threshold(&preds, &targets) {
                prop_assert!(fit.objective >= fit.baseline - 1e-12);
            }
        }
    }
}
