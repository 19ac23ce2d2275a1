//! Ranking and error metrics (Spearman ρ, Kendall τ-b, MAE) and
//! Krippendorff's alpha for inter-annotator agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("aligned lists have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined for constant input")]
    ConstantInput,
    #[error("empty input")]
    Empty,
    #[error("rater `{rater}` already rated instance `{instance}`")]
    DuplicateCell { rater: String, instance: String },
    #[error("rating must be finite")]
    NotFinite,
    #[error("alpha needs at least 2 instances with at least 2 ratings each")]
    InsufficientMatrix,
    #[error("alpha undefined: zero expected disagreement (all ratings share one value)")]
    ZeroExpectedDisagreement,
}

fn check_pair_lists<T>(xs: &[T], ys: &[T]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 3 {
        return Err(MetricsError::TooFewPairs(xs.len()));
    }
    Ok(())
}

fn is_constant<T: Scalar>(xs: &[T]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Average ranks (1-based); tied values share the mean of their rank range.
fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 average to (i+j)/2 + 1.
        let avg = T::c((i + j) as f64 / 2.0 + 1.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    let n = T::from_count(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's ρ: Pearson correlation of average-ranked values.
pub fn spearman_rho<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, MetricsError> {
    check_pair_lists(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Err(MetricsError::ConstantInput);
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Kendall's τ-b: (concordant − discordant) / √((P−T_x)(P−T_y)), with P the
/// number of pairs and T the per-list tie counts. The tie correction matters
/// here because human mean ratings are heavily tied while predictions are
/// continuous.
pub fn kendall_tau<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, MetricsError> {
    check_pair_lists(xs, ys)?;
    let n = xs.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("finite values");
            let dy = ys[i].partial_cmp(&ys[j]).expect("finite values");
            use std::cmp::Ordering::Equal;
            if dx == Equal {
                ties_x += 1;
            }
            if dy == Equal {
                ties_y += 1;
            }
            if dx != Equal && dy != Equal {
                if dx == dy {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    if pairs == ties_x || pairs == ties_y {
        return Err(MetricsError::ConstantInput);
    }
    let denom = (T::c((pairs - ties_x) as f64) * T::c((pairs - ties_y) as f64)).sqrt();
    Ok(T::c((concordant - discordant) as f64) / denom)
}

/// Mean absolute error over aligned lists.
pub fn mae<T: Scalar>(preds: &[T], targets: &[T]) -> Result<T, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch { left: preds.len(), right: targets.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum: T = preds.iter().zip(targets).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(sum / T::from_count(preds.len()))
}

/// The four evaluation metrics over one aligned prediction/target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub spearman: T,
    pub kendall: T,
    pub mae_mu: T,
    /// Absent when no instance has ≥ 2 ratings (variance target undefined).
    pub mae_var: Option<T>,
    pub n_pairs: usize,
    pub n_var_pairs: usize,
}

/// Computes ρ, τ, MAE_μ over means and MAE_σ² over the subset of instances
/// whose variance target exists (instances with a single rating have none).
pub fn compute_report<T: Scalar>(
    pred_mu: &[T],
    target_mu: &[T],
    pred_var: &[T],
    target_var: &[Option<T>],
) -> Result<MetricReport<T>, MetricsError> {
    for other in [target_mu.len(), pred_var.len(), target_var.len()] {
        if other != pred_mu.len() {
            return Err(MetricsError::LengthMismatch { left: pred_mu.len(), right: other });
        }
    }
    let spearman = spearman_rho(pred_mu, target_mu)?;
    let kendall = kendall_tau(pred_mu, target_mu)?;
    let mae_mu = mae(pred_mu, target_mu)?;
    let mut pv = Vec::new();
    let mut tv = Vec::new();
    for (&p, t) in pred_var.iter().zip(target_var) {
        if let Some(t) = t {
            pv.push(p);
            tv.push(*t);
        }
    }
    let n_var_pairs = pv.len();
    let mae_var = if pv.is_empty() { None } else { Some(mae(&pv, &tv)?) };
    Ok(MetricReport { spearman, kendall, mae_mu, mae_var, n_pairs: pred_mu.len(), n_var_pairs })
}

/// Difference function for Krippendorff's alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaLevel {
    Interval,
    Ordinal,
}

/// Raters × instances table of ratings; cells may be missing. The pipeline
/// fills it with raw 1–5 ratings.
#[derive(Debug, Clone, Default)]
pub struct ReliabilityMatrix {
    /// rater → instance → rating.
    cells: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ReliabilityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        rater: impl Into<String>,
        instance: impl Into<String>,
        rating: f64,
    ) -> Result<(), MetricsError> {
        if !rating.is_finite() {
            return Err(MetricsError::NotFinite);
        }
        let (rater, instance) = (rater.into(), instance.into());
        let row = self.cells.entry(rater.clone()).or_default();
        if row.insert(instance.clone(), rating).is_some() {
            return Err(MetricsError::DuplicateCell { rater, instance });
        }
        Ok(())
    }

    pub fn n_raters(&self) -> usize {
        self.cells.len()
    }

    /// Ratings grouped per instance (the alpha "units"), instance order sorted.
    fn units(&self) -> Vec<Vec<f64>> {
        let mut by_instance: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for row in self.cells.values() {
            for (instance, &rating) in row {
                by_instance.entry(instance).or_default().push(rating);
            }
        }
        by_instance.into_values().collect()
    }
}

/// Krippendorff's alpha, 1 − D_observed/D_expected over the coincidence
/// matrix. Units with a single rating are ignored, per standard coincidence
/// counting. Defined only when ≥ 2 units carry ≥ 2 ratings and more than one
/// distinct value appears.
pub fn krippendorff_alpha(
    matrix: &ReliabilityMatrix,
    level: AlphaLevel,
) -> Result<f64, MetricsError> {
    let units: Vec<Vec<f64>> = matrix.units().into_iter().filter(|u| u.len() >= 2).collect();
    if units.len() < 2 {
        return Err(MetricsError::InsufficientMatrix);
    }

    // Distinct values, sorted; cell values are validated finite at insert.
    let mut values: Vec<f64> = units.iter().flatten().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite ratings"));
    values.dedup();
    let index = |v: f64| values.binary_search_by(|p| p.partial_cmp(&v).unwrap()).unwrap();
    let k = values.len();

    // Coincidence counts: each ordered pair of ratings within a unit adds
    // 1/(m_u − 1).
    let mut coincidence = vec![vec![0.0f64; k]; k];
    for unit in &units {
        let w = 1.0 / (unit.len() - 1) as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[index(a)][index(b)] += w;
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let delta = |c: usize, d: usize| -> f64 {
        let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
        match level {
            AlphaLevel::Interval => (values[c] - values[d]).powi(2),
            AlphaLevel::Ordinal => {
                let between: f64 = (lo..=hi).map(|g| marginals[g]).sum();
                (between - (marginals[lo] + marginals[hi]) / 2.0).powi(2)
            }
        }
    };

    let mut d_observed = 0.0;
    let mut d_expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            d_observed += coincidence[c][d] * delta(c, d);
            d_expected += marginals[c] * marginals[d] * delta(c, d);
        }
    }
    d_observed /= n;
    d_expected /= n * (n - 1.0);
    if d_expected == 0.0 {
        return Err(MetricsError::ZeroExpectedDisagreement);
    }
    Ok(1.0 - d_observed / d_expected)
}
