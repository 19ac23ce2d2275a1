//! Multi-judge score aggregation: simple averaging, per-judge affine
//! calibration fit on dev, nonnegative least-squares weights fit on train,
//! and weighted fusion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FusionError {
    #[error("fusion needs at least 2 judges, got {0}")]
    TooFewJudges(usize),
    #[error("judge `{judge}` overlaps only {n} target instances, need at least 2")]
    TooFewOverlap { judge: String, n: usize },
    #[error("no instance is scored by every judge and carried in the targets")]
    NoCompleteRows,
    #[error("model lists {judges} judges but {field} has {got} entries")]
    ModelShapeMismatch { judges: usize, field: &'static str, got: usize },
}

/// One judge's scores on the [0,1] scale (raw 1–5 judge ratings pass through
/// the corpus normalization first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores<T> {
    pub judge_id: String,
    pub scores: BTreeMap<String, T>,
}

/// Affine score calibration; applying it clips to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap<T> {
    pub slope: T,
    pub intercept: T,
}

impl<T: Scalar> AffineMap<T> {
    pub fn identity() -> Self {
        Self { slope: T::one(), intercept: T::zero() }
    }

    pub fn apply(&self, score: T) -> T {
        (self.slope * score + self.intercept).max(T::zero()).min(T::one())
    }
}

/// Calibrations plus convex weights over a fixed judge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel<T> {
    pub judge_ids: Vec<String>,
    pub calibrations: Vec<AffineMap<T>>,
    pub weights: Vec<T>,
}

impl<T: Scalar> FusionModel<T> {
    fn check_shape(&self) -> Result<(), FusionError> {
        let judges = self.judge_ids.len();
        for (field, got) in [("calibrations", self.calibrations.len()), ("weights", self.weights.len())]
        {
            if got != judges {
                return Err(FusionError::ModelShapeMismatch { judges, field, got });
            }
        }
        Ok(())
    }
}

/// Aggregated scores keyed by instance; `missing` lists requested ids no
/// judge covered. `variances` carries the unbiased sample variance across
/// the contributing judges' scores (absent with fewer than 2 contributors).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores<T> {
    pub scores: BTreeMap<String, T>,
    pub variances: BTreeMap<String, Option<T>>,
    pub missing: Vec<String>,
}

/// Unweighted mean over the judges that scored each instance.
pub fn average_judges<T: Scalar>(judges: &[JudgeScores<T>], ids: &[String]) -> FusedScores<T> {
    let mut out = FusedScores {
        scores: BTreeMap::new(),
        variances: BTreeMap::new(),
        missing: Vec::new(),
    };
    for id in ids {
        let present: Vec<T> =
            judges.iter().filter_map(|j| j.scores.get(id)).copied().collect();
        if present.is_empty() {
            out.missing.push(id.clone());
            continue;
        }
        let n = T::from_count(present.len());
        let mean = present.iter().copied().sum::<T>() / n;
        let variance = (present.len() >= 2).then(|| {
            present.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>()
                / T::from_count(present.len() - 1)
        });
        out.scores.insert(id.clone(), mean);
        out.variances.insert(id.clone(), variance);
    }
    out
}

/// An affine fit plus a degeneracy warning when one was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit<T> {
    pub map: AffineMap<T>,
    pub warning: Option<String>,
}

/// Least-squares affine map from judge score to target mean over the dev
/// instances both sides cover. Constant judge scores yield slope 0 and
/// intercept = target mean, with a warning.
pub fn calibrate_judge<T: Scalar>(
    judge: &JudgeScores<T>,
    dev_targets: &BTreeMap<String, T>,
) -> Result<CalibrationFit<T>, FusionError> {
    let pairs: Vec<(T, T)> = judge
        .scores
        .iter()
        .filter_map(|(id, &s)| dev_targets.get(id).map(|&t| (s, t)))
        .collect();
    if pairs.len() < 2 {
        return Err(FusionError::TooFewOverlap { judge: judge.judge_id.clone(), n: pairs.len() });
    }
    let n = T::from_count(pairs.len());
    let mean_s = pairs.iter().map(|p| p.0).sum::<T>() / n;
    let mean_t = pairs.iter().map(|p| p.1).sum::<T>() / n;
    let mut cov = T::zero();
    let mut var = T::zero();
    for &(s, t) in &pairs {
        cov += (s - mean_s) * (t - mean_t);
        var += (s - mean_s) * (s - mean_s);
    }
    if var == T::zero() {
        return Ok(CalibrationFit {
            map: AffineMap { slope: T::zero(), intercept: mean_t },
            warning: Some(format!(
                "judge `{}` has constant dev scores; calibrating to the target mean",
                judge.judge_id
            )),
        });
    }
    let slope = cov / var;
    Ok(CalibrationFit {
        map: AffineMap { slope, intercept: mean_t - slope * mean_s },
        warning: None,
    })
}

/// Fitted convex weights plus a degeneracy warning when one was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFit<T> {
    pub weights: Vec<T>,
    pub warning: Option<String>,
}

/// Nonnegative least squares of calibrated judge scores onto train target
/// means, normalized to sum 1. Only instances scored by every judge enter the
/// fit. Solved by projected gradient from a uniform start (so interchangeable
/// judges keep equal weights) to gradient-mapping tolerance 1e-8.
pub fn fit_fusion_weights<T: Scalar>(
    judges: &[JudgeScores<T>],
    train_targets: &BTreeMap<String, T>,
    calibrations: &[AffineMap<T>],
) -> Result<WeightsFit<T>, FusionError> {
    let k = judges.len();
    if k < 2 {
        return Err(FusionError::TooFewJudges(k));
    }
    if calibrations.len() != k {
        return Err(FusionError::ModelShapeMismatch {
            judges: k,
            field: "calibrations",
            got: calibrations.len(),
        });
    }

    // Design matrix rows: complete cases only, in sorted-instance order.
    let mut rows: Vec<(Vec<T>, T)> = Vec::new();
    for (id, &target) in train_targets {
        let scores: Vec<T> = judges
            .iter()
            .zip(calibrations)
            .filter_map(|(j, c)| j.scores.get(id).map(|&s| c.apply(s)))
            .collect();
        if scores.len() == k {
            rows.push((scores, target));
        }
    }
    if rows.is_empty() {
        return Err(FusionError::NoCompleteRows);
    }

    // Normal-equation matrices: AᵀA and Aᵀt.
    let mut ata = vec![vec![T::zero(); k]; k];
    let mut att = vec![T::zero(); k];
    for (row, target) in &rows {
        for i in 0..k {
            att[i] += row[i] * *target;
            for j in 0..k {
                ata[i][j] += row[i] * row[j];
            }
        }
    }

    // Step size from the ∞-norm bound on AᵀA's spectrum.
    let lipschitz = ata
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<T>())
        .fold(T::zero(), T::max);
    let step = if lipschitz > T::zero() { lipschitz.recip() } else { T::one() };

    let mut w = vec![T::one() / T::from_count(k); k];
    let tol = T::c(1e-8);
    for _ in 0..200_000 {
        let mut shift = T::zero();
        let mut next = w.clone();
        for i in 0..k {
            let grad =
                (0..k).map(|j| ata[i][j] * w[j]).sum::<T>() - att[i];
            next[i] = (w[i] - step * grad).max(T::zero());
            shift = shift.max((next[i] - w[i]).abs());
        }
        w = next;
        if shift <= tol * step {
            break;
        }
    }

    // Projection approaches inactive zeros only geometrically. Polish by
    // solving the exact least squares on the surviving support; keep it when
    // it is feasible and no worse (singular support matrices — duplicate
    // judges — fall back to the symmetric projected solution).
    let objective = |w: &[T]| -> T {
        let mut f = T::zero();
        for i in 0..k {
            f += w[i] * (0..k).map(|j| ata[i][j] * w[j]).sum::<T>();
            f -= T::c(2.0) * att[i] * w[i];
        }
        f
    };
    let top = w.iter().copied().fold(T::zero(), T::max);
    let support: Vec<usize> = (0..k).filter(|&i| w[i] > top * T::c(1e-6)).collect();
    if let Some(solution) = solve_on_support(&ata, &att, &support) {
        if solution.iter().all(|&v| v >= T::zero()) {
            let mut candidate = vec![T::zero(); k];
            for (pos, &i) in support.iter().enumerate() {
                candidate[i] = solution[pos];
            }
            if objective(&candidate) <= objective(&w) + tol {
                w = candidate;
            }
        }
    }

    let total: T = w.iter().copied().sum();
    if total <= T::zero() {
        return Ok(WeightsFit {
            weights: vec![T::one() / T::from_count(k); k],
            warning: Some("nonnegative least squares drove every weight to zero; using uniform weights".into()),
        });
    }
    Ok(WeightsFit { weights: w.into_iter().map(|v| v / total).collect(), warning: None })
}

/// Gaussian elimination with partial pivoting on the normal equations
/// restricted to `support`; `None` when the submatrix is singular.
fn solve_on_support<T: Scalar>(
    ata: &[Vec<T>],
    att: &[T],
    support: &[usize],
) -> Option<Vec<T>> {
    let m = support.len();
    if m == 0 {
        return None;
    }
    let mut a: Vec<Vec<T>> =
        support.iter().map(|&i| support.iter().map(|&j| ata[i][j]).collect()).collect();
    let mut b: Vec<T> = support.iter().map(|&i| att[i]).collect();
    let scale = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(T::zero(), T::max);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() <= scale * T::c(1e-12) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..m {
            let f = a[row][col] / a[col][col];
            for c2 in col..m {
                let v = a[col][c2];
                a[row][c2] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); m];
    for row in (0..m).rev() {
        let tail: T = ((row + 1)..m).map(|c2| a[row][c2] * x[c2]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Weighted sum of calibrated judge scores, weights renormalized over the
/// judges present on each instance, clipped to [0,1].
///
/// When the present judges carry identical weights the fused value is their
/// plain mean, computed exactly as `average_judges` computes it, so uniform
/// weights with identity calibrations reproduce averaging bit-for-bit.
pub fn fuse<T: Scalar>(
    judges: &[JudgeScores<T>],
    model: &FusionModel<T>,
    ids: &[String],
) -> Result<FusedScores<T>, FusionError> {
    model.check_shape()?;
    let by_id: BTreeMap<&str, &JudgeScores<T>> =
        judges.iter().map(|j| (j.judge_id.as_str(), j)).collect();

    let mut out = FusedScores {
        scores: BTreeMap::new(),
        variances: BTreeMap::new(),
        missing: Vec::new(),
    };
    for id in ids {
        let mut calibrated = Vec::new();
        let mut weights = Vec::new();
        for ((judge_id, calibration), &weight) in
            model.judge_ids.iter().zip(&model.calibrations).zip(&model.weights)
        {
            let Some(judge) = by_id.get(judge_id.as_str()) else { continue };
            if let Some(&score) = judge.scores.get(id) {
                calibrated.push(calibration.apply(score));
                weights.push(weight);
            }
        }
        if calibrated.is_empty() {
            out.missing.push(id.clone());
            continue;
        }

        let n = T::from_count(calibrated.len());
        let equal_weights = weights.iter().all(|&w| w == weights[0]);
        let fused = if equal_weights {
            calibrated.iter().copied().sum::<T>() / n
        } else {
            let total: T = weights.iter().copied().sum();
            let weighted: T =
                calibrated.iter().zip(&weights).map(|(&c, &w)| w * c).sum();
            weighted / total
        };
        let mean = calibrated.iter().copied().sum::<T>() / n;
        let variance = (calibrated.len() >= 2).then(|| {
            calibrated.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>()
                / T::from_count(calibrated.len() - 1)
        });
        out.scores.insert(id.clone(), fused.max(T::zero()).min(T::one()));
        out.variances.insert(id.clone(), variance);
    }
    Ok(out)
}
