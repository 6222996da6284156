//! Quadratic baseline-to-condition speed model
//!
//! `speed = w0 + w1 * s + w2 * delta + w3 * s^2`, where `s` is the zone-level
//! average baseline speed and `delta` is the external-sign indicator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{median, Condition, SpeedRecord};
use crate::error::{Error, Result};

/// Default number of cross-validation folds.
pub const DEFAULT_FOLDS: usize = 10;

/// Feature vector `(1, s, delta, s^2)`.
pub fn design_row(baseline_speed: f64, delta_es: u8) -> [f64; 4] {
    [1.0, baseline_speed, f64::from(delta_es), baseline_speed * baseline_speed]
}

/// The four model weights `(w0, w1, w2, w3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficients(pub [f64; 4]);

impl Coefficients {
    pub const IDENTITY: Coefficients = Coefficients([0.0, 1.0, 0.0, 0.0]);

    pub fn predict(&self, baseline_speed: f64, delta_es: u8) -> f64 {
        design_row(baseline_speed, delta_es)
            .iter()
            .zip(&self.0)
            .map(|(x, w)| x * w)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub baseline_speed: f64,
    pub delta_es: u8,
    pub target_speed: f64,
}

/// Pooled fit plus the per-fold fits from cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub pooled: Coefficients,
    pub folds: Vec<Coefficients>,
}

/// Pooled prediction with the spread of the fold predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub pooled: f64,
    pub fold_mean: Option<f64>,
    /// Standard error of the mean across folds.
    pub fold_sem: Option<f64>,
}

impl ModelWeights {
    pub fn predict(&self, baseline_speed: f64, delta_es: u8) -> Prediction {
        let pooled = self.pooled.predict(baseline_speed, delta_es);
        if self.folds.is_empty() {
            return Prediction {
                pooled,
                fold_mean: None,
                fold_sem: None,
            };
        }
        let preds: Vec<f64> = self.folds.iter().map(|w| w.predict(baseline_speed, delta_es)).collect();
        let k = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / k;
        let sem = if preds.len() > 1 {
            let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        Prediction {
            pooled,
            fold_mean: Some(mean),
            fold_sem: Some(sem),
        }
    }
}

/// On-disk form of fitted weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub pooled: [f64; 4],
    pub folds: Vec<[f64; 4]>,
    pub k: usize,
    pub seed: u64,
}

impl WeightsFile {
    pub fn new(weights: &ModelWeights, seed: u64) -> Self {
        WeightsFile {
            pooled: weights.pooled.0,
            folds: weights.folds.iter().map(|c| c.0).collect(),
            k: weights.folds.len(),
            seed,
        }
    }

    pub fn into_weights(self) -> Result<ModelWeights> {
        let all = std::iter::once(&self.pooled).chain(&self.folds);
        if all.flatten().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model weights must be finite"));
        }
        if self.folds.len() != self.k {
            return Err(Error::invalid(format!("expected {} fold weights, found {}", self.k, self.folds.len())));
        }
        Ok(ModelWeights {
            pooled: Coefficients(self.pooled),
            folds: self.folds.into_iter().map(Coefficients).collect(),
        })
    }
}

// Relative singular-value cutoff below which the design is rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares through an SVD of the column-scaled design.
pub fn fit_least_squares(rows: &[TrainingRow]) -> Result<Coefficients> {
    if rows.len() < 4 {
        return Err(Error::invalid(format!(
            "least squares needs at least 4 rows, got {}",
            rows.len()
        )));
    }
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, 4);
    let mut y = DVector::<f64>::zeros(n);
    for (i, r) in rows.iter().enumerate() {
        if !(r.baseline_speed.is_finite() && r.target_speed.is_finite()) || r.delta_es > 1 {
            return Err(Error::invalid(format!("training row {i} is not valid")));
        }
        for (j, v) in design_row(r.baseline_speed, r.delta_es).into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[i] = r.target_speed;
    }
    let norms: Vec<f64> = (0..4).map(|j| x.column(j).norm()).collect();
    if norms.contains(&0.0) {
        return Err(Error::numerical("rank-deficient design: a feature column is identically zero"));
    }
    for (j, &c) in norms.iter().enumerate() {
        x.column_mut(j).scale_mut(1.0 / c);
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOLERANCE * smax) {
        return Err(Error::numerical(format!(
            "rank-deficient design (singular value ratio {:.3e})",
            smin / smax
        )));
    }
    let scaled = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::numerical(format!("least squares solve failed: {e}")))?;
    let mut w = [0.0; 4];
    for j in 0..4 {
        w[j] = scaled[j] / norms[j];
    }
    Ok(Coefficients(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub row: usize,
    pub fold: usize,
    pub delta_es: u8,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub fold_weights: Vec<Coefficients>,
    /// Fold index of every row.
    pub assignment: Vec<usize>,
    /// One held-out prediction per row, in row order.
    pub predictions: Vec<HeldOutPrediction>,
}

impl CrossValidation {
    pub fn median_abs_error(&self) -> Result<f64> {
        median_abs_error(self.predictions.iter().map(|p| (p.predicted, p.actual)))
    }
}

/// k-fold cross-validation over a seeded uniform shuffle. Fold sizes differ by
/// at most one.
pub fn kfold_cv<R: Rng + ?Sized>(rows: &[TrainingRow], k: usize, rng: &mut R) -> Result<CrossValidation> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs k >= 2"));
    }
    if rows.len() < k {
        return Err(Error::invalid(format!(
            "cross-validation needs at least k = {k} rows, got {}",
            rows.len()
        )));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut assignment = vec![0; rows.len()];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }

    let mut fold_weights = Vec::with_capacity(k);
    let mut predictions = vec![None; rows.len()];
    for fold in 0..k {
        let train: Vec<TrainingRow> = rows
            .iter()
            .zip(&assignment)
            .filter(|(_, &f)| f != fold)
            .map(|(r, _)| *r)
            .collect();
        let w = fit_least_squares(&train).map_err(|e| match e {
            Error::Numerical(msg) => Error::numerical(format!("fold {fold}: {msg}")),
            other => other,
        })?;
        for (i, r) in rows.iter().enumerate().filter(|(i, _)| assignment[*i] == fold) {
            predictions[i] = Some(HeldOutPrediction {
                row: i,
                fold,
                delta_es: r.delta_es,
                predicted: w.predict(r.baseline_speed, r.delta_es),
                actual: r.target_speed,
            });
        }
        fold_weights.push(w);
    }
    Ok(CrossValidation {
        fold_weights,
        assignment,
        predictions: predictions.into_iter().map(|p| p.expect("every row is held out once")).collect(),
    })
}

/// Median of `|predicted - actual|`.
pub fn median_abs_error(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<f64> {
    let residuals: Vec<f64> = pairs.into_iter().map(|(p, a)| (p - a).abs()).collect();
    median(&residuals).ok_or_else(|| Error::invalid("median error of an empty set"))
}

/// Training rows from simulator records: each IVS-condition observation is
/// paired with its zone's baseline speed, averaged first within and then
/// across participants.
pub fn training_rows(records: &[SpeedRecord]) -> Result<Vec<TrainingRow>> {
    let mut per_participant: BTreeMap<u32, BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition() == Condition::Baseline) {
        let acc = per_participant
            .entry(r.zone_mph)
            .or_default()
            .entry(r.participant_id.as_str())
            .or_insert((0.0, 0));
        acc.0 += r.speed_mph;
        acc.1 += 1;
    }
    let zone_baseline: BTreeMap<u32, f64> = per_participant
        .into_iter()
        .map(|(zone, parts)| {
            let means: Vec<f64> = parts.values().map(|(s, n)| s / *n as f64).collect();
            (zone, means.iter().sum::<f64>() / means.len() as f64)
        })
        .collect();

    let mut rows = Vec::new();
    for r in records {
        let Some(delta) = r.condition().delta_es() else { continue };
        let baseline = *zone_baseline.get(&r.zone_mph).ok_or_else(|| {
            Error::invalid(format!("zone {} has IVS observations but no baseline", r.zone_mph))
        })?;
        rows.push(TrainingRow {
            baseline_speed: baseline,
            delta_es: delta,
            target_speed: r.speed_mph,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("no IVS-condition observations to train on"));
    }
    Ok(rows)
}
