//! Metric kernels: clean error, baseline-normalized corruption error
//! (CE / mCE), relative mCE, flip rates (FP / mFP), and the quality scores
//! consumed by pricing. All kernels are pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::ToyModel;
use super::suites::{Sample, Sequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty sample set")]
    EmptySet,
    #[error("corruption kinds of candidate and baseline differ")]
    KindMismatch,
    #[error("baseline has zero error for corruption `{0}`; normalization undefined")]
    ZeroBaselineError(String),
    #[error("baseline has zero flip rate for perturbation `{0}`; normalization undefined")]
    ZeroBaselineFlip(String),
    #[error("relative mCE denominator is zero for corruption `{0}`")]
    DegenerateRelativeDenominator(String),
}

/// Raw classification error per (corruption kind, severity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub kinds: Vec<String>,
    /// `errors[kind][severity - 1]`, each a fraction in [0, 1].
    pub errors: Vec<Vec<f64>>,
}

impl ErrorTable {
    fn severity_sum(&self, kind: usize) -> f64 {
        self.errors[kind].iter().sum()
    }
}

/// Misclassification fraction on a labeled set.
pub fn clean_error(model: &ToyModel, samples: &[Sample]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let wrong = samples
        .iter()
        .filter(|s| model.predict(&s.features) != s.label)
        .count();
    Ok(wrong as f64 / samples.len() as f64)
}

/// Per-cell errors over corruption cells, `cells[kind][severity - 1]`.
pub fn corruption_errors(
    model: &ToyModel,
    kinds: &[String],
    cells: &[Vec<Vec<Sample>>],
) -> Result<ErrorTable, MetricError> {
    let mut errors = Vec::with_capacity(cells.len());
    for by_severity in cells {
        let mut row = Vec::with_capacity(by_severity.len());
        for cell in by_severity {
            row.push(clean_error(model, cell)?);
        }
        errors.push(row);
    }
    Ok(ErrorTable {
        kinds: kinds.to_vec(),
        errors,
    })
}

/// Baseline-normalized corruption errors:
/// `CE_c = sum_s E_{s,c} / sum_s E^base_{s,c}`, `mCE = mean_c CE_c`.
pub fn mce(cand: &ErrorTable, base: &ErrorTable) -> Result<(Vec<f64>, f64), MetricError> {
    if cand.kinds != base.kinds {
        return Err(MetricError::KindMismatch);
    }
    let mut per_kind = Vec::with_capacity(cand.kinds.len());
    for (idx, kind) in cand.kinds.iter().enumerate() {
        let denom = base.severity_sum(idx);
        if denom == 0.0 {
            return Err(MetricError::ZeroBaselineError(kind.clone()));
        }
        per_kind.push(cand.severity_sum(idx) / denom);
    }
    let mean = per_kind.iter().sum::<f64>() / per_kind.len() as f64;
    Ok((per_kind, mean))
}

/// Relative mCE: per corruption,
/// `(sum_s E_{s,c} - ce) / (sum_s E^base_{s,c} - ce^base)`, then the mean.
/// Measures degradation beyond each model's own clean error.
pub fn relative_mce(
    cand: &ErrorTable,
    cand_ce: f64,
    base: &ErrorTable,
    base_ce: f64,
) -> Result<f64, MetricError> {
    if cand.kinds != base.kinds {
        return Err(MetricError::KindMismatch);
    }
    let mut acc = 0.0;
    for (idx, kind) in cand.kinds.iter().enumerate() {
        let denom = base.severity_sum(idx) - base_ce;
        if denom == 0.0 {
            return Err(MetricError::DegenerateRelativeDenominator(kind.clone()));
        }
        acc += (cand.severity_sum(idx) - cand_ce) / denom;
    }
    Ok(acc / cand.kinds.len() as f64)
}

/// Flip rate of one perturbation kind: fraction of consecutive-frame
/// prediction changes, `flips / (sequences * (frames - 1))`.
pub fn flip_rate(model: &ToyModel, sequences: &[Sequence]) -> Result<f64, MetricError> {
    if sequences.is_empty() || sequences.iter().any(|s| s.frames.len() < 2) {
        return Err(MetricError::EmptySet);
    }
    let mut flips = 0usize;
    let mut pairs = 0usize;
    for seq in sequences {
        let mut prev = model.predict(&seq.frames[0]);
        for frame in &seq.frames[1..] {
            let next = model.predict(frame);
            if next != prev {
                flips += 1;
            }
            prev = next;
            pairs += 1;
        }
    }
    Ok(flips as f64 / pairs as f64)
}

pub fn flip_rates(
    model: &ToyModel,
    sequences: &[Vec<Sequence>],
) -> Result<Vec<f64>, MetricError> {
    sequences.iter().map(|s| flip_rate(model, s)).collect()
}

/// Baseline-normalized mean flip rate: `mean_p (FP_p / FP^base_p)`.
pub fn mfp(cand: &[f64], base: &[f64], kinds: &[String]) -> Result<f64, MetricError> {
    if cand.len() != base.len() || cand.len() != kinds.len() {
        return Err(MetricError::KindMismatch);
    }
    let mut acc = 0.0;
    for ((c, b), kind) in cand.iter().zip(base).zip(kinds) {
        if *b == 0.0 {
            return Err(MetricError::ZeroBaselineFlip(kind.clone()));
        }
        acc += c / b;
    }
    Ok(acc / cand.len() as f64)
}

/// Floor of the quality scores; keeps q in (0, 1] even for models at or
/// below the baseline.
pub const QUALITY_FLOOR: f64 = 0.01;

/// Map a robustness metric (lower is better) to a quality score in (0, 1]:
/// `q = clamp(1 - metric, 0.01, 1.0)`.
pub fn quality_score(metric: f64) -> f64 {
    (1.0 - metric).clamp(QUALITY_FLOOR, 1.0)
}
