//! Inductive conformal prediction over a frozen embedding model.
//!
//! Calibration computes one nonconformity score per held-out triple and
//! sorts them; prediction looks up the score at rank `ceil(alpha *
//! (l + 1))` and turns it into a symmetric interval around the model's
//! point prediction, intersected with `[0, 1]`.
//!
//! Two measures are supported. The absolute residual `|M(q) - c|` gives
//! intervals of constant width. The entropy-normalized residual
//! `|M(q) - c| / H(M(q))` rescales by the binary entropy of the
//! prediction, so the resulting half-width `s_(k) * H(M(q))` grows on
//! queries the model is unsure about.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::dataset::WeightedTriple;
use crate::unkge::{fingerprint, Fingerprint, ModelParams};

const ARTIFACT_MAGIC: &[u8; 8] = b"UNKGCART";
const ARTIFACT_VERSION: u32 = 1;

/// Default clamp keeping the entropy denominator away from zero when a
/// rectified model saturates at 0 or 1.
pub const DEFAULT_ENTROPY_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("entropy clamp {0} must lie in (0, 0.5)")]
    InvalidClamp(f64),
    #[error("interval bounds [{lower}, {upper}] violate 0 <= lower <= upper <= 1")]
    BadInterval { lower: f64, upper: f64 },
    #[error("calibration scores must be finite and non-negative")]
    BadScores,
    #[error("artifact was calibrated with {expected:?}, requested {found:?}")]
    MeasureMismatch {
        expected: MeasureKind,
        found: MeasureKind,
    },
    #[error("artifact fingerprint does not match the model")]
    FingerprintMismatch,
    #[error("not a calibration artifact file (bad magic)")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown measure tag {0}")]
    BadMeasureTag(u8),
    #[error("artifact scores are not sorted ascending")]
    NotSorted,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    AbsoluteResidual,
    EntropyNormalized,
}

/// Nonconformity measure: the kind plus the entropy clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measure {
    pub kind: MeasureKind,
    pub entropy_clamp: f64,
}

impl Measure {
    pub fn absolute() -> Self {
        Measure {
            kind: MeasureKind::AbsoluteResidual,
            entropy_clamp: DEFAULT_ENTROPY_CLAMP,
        }
    }

    pub fn entropy_normalized() -> Self {
        Measure {
            kind: MeasureKind::EntropyNormalized,
            entropy_clamp: DEFAULT_ENTROPY_CLAMP,
        }
    }

    pub fn with_clamp(mut self, delta: f64) -> Result<Self, ConformalError> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(ConformalError::InvalidClamp(delta));
        }
        self.entropy_clamp = delta;
        Ok(self)
    }
}

/// Binary entropy (natural log) of `p`, with `p` clamped into
/// `[delta, 1 - delta]` first. Strictly positive, at most `ln 2`.
pub fn entropy(p: f64, delta: f64) -> f64 {
    let p = p.clamp(delta, 1.0 - delta);
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

/// Nonconformity score of `(q, c)` under the frozen model.
pub fn nonconformity(model: &ModelParams, triple: &WeightedTriple, measure: Measure) -> f64 {
    let (h, r, t) = triple.query();
    let prediction = model.predict(h, r, t);
    let residual = (prediction - triple.confidence()).abs();
    match measure.kind {
        MeasureKind::AbsoluteResidual => residual,
        MeasureKind::EntropyNormalized => residual / entropy(prediction, measure.entropy_clamp),
    }
}

/// Ascending-sorted calibration scores, tied to one model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationArtifact {
    scores: Vec<f64>,
    measure: Measure,
    model_fingerprint: Fingerprint,
}

impl CalibrationArtifact {
    /// Build from raw scores; sorts them and validates finiteness.
    pub fn from_scores(
        mut scores: Vec<f64>,
        measure: Measure,
        model_fingerprint: Fingerprint,
    ) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ConformalError::BadScores);
        }
        scores.sort_unstable_by(f64::total_cmp);
        Ok(CalibrationArtifact {
            scores,
            measure,
            model_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn model_fingerprint(&self) -> &Fingerprint {
        &self.model_fingerprint
    }

    /// Error unless the artifact was calibrated with exactly this model.
    pub fn verify_model(&self, model: &ModelParams) -> Result<(), ConformalError> {
        if fingerprint(model) == self.model_fingerprint {
            Ok(())
        } else {
            Err(ConformalError::FingerprintMismatch)
        }
    }
}

/// Score the calibration set under a frozen model and sort.
pub fn calibrate(
    model: &ModelParams,
    cal: &[WeightedTriple],
    measure: Measure,
) -> Result<CalibrationArtifact, ConformalError> {
    if cal.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let scores = cal
        .iter()
        .map(|t| nonconformity(model, t, measure))
        .collect();
    CalibrationArtifact::from_scores(scores, measure, fingerprint(model))
}

/// The calibration rank `ceil(alpha * (l + 1))`.
///
/// Computed with a small tolerance so that products like `0.85 * 20`
/// land on the integer the real-number formula prescribes.
pub fn quantile_rank(alpha: f64, ell: usize) -> usize {
    assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
    (alpha * (ell + 1) as f64 - 1e-9).ceil().max(0.0) as usize
}

/// The score at rank `ceil(alpha * (l + 1))`.
///
/// Returns `+inf` when the rank exceeds the calibration size (interval
/// becomes `[0, 1]`) and `-inf` when the rank is zero, i.e. `alpha = 0`
/// (interval becomes empty).
pub fn quantile_threshold(artifact: &CalibrationArtifact, alpha: f64) -> f64 {
    let k = quantile_rank(alpha, artifact.len());
    if k == 0 {
        f64::NEG_INFINITY
    } else if k <= artifact.len() {
        artifact.scores[k - 1]
    } else {
        f64::INFINITY
    }
}

/// A closed sub-interval of `[0, 1]`, possibly empty.
///
/// The empty state exists because at `alpha = 0` the rank-count rule
/// accepts no candidate at all, which no `[lower, upper]` pair with
/// `lower <= upper` can represent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    bounds: Option<(f64, f64)>,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, ConformalError> {
        if !(lower.is_finite() && upper.is_finite()) || lower < 0.0 || upper > 1.0 || lower > upper
        {
            return Err(ConformalError::BadInterval { lower, upper });
        }
        Ok(PredictionInterval {
            bounds: Some((lower, upper)),
        })
    }

    pub fn empty() -> Self {
        PredictionInterval { bounds: None }
    }

    pub fn full() -> Self {
        PredictionInterval {
            bounds: Some((0.0, 1.0)),
        }
    }

    /// `[center - half_width, center + half_width]` intersected with
    /// `[0, 1]`. A negative-infinite half-width gives the empty interval;
    /// an infinite one gives `[0, 1]`.
    pub fn from_center(center: f64, half_width: f64) -> Self {
        if half_width == f64::NEG_INFINITY {
            return PredictionInterval::empty();
        }
        if half_width == f64::INFINITY {
            return PredictionInterval::full();
        }
        let lower = (center - half_width).max(0.0);
        let upper = (center + half_width).min(1.0);
        if lower > upper {
            PredictionInterval::empty()
        } else {
            PredictionInterval {
                bounds: Some((lower, upper)),
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_none()
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn lower(&self) -> Option<f64> {
        self.bounds.map(|(l, _)| l)
    }

    pub fn upper(&self) -> Option<f64> {
        self.bounds.map(|(_, u)| u)
    }

    /// Interval length; 0 for the empty interval.
    pub fn length(&self) -> f64 {
        self.bounds.map_or(0.0, |(l, u)| u - l)
    }

    /// Closed membership.
    pub fn contains(&self, c: f64) -> bool {
        self.bounds.map_or(false, |(l, u)| l <= c && c <= u)
    }

    /// Set inclusion `self` within `other`.
    pub fn is_subset_of(&self, other: &PredictionInterval) -> bool {
        match (self.bounds, other.bounds) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((l1, u1)), Some((l2, u2))) => l2 <= l1 && u1 <= u2,
        }
    }
}

/// Half-width of the interval for a given point prediction, before
/// clipping: the threshold itself for the absolute measure, or the
/// threshold scaled by the prediction's entropy.
pub fn half_width(artifact: &CalibrationArtifact, prediction: f64, alpha: f64) -> f64 {
    let threshold = quantile_threshold(artifact, alpha);
    match artifact.measure.kind {
        MeasureKind::AbsoluteResidual => threshold,
        MeasureKind::EntropyNormalized => {
            threshold * entropy(prediction, artifact.measure.entropy_clamp)
        }
    }
}

/// Prediction interval for query `(h, r, t)` at confidence `alpha`.
pub fn predict_interval(
    model: &ModelParams,
    artifact: &CalibrationArtifact,
    query: (u32, u32, u32),
    alpha: f64,
) -> PredictionInterval {
    let prediction = model.predict(query.0, query.1, query.2);
    PredictionInterval::from_center(prediction, half_width(artifact, prediction, alpha))
}

pub fn save_artifact(path: &Path, artifact: &CalibrationArtifact) -> Result<(), ConformalError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_artifact(&mut w, artifact)?;
    w.flush()?;
    Ok(())
}

pub fn write_artifact<W: Write>(
    mut w: W,
    artifact: &CalibrationArtifact,
) -> Result<(), ConformalError> {
    w.write_all(ARTIFACT_MAGIC)?;
    w.write_u32::<LittleEndian>(ARTIFACT_VERSION)?;
    w.write_u8(match artifact.measure.kind {
        MeasureKind::AbsoluteResidual => 0,
        MeasureKind::EntropyNormalized => 1,
    })?;
    w.write_f64::<LittleEndian>(artifact.measure.entropy_clamp)?;
    w.write_all(&artifact.model_fingerprint)?;
    w.write_u64::<LittleEndian>(artifact.len() as u64)?;
    for &s in &artifact.scores {
        w.write_f64::<LittleEndian>(s)?;
    }
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<CalibrationArtifact, ConformalError> {
    read_artifact(BufReader::new(File::open(path)?))
}

pub fn read_artifact<R: Read>(mut r: R) -> Result<CalibrationArtifact, ConformalError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ARTIFACT_MAGIC {
        return Err(ConformalError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != ARTIFACT_VERSION {
        return Err(ConformalError::UnsupportedVersion(version));
    }
    let kind = match r.read_u8()? {
        0 => MeasureKind::AbsoluteResidual,
        1 => MeasureKind::EntropyNormalized,
        tag => return Err(ConformalError::BadMeasureTag(tag)),
    };
    let entropy_clamp = r.read_f64::<LittleEndian>()?;
    if !(entropy_clamp > 0.0 && entropy_clamp < 0.5) {
        return Err(ConformalError::InvalidClamp(entropy_clamp));
    }
    let mut model_fingerprint = [0u8; 32];
    r.read_exact(&mut model_fingerprint)?;
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut scores = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        scores.push(r.read_f64::<LittleEndian>()?);
    }
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(ConformalError::BadScores);
    }
    if scores.windows(2).any(|w| w[0] > w[1]) {
        return Err(ConformalError::NotSorted);
    }
    Ok(CalibrationArtifact {
        scores,
        measure: Measure {
            kind,
            entropy_clamp,
        },
        model_fingerprint,
    })
}
