//! Coverage/sharpness metrics, conditionality binning, sweeps over the
//! confidence level and the calibration size, the coverage-gap shift
//! probe, and machine-readable report emission.

use thiserror::Error;

use crate::baselines::{fpi_interval, FpiStats, QrPair};
use crate::conformal::{
    half_width, predict_interval, CalibrationArtifact, ConformalError, Measure,
    PredictionInterval,
};
use crate::dataset::WeightedTriple;
use crate::seed::{seeded_rng, sub_seed};
use crate::unkge::ModelParams;

use rand::seq::SliceRandom;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric input is empty")]
    Empty,
    #[error("need at least 2 bins, got {0}")]
    BadBinCount(usize),
    #[error("alphas must be sorted ascending")]
    UnsortedAlphas,
    #[error("calibration subsample start {start} exceeds the set size {ell}")]
    BadSweepStart { start: usize, ell: usize },
    #[error(transparent)]
    Conformal(#[from] ConformalError),
}

/// Fraction of truths inside their interval (closed membership).
pub fn coverage(intervals: &[PredictionInterval], truths: &[f64]) -> Result<f64, EvalError> {
    if intervals.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            left: intervals.len(),
            right: truths.len(),
        });
    }
    if intervals.is_empty() {
        return Err(EvalError::Empty);
    }
    let covered = intervals
        .iter()
        .zip(truths)
        .filter(|(interval, &c)| interval.contains(c))
        .count();
    Ok(covered as f64 / intervals.len() as f64)
}

/// Mean interval length.
pub fn sharpness(intervals: &[PredictionInterval]) -> Result<f64, EvalError> {
    if intervals.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(intervals.iter().map(PredictionInterval::length).sum::<f64>() / intervals.len() as f64)
}

/// One evaluation outcome for a single predictor at a single level.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictor_id: String,
    pub alpha: f64,
    pub coverage: f64,
    pub sharpness: f64,
    pub n_test: usize,
    pub trial_seed: u64,
}

/// Per-bin conditionality statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub mean_length: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalityBins {
    pub bins: Vec<BinStat>,
    pub covered_only: bool,
}

/// Group covered test points into equal-width bins over the observed
/// error range and average the interval length per bin. Empty bins are
/// kept (count 0) for plotting fidelity.
pub fn conditionality_bins(
    abs_errors: &[f64],
    interval_lengths: &[f64],
    covered: &[bool],
    n_bins: usize,
) -> Result<ConditionalityBins, EvalError> {
    if abs_errors.len() != interval_lengths.len() || abs_errors.len() != covered.len() {
        return Err(EvalError::LengthMismatch {
            left: abs_errors.len(),
            right: interval_lengths.len().min(covered.len()),
        });
    }
    if n_bins < 2 {
        return Err(EvalError::BadBinCount(n_bins));
    }
    let kept: Vec<(f64, f64)> = abs_errors
        .iter()
        .zip(interval_lengths)
        .zip(covered)
        .filter(|(_, &keep)| keep)
        .map(|((&e, &len), _)| (e, len))
        .collect();
    if kept.is_empty() {
        return Err(EvalError::Empty);
    }
    let min = kept.iter().map(|(e, _)| *e).fold(f64::INFINITY, f64::min);
    let max = kept
        .iter()
        .map(|(e, _)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / n_bins as f64;
    let mut sums = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (e, len) in &kept {
        let idx = if width == 0.0 {
            0
        } else {
            (((e - min) / width) as usize).min(n_bins - 1)
        };
        sums[idx] += len;
        counts[idx] += 1;
    }
    let bins = (0..n_bins)
        .map(|i| BinStat {
            lo: min + i as f64 * width,
            hi: min + (i + 1) as f64 * width,
            mean_length: if counts[i] > 0 {
                sums[i] / counts[i] as f64
            } else {
                0.0
            },
            count: counts[i],
        })
        .collect();
    Ok(ConditionalityBins {
        bins,
        covered_only: true,
    })
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "inputs must be paired");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Coverage-gap probe: the guarantee is void under distribution shift,
/// so a coverage falling well short of `alpha` is a usable alarm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftReport {
    pub gap: f64,
    pub flagged: bool,
}

pub fn shift_detect(report: &EvalReport, tol: f64) -> ShiftReport {
    let gap = report.alpha - report.coverage;
    ShiftReport {
        gap,
        flagged: gap > tol,
    }
}

/// Anything that emits an interval for a query at a confidence level.
pub trait IntervalPredictor {
    fn id(&self) -> &str;
    fn interval(&self, query: (u32, u32, u32), alpha: f64) -> PredictionInterval;
}

/// Conformal predictor bound to one model and one calibration artifact.
pub struct ConformalPredictor<'a> {
    pub model: &'a ModelParams,
    pub artifact: &'a CalibrationArtifact,
    pub label: String,
}

impl IntervalPredictor for ConformalPredictor<'_> {
    fn id(&self) -> &str {
        &self.label
    }

    fn interval(&self, query: (u32, u32, u32), alpha: f64) -> PredictionInterval {
        predict_interval(self.model, self.artifact, query, alpha)
    }
}

/// The t-interval baseline; identical for every query.
pub struct FpiPredictor {
    pub stats: FpiStats,
}

impl IntervalPredictor for FpiPredictor {
    fn id(&self) -> &str {
        "fpi"
    }

    fn interval(&self, _query: (u32, u32, u32), alpha: f64) -> PredictionInterval {
        fpi_interval(&self.stats, alpha)
    }
}

/// Quantile-regression pair. The pair is trained for one specific
/// `alpha`; the level passed at prediction time is ignored, so sweeps
/// must supply one pair per level.
pub struct QrPredictor<'a> {
    pub pair: &'a QrPair,
}

impl IntervalPredictor for QrPredictor<'_> {
    fn id(&self) -> &str {
        "qr"
    }

    fn interval(&self, query: (u32, u32, u32), alpha: f64) -> PredictionInterval {
        debug_assert!(
            (alpha - self.pair.alpha).abs() < 1e-12,
            "QR pair was trained for alpha = {}",
            self.pair.alpha
        );
        crate::baselines::qr_interval(self.pair, query).0
    }
}

/// Evaluate one predictor on a test set at one level.
pub fn evaluate_predictor(
    predictor: &dyn IntervalPredictor,
    test: &[WeightedTriple],
    alpha: f64,
    trial_seed: u64,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let intervals: Vec<PredictionInterval> = test
        .iter()
        .map(|t| predictor.interval(t.query(), alpha))
        .collect();
    let truths: Vec<f64> = test.iter().map(|t| t.confidence()).collect();
    Ok(EvalReport {
        predictor_id: predictor.id().to_string(),
        alpha,
        coverage: coverage(&intervals, &truths)?,
        sharpness: sharpness(&intervals)?,
        n_test: test.len(),
        trial_seed,
    })
}

/// One report per `(predictor, alpha)` pair, alphas ascending.
pub fn confidence_sweep(
    predictors: &[&dyn IntervalPredictor],
    test: &[WeightedTriple],
    alphas: &[f64],
    trial_seed: u64,
) -> Result<Vec<EvalReport>, EvalError> {
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedAlphas);
    }
    let mut reports = Vec::with_capacity(predictors.len() * alphas.len());
    for &alpha in alphas {
        for predictor in predictors {
            reports.push(evaluate_predictor(*predictor, test, alpha, trial_seed)?);
        }
    }
    Ok(reports)
}

/// The default sweep levels: 80% to 95% in steps of 5%.
pub fn default_alphas() -> Vec<f64> {
    vec![0.80, 0.85, 0.90, 0.95]
}

/// One row of the calibration-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibSizeRow {
    pub size: usize,
    pub cov_mean: f64,
    pub cov_std: f64,
    pub sharp_mean: f64,
    pub sharp_std: f64,
}

/// Subsample the calibration set at doubling sizes (`start`, `2*start`,
/// ... capped at the full size, which is always included), recalibrate
/// `repeats` times per size and report mean and standard deviation of
/// coverage and sharpness over the repeats.
pub fn calib_size_sweep(
    model: &ModelParams,
    cal: &[WeightedTriple],
    test: &[WeightedTriple],
    measure: Measure,
    alpha: f64,
    start: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<CalibSizeRow>, EvalError> {
    let ell = cal.len();
    if start == 0 || start > ell {
        return Err(EvalError::BadSweepStart { start, ell });
    }
    if test.is_empty() || repeats == 0 {
        return Err(EvalError::Empty);
    }
    // Scores and point predictions do not depend on the subsample.
    let cal_scores: Vec<f64> = cal
        .iter()
        .map(|t| crate::conformal::nonconformity(model, t, measure))
        .collect();
    let predictions: Vec<f64> = test
        .iter()
        .map(|t| {
            let (h, r, t3) = t.query();
            model.predict(h, r, t3)
        })
        .collect();
    let truths: Vec<f64> = test.iter().map(|t| t.confidence()).collect();
    let fingerprint = crate::unkge::fingerprint(model);

    let mut sizes = Vec::new();
    let mut size = start;
    while size < ell {
        sizes.push(size);
        size *= 2;
    }
    sizes.push(ell);

    let mut rows = Vec::with_capacity(sizes.len());
    let mut indices: Vec<usize> = (0..ell).collect();
    for &size in &sizes {
        let mut coverages = Vec::with_capacity(repeats);
        let mut sharpnesses = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mut rng = seeded_rng(sub_seed(seed, &format!("calib-sweep-{size}-{rep}")));
            indices.shuffle(&mut rng);
            let subset: Vec<f64> = indices[..size].iter().map(|&i| cal_scores[i]).collect();
            let artifact = CalibrationArtifact::from_scores(subset, measure, fingerprint)?;
            let intervals: Vec<PredictionInterval> = predictions
                .iter()
                .map(|&p| {
                    PredictionInterval::from_center(p, half_width(&artifact, p, alpha))
                })
                .collect();
            coverages.push(coverage(&intervals, &truths)?);
            sharpnesses.push(sharpness(&intervals)?);
        }
        let (cov_mean, cov_std) = mean_std(&coverages);
        let (sharp_mean, sharp_std) = mean_std(&sharpnesses);
        rows.push(CalibSizeRow {
            size,
            cov_mean,
            cov_std,
            sharp_mean,
            sharp_std,
        });
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Output formats for report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

/// A typed cell in a report row.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    UInt(u64),
    Float(f64),
    Str(String),
}

/// A row type with a fixed header; gives every table a deterministic
/// column order in both output formats.
pub trait ReportRecord {
    fn headers() -> &'static [&'static str];
    fn fields(&self) -> Vec<Field>;
}

/// Render a float with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn render_field(field: &Field, format: ReportFormat) -> String {
    match (field, format) {
        (Field::UInt(v), _) => v.to_string(),
        (Field::Float(v), _) => format_sig6(*v),
        (Field::Str(s), ReportFormat::Csv) => s.clone(),
        (Field::Str(s), ReportFormat::JsonLines) => {
            serde_json::to_string(s).expect("strings serialize")
        }
    }
}

/// Serialize rows to CSV (with header) or JSON lines. Emitting zero
/// rows yields just the CSV header, or nothing for JSON lines.
pub fn emit_report<R: ReportRecord>(rows: &[R], format: ReportFormat) -> String {
    let headers = R::headers();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&headers.join(","));
            out.push('\n');
            for row in rows {
                let cells: Vec<String> = row
                    .fields()
                    .iter()
                    .map(|f| render_field(f, format))
                    .collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        ReportFormat::JsonLines => {
            for row in rows {
                let cells: Vec<String> = headers
                    .iter()
                    .zip(row.fields())
                    .map(|(h, f)| {
                        let key = serde_json::to_string(h).expect("strings serialize");
                        let value = match f {
                            Field::Float(v) if !v.is_finite() => {
                                serde_json::to_string(&v.to_string()).expect("strings serialize")
                            }
                            other => render_field(&other, format),
                        };
                        format!("{key}:{value}")
                    })
                    .collect();
                out.push('{');
                out.push_str(&cells.join(","));
                out.push_str("}\n");
            }
        }
    }
    out
}

/// Row of `reports.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub predictor: String,
    pub backbone: String,
    pub dataset: String,
    pub alpha: f64,
    pub trial: u64,
    pub coverage: f64,
    pub sharpness: f64,
}

impl ReportRecord for ReportRow {
    fn headers() -> &'static [&'static str] {
        &[
            "predictor",
            "backbone",
            "dataset",
            "alpha",
            "trial",
            "coverage",
            "sharpness",
        ]
    }

    fn fields(&self) -> Vec<Field> {
        vec![
            Field::Str(self.predictor.clone()),
            Field::Str(self.backbone.clone()),
            Field::Str(self.dataset.clone()),
            Field::Float(self.alpha),
            Field::UInt(self.trial),
            Field::Float(self.coverage),
            Field::Float(self.sharpness),
        ]
    }
}

/// Row of `bins.csv`.
impl ReportRecord for BinStat {
    fn headers() -> &'static [&'static str] {
        &["bin_lo", "bin_hi", "mean_len", "count"]
    }

    fn fields(&self) -> Vec<Field> {
        vec![
            Field::Float(self.lo),
            Field::Float(self.hi),
            Field::Float(self.mean_length),
            Field::UInt(self.count as u64),
        ]
    }
}

/// Row of `calib_sweep.csv`.
impl ReportRecord for CalibSizeRow {
    fn headers() -> &'static [&'static str] {
        &["size", "cov_mean", "cov_std", "sharp_mean", "sharp_std"]
    }

    fn fields(&self) -> Vec<Field> {
        vec![
            Field::UInt(self.size as u64),
            Field::Float(self.cov_mean),
            Field::Float(self.cov_std),
            Field::Float(self.sharp_mean),
            Field::Float(self.sharp_std),
        ]
    }
}
