//! Baseline confidence predictors: the parametric t-interval over
//! calibration confidences and quantile-regression interval pairs.

mod student_t;

pub use student_t::{inc_beta_reg, t_cdf, t_quantile};

use thiserror::Error;

use crate::conformal::PredictionInterval;
use crate::dataset::{SplitDataset, WeightedTriple};
use crate::unkge::{train, ModelParams, TrainConfig, TrainError, TrainObjective};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least 2 calibration triples, found {found}")]
    TooFewCalibration { found: usize },
    #[error("confidence level {0} must lie in (0, 1)")]
    BadAlpha(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Sample mean and unbiased sample variance of the calibration
/// confidences. Deliberately model-independent: the interval is built
/// from the ground-truth scores alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpiStats {
    pub mean: f64,
    pub var: f64,
    pub ell: usize,
}

pub fn fpi_fit(cal: &[WeightedTriple]) -> Result<FpiStats, BaselineError> {
    if cal.len() < 2 {
        return Err(BaselineError::TooFewCalibration { found: cal.len() });
    }
    let ell = cal.len();
    let mean = cal.iter().map(|t| t.confidence()).sum::<f64>() / ell as f64;
    let var = cal
        .iter()
        .map(|t| (t.confidence() - mean).powi(2))
        .sum::<f64>()
        / (ell - 1) as f64;
    Ok(FpiStats { mean, var, ell })
}

/// `mean +- t_{ell-1}(level) * s * sqrt(ell / (ell - 1))`, clipped to
/// `[0, 1]`. The same interval is emitted for every query.
pub fn fpi_interval_at_level(stats: &FpiStats, level: f64) -> PredictionInterval {
    let t = t_quantile(level, (stats.ell - 1) as u64);
    let half = t * stats.var.sqrt() * (stats.ell as f64 / (stats.ell - 1) as f64).sqrt();
    PredictionInterval::from_center(stats.mean, half)
}

/// Two-sided interval at confidence `alpha`, i.e. tail level
/// `(1 + alpha) / 2`.
pub fn fpi_interval(stats: &FpiStats, alpha: f64) -> PredictionInterval {
    fpi_interval_at_level(stats, (1.0 + alpha) / 2.0)
}

/// Lower and upper pinball levels for a two-sided `alpha` interval.
pub fn qr_taus(alpha: f64) -> (f64, f64) {
    ((1.0 - alpha) / 2.0, 1.0 - (1.0 - alpha) / 2.0)
}

/// A lower- and an upper-quantile model trained with the pinball loss.
#[derive(Debug, Clone)]
pub struct QrPair {
    pub lower: ModelParams,
    pub upper: ModelParams,
    pub alpha: f64,
}

pub fn qr_fit(
    data: &SplitDataset,
    cfg: &TrainConfig,
    alpha: f64,
) -> Result<QrPair, BaselineError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BaselineError::BadAlpha(alpha));
    }
    let (tau_lower, tau_upper) = qr_taus(alpha);
    let lower = train(data, cfg, TrainObjective::Pinball(tau_lower))?.params;
    let upper = train(data, cfg, TrainObjective::Pinball(tau_upper))?.params;
    Ok(QrPair {
        lower,
        upper,
        alpha,
    })
}

/// `[M_lower(q), M_upper(q)]`; a crossing (lower above upper) collapses
/// to the midpoint and is reported through the flag so callers can
/// count it.
pub fn qr_interval(pair: &QrPair, query: (u32, u32, u32)) -> (PredictionInterval, bool) {
    let (h, r, t) = query;
    let lo = pair.lower.predict(h, r, t);
    let hi = pair.upper.predict(h, r, t);
    if lo > hi {
        let mid = 0.5 * (lo + hi);
        (
            PredictionInterval::new(mid, mid).expect("midpoint lies in [0, 1]"),
            true,
        )
    } else {
        (
            PredictionInterval::new(lo, hi).expect("predictions lie in [0, 1]"),
            false,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, SplitRatios};
    use crate::testbed::{generate_planted, PlantedConfig};
    use crate::unkge::{OptimizerKind, ScoreMapping};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn wt(c: f64) -> WeightedTriple {
        WeightedTriple::new(0, 0, 1, c).unwrap()
    }

    #[test]
    fn two_point_stats() {
        let stats = fpi_fit(&[wt(0.4), wt(0.6)]).unwrap();
        assert_relative_eq!(stats.mean, 0.5);
        assert_relative_eq!(stats.var, 0.02, epsilon = 1e-12);
        assert_eq!(stats.ell, 2);
    }

    #[test]
    fn constant_scores_have_zero_variance() {
        let stats = fpi_fit(&[wt(0.3); 5]).unwrap();
        assert_eq!(stats.var, 0.0);
    }

    #[test]
    fn four_point_stats() {
        let stats = fpi_fit(&[wt(0.1), wt(0.2), wt(0.3), wt(0.4)]).unwrap();
        assert_relative_eq!(stats.mean, 0.25);
        assert_relative_eq!(stats.var, 0.016667, epsilon = 1e-6);
    }

    #[test]
    fn fit_requires_two_points() {
        assert!(matches!(
            fpi_fit(&[wt(0.5)]),
            Err(BaselineError::TooFewCalibration { found: 1 })
        ));
    }

    #[test]
    fn zero_variance_gives_degenerate_interval() {
        let stats = FpiStats {
            mean: 0.3,
            var: 0.0,
            ell: 10,
        };
        let interval = fpi_interval(&stats, 0.9);
        assert_eq!(interval.bounds(), Some((0.3, 0.3)));
    }

    #[test]
    fn wide_variance_clips_to_unit_interval() {
        let stats = FpiStats {
            mean: 0.5,
            var: 4.0,
            ell: 10,
        };
        assert_eq!(fpi_interval(&stats, 0.9), PredictionInterval::full());
    }

    #[test]
    fn half_width_matches_formula() {
        let stats = FpiStats {
            mean: 0.5,
            var: 0.01,
            ell: 101,
        };
        let interval = fpi_interval(&stats, 0.9);
        let expected_half = t_quantile(0.95, 100) * 0.1 * (101.0f64 / 100.0).sqrt();
        let (lo, hi) = interval.bounds().unwrap();
        assert_relative_eq!(hi - lo, 2.0 * expected_half, epsilon = 1e-9);
    }

    #[test]
    fn fpi_width_grows_with_alpha_and_ignores_queries() {
        let stats = FpiStats {
            mean: 0.5,
            var: 0.002,
            ell: 50,
        };
        let mut prev = 0.0;
        for alpha in [0.5, 0.8, 0.9, 0.95] {
            let w = fpi_interval(&stats, alpha).length();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn fpi_coverage_on_gaussian_scores() {
        // Near-Gaussian confidences: empirical coverage tracks alpha.
        let mut rng = crate::seed::seeded_rng(17);
        let normal = Normal::new(0.5f64, 0.05).unwrap();
        let cal: Vec<WeightedTriple> = (0..1000)
            .map(|_| wt(normal.sample(&mut rng).clamp(0.0, 1.0)))
            .collect();
        let stats = fpi_fit(&cal).unwrap();
        for alpha in [0.8, 0.9] {
            let interval = fpi_interval(&stats, alpha);
            let covered = (0..10_000)
                .filter(|_| interval.contains(normal.sample(&mut rng).clamp(0.0, 1.0)))
                .count();
            let coverage = covered as f64 / 10_000.0;
            assert!(
                (coverage - alpha).abs() <= 0.02,
                "alpha {alpha}: coverage {coverage}"
            );
        }
    }

    #[test]
    fn tau_pairs() {
        let (lo, hi) = qr_taus(0.9);
        assert_relative_eq!(lo, 0.05, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.95, epsilon = 1e-12);
        let (lo, hi) = qr_taus(0.8);
        assert_relative_eq!(lo, 0.10, epsilon = 1e-12);
        assert_relative_eq!(hi, 0.90, epsilon = 1e-12);
    }

    #[test]
    fn qr_interval_orders_and_collapses() {
        let mut lower = ModelParams::init(2, 1, 2, ScoreMapping::Logistic, 1);
        lower.entity_emb.as_mut_slice().fill(0.0);
        lower.relation_emb.as_mut_slice().fill(0.0);
        let mut upper = lower.clone();
        lower.b = (0.3f64 / 0.7).ln();
        upper.b = (0.7f64 / 0.3).ln();
        let pair = QrPair {
            lower: lower.clone(),
            upper: upper.clone(),
            alpha: 0.9,
        };
        let (interval, crossed) = qr_interval(&pair, (0, 0, 1));
        assert!(!crossed);
        let (lo, hi) = interval.bounds().unwrap();
        assert_relative_eq!(lo, 0.3, epsilon = 1e-9);
        assert_relative_eq!(hi, 0.7, epsilon = 1e-9);

        let swapped = QrPair {
            lower: upper,
            upper: lower,
            alpha: 0.9,
        };
        let (interval, crossed) = qr_interval(&swapped, (0, 0, 1));
        assert!(crossed);
        let (lo, hi) = interval.bounds().unwrap();
        assert_relative_eq!(lo, 0.5, epsilon = 1e-9);
        assert_eq!(lo, hi);
    }

    #[test]
    fn identical_models_give_zero_width() {
        let model = ModelParams::init(4, 2, 3, ScoreMapping::Logistic, 2);
        let pair = QrPair {
            lower: model.clone(),
            upper: model,
            alpha: 0.8,
        };
        let mut rng = crate::seed::seeded_rng(3);
        for _ in 0..10 {
            let q = (rng.gen_range(0..4), rng.gen_range(0..2), rng.gen_range(0..4));
            let (interval, crossed) = qr_interval(&pair, q);
            assert!(!crossed);
            assert_eq!(interval.length(), 0.0);
        }
    }

    #[test]
    fn qr_rejects_bad_alpha() {
        let cfg = TrainConfig::benchmark_defaults();
        let (world, triples) = generate_planted(&PlantedConfig {
            n_entities: 10,
            n_relations: 2,
            dim: 2,
            n_triples: 50,
            noise_sigma: 0.0,
            heteroscedastic: false,
            seed: 0,
        });
        let data = split(&triples, world.vocab(), SplitRatios::standard(), 0).unwrap();
        assert!(matches!(
            qr_fit(&data, &cfg, 1.0),
            Err(BaselineError::BadAlpha(_))
        ));
    }

    #[test]
    fn lower_quantile_model_leaves_expected_tail_mass() {
        // Homoscedastic planted data: about 5% of test truths should
        // fall below the tau = 0.05 model's predictions.
        let (world, triples) = generate_planted(&PlantedConfig {
            n_entities: 40,
            n_relations: 3,
            dim: 4,
            n_triples: 6000,
            noise_sigma: 0.05,
            heteroscedastic: false,
            seed: 23,
        });
        let data = split(&triples, world.vocab(), SplitRatios::standard(), 23).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            dim: 4,
            batch_size: 128,
            neg_per_pos: 1,
            patience: 30,
            max_epochs: 200,
            optimizer: OptimizerKind::adam(),
            seed: 23,
            neg_weight: 0.001,
            mapping: ScoreMapping::Logistic,
            semi: None,
        };
        let pair = qr_fit(&data, &cfg, 0.9).unwrap();
        let below = data
            .test
            .iter()
            .filter(|t| {
                let (h, r, tt) = t.query();
                t.confidence() < pair.lower.predict(h, r, tt)
            })
            .count();
        let fraction = below as f64 / data.test.len() as f64;
        assert!(
            (fraction - 0.05).abs() <= 0.02,
            "fraction below lower model: {fraction}"
        );
    }
}
