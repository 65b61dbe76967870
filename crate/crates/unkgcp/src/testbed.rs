//! Synthetic generators and independent oracles.
//!
//! Everything here exists to check the conformal machinery from the
//! outside: a planted-model generator whose ground truth is known, the
//! literal rank-count membership rule evaluated on a grid of candidate
//! confidences, and a Monte Carlo harness for the finite-sample
//! coverage bounds.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::conformal::{entropy, nonconformity, quantile_rank, Measure, DEFAULT_ENTROPY_CLAMP};
use crate::dataset::{Vocab, WeightedTriple};
use crate::seed::{named_rng, seeded_rng, sub_seed};
use crate::unkge::{ModelParams, ScoreMapping};

/// Spread of the hidden model's embedding entries; combined with the
/// derived `w` below it puts the pre-sigmoid scores at roughly unit-ish
/// scale so that true confidences cover most of `(0, 1)`.
const PLANTED_EMBEDDING_RANGE: f64 = 0.7;
const PLANTED_Z_STD: f64 = 2.0;
/// Negative intercept: a uniformly random triple is more likely
/// implausible than plausible, as in real graphs. This also keeps the
/// early-stopping criterion meaningful, since corrupted validation
/// triples genuinely tend toward low scores.
const PLANTED_B: f64 = -1.25;

/// Generator parameters for a planted world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub dim: usize,
    pub n_triples: usize,
    pub noise_sigma: f64,
    /// Scale the noise by the entropy of the true prediction, so that
    /// per-query difficulty genuinely varies.
    pub heteroscedastic: bool,
    pub seed: u64,
}

/// The hidden model behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct PlantedWorld {
    pub true_params: ModelParams,
    pub noise_sigma: f64,
    pub heteroscedastic: bool,
    pub seed: u64,
}

impl PlantedWorld {
    /// Generated labels `e0..`, `r0..` matching the id space.
    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(
            self.true_params.n_entities(),
            self.true_params.n_relations(),
        )
    }

    pub fn true_prediction(&self, h: u32, r: u32, t: u32) -> f64 {
        self.true_params.predict(h, r, t)
    }
}

/// Sample a hidden logistic model and draw `n_triples` uniform random
/// triples labelled `c = clamp(M_true(q) + noise, 0, 1)`.
///
/// Homoscedastic noise is `Normal(0, sigma^2)`; heteroscedastic noise is
/// `Normal(0, (sigma * H(M_true(q)) / ln 2)^2)`.
pub fn generate_planted(cfg: &PlantedConfig) -> (PlantedWorld, Vec<WeightedTriple>) {
    assert!(
        cfg.n_entities >= 1 && cfg.n_relations >= 1 && cfg.dim >= 1 && cfg.n_triples >= 1,
        "all planted counts must be at least 1"
    );
    assert!(cfg.noise_sigma >= 0.0, "noise_sigma must be non-negative");

    let mut model_rng = named_rng(cfg.seed, "planted-model");
    let a = PLANTED_EMBEDDING_RANGE;
    let fill = |rows: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        (0..rows * cfg.dim)
            .map(|_| rng.gen_range(-a..a))
            .collect::<Vec<f64>>()
    };
    let entity = fill(cfg.n_entities, &mut model_rng);
    let relation = fill(cfg.n_relations, &mut model_rng);
    // Entries are iid uniform, so the raw trilinear score has standard
    // deviation a^3 * sqrt(d / 27); pick w to hit the target z spread.
    let raw_std = a.powi(3) * (cfg.dim as f64 / 27.0).sqrt();
    let true_params = ModelParams {
        entity_emb: crate::unkge::Matrix::from_vec(cfg.n_entities, cfg.dim, entity),
        relation_emb: crate::unkge::Matrix::from_vec(cfg.n_relations, cfg.dim, relation),
        w: PLANTED_Z_STD / raw_std,
        b: PLANTED_B,
        mapping: ScoreMapping::Logistic,
    };

    let mut triple_rng = named_rng(cfg.seed, "planted-triples");
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let triples = (0..cfg.n_triples)
        .map(|_| {
            let h = triple_rng.gen_range(0..cfg.n_entities as u32);
            let r = triple_rng.gen_range(0..cfg.n_relations as u32);
            let t = triple_rng.gen_range(0..cfg.n_entities as u32);
            let truth = true_params.predict(h, r, t);
            let noise = if cfg.noise_sigma == 0.0 {
                0.0
            } else {
                let scale = if cfg.heteroscedastic {
                    cfg.noise_sigma * entropy(truth, DEFAULT_ENTROPY_CLAMP)
                        / std::f64::consts::LN_2
                } else {
                    cfg.noise_sigma
                };
                unit_normal.sample(&mut triple_rng) * scale
            };
            let c = (truth + noise).clamp(0.0, 1.0);
            WeightedTriple::new(h, r, t, c).expect("clamped confidence is valid")
        })
        .collect();

    (
        PlantedWorld {
            true_params,
            noise_sigma: cfg.noise_sigma,
            heteroscedastic: cfg.heteroscedastic,
            seed: cfg.seed,
        },
        triples,
    )
}

/// Literal rank-count membership rule evaluated on a candidate grid.
///
/// For each grid candidate `c`, the score of `(q, c)` is ranked against
/// the calibration scores; `c` is accepted when strictly more than a
/// `1 - alpha` fraction of the `l + 1` scores are at least as large.
/// This is the oracle the analytic interval construction must agree
/// with; it never touches the threshold short-cut.
pub fn grid_membership(
    model: &ModelParams,
    cal_scores: &[f64],
    query: (u32, u32, u32),
    alpha: f64,
    measure: Measure,
    step: f64,
) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let ell = cal_scores.len();
    let n_steps = (1.0 / step).round() as usize;
    let mut accepted = Vec::new();
    for k in 0..=n_steps {
        let c = (k as f64 * step).min(1.0);
        let triple = WeightedTriple::new(query.0, query.1, query.2, c)
            .expect("grid candidates lie in [0, 1]");
        let s_new = nonconformity(model, &triple, measure);
        // The candidate's own score participates in the rank count.
        let count = 1 + cal_scores.iter().filter(|&&s| s >= s_new).count();
        // Same tolerance convention as `quantile_rank`, so that exact
        // rational ties resolve the way real arithmetic would.
        if count as f64 > (1.0 - alpha) * (ell + 1) as f64 + 1e-9 {
            accepted.push(c);
        }
    }
    accepted
}

/// Continuous score distributions for the Monte Carlo harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreDist {
    Uniform,
    Exponential { rate: f64 },
    /// Equal mixture of two well-separated normals.
    Bimodal,
}

impl ScoreDist {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScoreDist::Uniform => rng.gen_range(0.0..1.0),
            ScoreDist::Exponential { rate } => {
                Exp::new(*rate).expect("positive rate").sample(rng)
            }
            ScoreDist::Bimodal => {
                let center = if rng.gen_bool(0.5) { 0.2 } else { 0.8 };
                Normal::new(center, 0.05).expect("valid normal").sample(rng)
            }
        }
    }
}

/// Exact coverage of the threshold rule under exchangeable tie-free
/// scores: `ceil(alpha * (l + 1)) / (l + 1)`.
pub fn exact_coverage(ell: usize, alpha: f64) -> f64 {
    let k = quantile_rank(alpha, ell).min(ell + 1);
    k as f64 / (ell + 1) as f64
}

/// Empirical coverage over `n_trials` independent draws.
///
/// Each trial draws `l + 1` i.i.d. scores, treats the first `l` as the
/// calibration set, and counts success when the held-out score is at
/// most the rank-`k` order statistic (always, when `k` exceeds `l`).
/// Trials use per-trial derived seeds, so a parallel driver would
/// reproduce the serial result exactly.
pub fn monte_carlo_validity(
    ell: usize,
    alpha: f64,
    n_trials: usize,
    dist: ScoreDist,
    seed: u64,
) -> f64 {
    assert!(n_trials >= 1, "need at least one trial");
    let k = quantile_rank(alpha, ell);
    let mut successes = 0usize;
    for trial in 0..n_trials {
        let mut rng = seeded_rng(sub_seed(seed, &format!("mc-trial-{trial}")));
        let mut scores: Vec<f64> = (0..ell + 1).map(|_| dist.sample(&mut rng)).collect();
        let held_out = scores.pop().expect("ell + 1 >= 1");
        let success = if k == 0 {
            false
        } else if k > ell {
            true
        } else {
            scores.sort_unstable_by(f64::total_cmp);
            held_out <= scores[k - 1]
        };
        if success {
            successes += 1;
        }
    }
    successes as f64 / n_trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{calibrate, predict_interval};
    use approx::assert_relative_eq;

    fn small_config(seed: u64) -> PlantedConfig {
        PlantedConfig {
            n_entities: 30,
            n_relations: 3,
            dim: 4,
            n_triples: 400,
            noise_sigma: 0.03,
            heteroscedastic: false,
            seed,
        }
    }

    #[test]
    fn noiseless_world_reproduces_true_predictions() {
        let mut cfg = small_config(1);
        cfg.noise_sigma = 0.0;
        let (world, triples) = generate_planted(&cfg);
        for t in &triples {
            let (h, r, tt) = t.query();
            assert_eq!(t.confidence(), world.true_prediction(h, r, tt));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config(5);
        let (_, a) = generate_planted(&cfg);
        let (_, b) = generate_planted(&cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn homoscedastic_residual_std_matches_sigma() {
        let cfg = PlantedConfig {
            n_entities: 200,
            n_relations: 5,
            dim: 8,
            n_triples: 10_000,
            noise_sigma: 0.03,
            heteroscedastic: false,
            seed: 9,
        };
        let (world, triples) = generate_planted(&cfg);
        // Clipping at 0 and 1 shaves the noise near the boundaries, so
        // measure the spread where the truth sits safely inside.
        let residuals: Vec<f64> = triples
            .iter()
            .filter_map(|t| {
                let (h, r, tt) = t.query();
                let truth = world.true_prediction(h, r, tt);
                let safe = truth > 4.0 * cfg.noise_sigma && truth < 1.0 - 4.0 * cfg.noise_sigma;
                safe.then(|| t.confidence() - truth)
            })
            .collect();
        assert!(residuals.len() > 1000);
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (residuals.len() - 1) as f64;
        let std = var.sqrt();
        assert!(
            (std - cfg.noise_sigma).abs() / cfg.noise_sigma < 0.05,
            "std {std} vs sigma {}",
            cfg.noise_sigma
        );
    }

    #[test]
    fn heteroscedastic_noise_tracks_entropy() {
        let cfg = PlantedConfig {
            n_entities: 200,
            n_relations: 5,
            dim: 8,
            n_triples: 20_000,
            noise_sigma: 0.05,
            heteroscedastic: true,
            seed: 11,
        };
        let (world, triples) = generate_planted(&cfg);
        // Residual spread among high-entropy queries should exceed the
        // spread among low-entropy ones.
        let mut high = Vec::new();
        let mut low = Vec::new();
        for t in &triples {
            let (h, r, tt) = t.query();
            let truth = world.true_prediction(h, r, tt);
            let resid = t.confidence() - truth;
            let ent = entropy(truth, DEFAULT_ENTROPY_CLAMP) / std::f64::consts::LN_2;
            if ent > 0.9 {
                high.push(resid);
            } else if ent < 0.5 {
                low.push(resid);
            }
        }
        let std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        assert!(high.len() > 100 && low.len() > 100);
        assert!(std(&high) > 1.5 * std(&low));
    }

    #[test]
    fn grid_membership_worked_example() {
        // M(q) = 0.6, cal scores {0.05, 0.10, 0.15}, alpha = 0.5:
        // rank ceil(0.5 * 4) = 2 -> threshold 0.10 -> [0.50, 0.70].
        let mut model = ModelParams::init(2, 1, 2, ScoreMapping::Logistic, 0);
        model.entity_emb.as_mut_slice().fill(0.0);
        model.relation_emb.as_mut_slice().fill(0.0);
        model.b = (0.6f64 / 0.4).ln();
        let cal = [0.05, 0.10, 0.15];
        let accepted =
            grid_membership(&model, &cal, (0, 0, 1), 0.5, Measure::absolute(), 1e-3);
        let lo = *accepted.first().unwrap();
        let hi = *accepted.last().unwrap();
        assert_relative_eq!(lo, 0.50, epsilon = 1.5e-3);
        assert_relative_eq!(hi, 0.70, epsilon = 1.5e-3);
        // Contiguous acceptance region.
        assert_eq!(accepted.len(), ((hi - lo) / 1e-3).round() as usize + 1);
    }

    #[test]
    fn grid_membership_accepts_everything_at_alpha_one() {
        let model = ModelParams::init(2, 1, 2, ScoreMapping::Logistic, 3);
        let cal = [0.2, 0.4, 0.9];
        let accepted = grid_membership(&model, &cal, (0, 0, 1), 1.0, Measure::absolute(), 1e-3);
        assert_eq!(accepted.len(), 1001);
    }

    #[test]
    fn grid_membership_empty_at_alpha_zero_matches_interval() {
        let model = ModelParams::init(2, 1, 2, ScoreMapping::Logistic, 3);
        let cal_triples: Vec<WeightedTriple> = (0..5)
            .map(|i| WeightedTriple::new(0, 0, 1, 0.1 + 0.15 * i as f64).unwrap())
            .collect();
        let artifact = calibrate(&model, &cal_triples, Measure::absolute()).unwrap();
        let accepted = grid_membership(
            &model,
            artifact.scores(),
            (0, 0, 1),
            0.0,
            Measure::absolute(),
            1e-3,
        );
        assert!(accepted.is_empty());
        assert!(predict_interval(&model, &artifact, (0, 0, 1), 0.0).is_empty());
    }

    #[test]
    fn monte_carlo_matches_exact_coverage() {
        assert_relative_eq!(exact_coverage(9, 0.9), 0.9, epsilon = 1e-12);
        let emp = monte_carlo_validity(9, 0.9, 10_000, ScoreDist::Uniform, 7);
        assert!((emp - 0.9).abs() <= 0.01, "empirical {emp}");
    }

    #[test]
    fn exact_coverage_sits_inside_the_band() {
        let exact = exact_coverage(10, 0.9);
        assert_relative_eq!(exact, 10.0 / 11.0, epsilon = 1e-12);
        assert!(exact >= 0.9 && exact <= 0.9 + 1.0 / 11.0);
    }

    #[test]
    fn alpha_one_always_covers() {
        for ell in [1, 5, 50] {
            assert_eq!(
                monte_carlo_validity(ell, 1.0, 500, ScoreDist::Uniform, 3),
                1.0
            );
        }
    }

    #[test]
    fn coverage_is_distribution_free() {
        let trials = 4000;
        let dists = [
            ScoreDist::Uniform,
            ScoreDist::Exponential { rate: 1.0 },
            ScoreDist::Bimodal,
        ];
        let exact = exact_coverage(49, 0.9);
        for dist in dists {
            let emp = monte_carlo_validity(49, 0.9, trials, dist, 13);
            let binom_std = (exact * (1.0 - exact) / trials as f64).sqrt();
            assert!(
                (emp - exact).abs() <= 3.5 * binom_std,
                "dist {dist:?}: {emp} vs {exact}"
            );
        }
    }

    #[test]
    fn planted_vocab_matches_id_space() {
        let (world, triples) = generate_planted(&small_config(2));
        let vocab = world.vocab();
        assert_eq!(vocab.entity_count(), 30);
        assert_eq!(vocab.relation_count(), 3);
        for t in triples.iter().take(50) {
            assert!(vocab.entity_label(t.head()).is_some());
            assert!(vocab.relation_label(t.relation()).is_some());
        }
    }
}
