//! Training objectives and their analytic gradients.
//!
//! Both objectives are sums over the examples they are given: the
//! squared-residual loss with a separate weight on corrupted negatives,
//! and the pinball loss for quantile training. Gradients accumulate
//! sparsely: only embedding rows touched by the batch are written, which
//! is what makes minibatch training on large vocabularies affordable.

use crate::dataset::WeightedTriple;
use crate::unkge::{Matrix, ModelParams, ScoreMapping};

/// Objective selector carried into gradient computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `sum_pos (M(q) - c)^2 + neg_weight * sum_neg M(q)^2`
    Mse { neg_weight: f64 },
    /// `sum tau * max(c - M(q), 0) + (1 - tau) * max(M(q) - c, 0)`
    Pinball { tau: f64 },
}

/// Parameter-shaped gradient with sparse row tracking.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub entity: Matrix,
    pub relation: Matrix,
    pub w: f64,
    pub b: f64,
    touched_entities: Vec<u32>,
    touched_relations: Vec<u32>,
    entity_seen: Vec<bool>,
    relation_seen: Vec<bool>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            entity: Matrix::zeros(params.n_entities(), params.dim()),
            relation: Matrix::zeros(params.n_relations(), params.dim()),
            w: 0.0,
            b: 0.0,
            touched_entities: Vec::new(),
            touched_relations: Vec::new(),
            entity_seen: vec![false; params.n_entities()],
            relation_seen: vec![false; params.n_relations()],
        }
    }

    /// Rows with a (possibly zero) contribution from the last batch.
    pub fn touched_entities(&self) -> &[u32] {
        &self.touched_entities
    }

    pub fn touched_relations(&self) -> &[u32] {
        &self.touched_relations
    }

    /// Reset to zero, touching only rows written since the last clear.
    pub fn clear(&mut self) {
        for &row in &self.touched_entities {
            self.entity.row_mut(row as usize).fill(0.0);
            self.entity_seen[row as usize] = false;
        }
        for &row in &self.touched_relations {
            self.relation.row_mut(row as usize).fill(0.0);
            self.relation_seen[row as usize] = false;
        }
        self.touched_entities.clear();
        self.touched_relations.clear();
        self.w = 0.0;
        self.b = 0.0;
    }

    fn mark_entity(&mut self, row: u32) {
        if !self.entity_seen[row as usize] {
            self.entity_seen[row as usize] = true;
            self.touched_entities.push(row);
        }
    }

    fn mark_relation(&mut self, row: u32) {
        if !self.relation_seen[row as usize] {
            self.relation_seen[row as usize] = true;
            self.touched_relations.push(row);
        }
    }
}

/// Forward pass for one query: raw score, prediction and `dM/dz`.
fn forward(params: &ModelParams, h: u32, r: u32, t: u32) -> (f64, f64, f64) {
    let raw = params.raw_score(h, r, t);
    let z = params.w * raw + params.b;
    match params.mapping {
        ScoreMapping::Logistic => {
            let m = params.predict(h, r, t);
            (raw, m, m * (1.0 - m))
        }
        ScoreMapping::Rectified => {
            let m = z.clamp(0.0, 1.0);
            // Subgradient 0 on the flat pieces and at the kinks.
            let slope = if z > 0.0 && z < 1.0 { 1.0 } else { 0.0 };
            (raw, m, slope)
        }
    }
}

/// Accumulate `d(loss)/d(params)` for one example given `dL/dM`.
fn backprop(params: &ModelParams, h: u32, r: u32, t: u32, raw: f64, dl_dz: f64, g: &mut Gradients) {
    g.w += dl_dz * raw;
    g.b += dl_dz;
    let scale = dl_dz * params.w;
    g.mark_entity(h);
    g.mark_entity(t);
    g.mark_relation(r);
    let eh = params.entity_emb.row(h as usize);
    let et = params.entity_emb.row(t as usize);
    let er = params.relation_emb.row(r as usize);
    let dim = params.dim();
    // Head and tail may alias (self-loop); accumulate head first, then
    // re-read is not needed because contributions are additive.
    for j in 0..dim {
        let dh = scale * et[j] * er[j];
        let dt = scale * eh[j] * er[j];
        let dr = scale * eh[j] * et[j];
        g.entity.row_mut(h as usize)[j] += dh;
        g.entity.row_mut(t as usize)[j] += dt;
        g.relation.row_mut(r as usize)[j] += dr;
    }
}

/// One weighted squared-residual term; returns its loss contribution and
/// accumulates its gradient when `grads` is provided.
pub(crate) fn sq_residual_term(
    params: &ModelParams,
    triple: &WeightedTriple,
    target: f64,
    weight: f64,
    grads: Option<&mut Gradients>,
) -> f64 {
    let (h, r, t) = triple.query();
    let (raw, m, dm_dz) = forward(params, h, r, t);
    let resid = m - target;
    if let Some(g) = grads {
        let dl_dm = 2.0 * weight * resid;
        backprop(params, h, r, t, raw, dl_dm * dm_dz, g);
    }
    weight * resid * resid
}

/// `dL/dM` for one pinball term; slope is `-(tau)` below the target,
/// `1 - tau` above it, and 0 exactly at the kink.
fn pinball_dl_dm(m: f64, target: f64, tau: f64) -> f64 {
    if m < target {
        -tau
    } else if m > target {
        1.0 - tau
    } else {
        0.0
    }
}

pub(crate) fn pinball_term(
    params: &ModelParams,
    triple: &WeightedTriple,
    tau: f64,
    grads: Option<&mut Gradients>,
) -> f64 {
    let (h, r, t) = triple.query();
    let (raw, m, dm_dz) = forward(params, h, r, t);
    let c = triple.confidence();
    if let Some(g) = grads {
        backprop(params, h, r, t, raw, pinball_dl_dm(m, c, tau) * dm_dz, g);
    }
    tau * (c - m).max(0.0) + (1.0 - tau) * (m - c).max(0.0)
}

/// Squared-error objective over positives plus weighted corrupted
/// negatives. Negatives are penalized toward zero regardless of their
/// stored confidence.
pub fn mse_objective(
    params: &ModelParams,
    positives: &[WeightedTriple],
    negatives: &[WeightedTriple],
    neg_weight: f64,
) -> f64 {
    let pos: f64 = positives
        .iter()
        .map(|t| sq_residual_term(params, t, t.confidence(), 1.0, None))
        .sum();
    let neg: f64 = negatives
        .iter()
        .map(|t| sq_residual_term(params, t, 0.0, neg_weight, None))
        .sum();
    pos + neg
}

/// Pinball objective at quantile level `tau`.
pub fn pinball_objective(params: &ModelParams, triples: &[WeightedTriple], tau: f64) -> f64 {
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
    triples
        .iter()
        .map(|t| pinball_term(params, t, tau, None))
        .sum()
}

/// Full parameter-shaped gradient for a batch.
///
/// For the pinball objective the `negatives` slice is ignored.
pub fn gradient(
    params: &ModelParams,
    objective: Objective,
    positives: &[WeightedTriple],
    negatives: &[WeightedTriple],
) -> Gradients {
    let mut grads = Gradients::zeros_like(params);
    match objective {
        Objective::Mse { neg_weight } => {
            for t in positives {
                sq_residual_term(params, t, t.confidence(), 1.0, Some(&mut grads));
            }
            for t in negatives {
                sq_residual_term(params, t, 0.0, neg_weight, Some(&mut grads));
            }
        }
        Objective::Pinball { tau } => {
            assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
            for t in positives {
                pinball_term(params, t, tau, Some(&mut grads));
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unkge::ScoreMapping;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn wt(h: u32, r: u32, t: u32, c: f64) -> WeightedTriple {
        WeightedTriple::new(h, r, t, c).unwrap()
    }

    /// Model whose only free knob is the prediction on (0, 0, 1).
    fn model_predicting(m_target: f64) -> ModelParams {
        // logit(m) via b with zero embeddings' raw score.
        let mut params = ModelParams {
            entity_emb: Matrix::from_vec(2, 2, vec![0.0; 4]),
            relation_emb: Matrix::from_vec(1, 2, vec![0.0; 2]),
            w: 1.0,
            b: 0.0,
            mapping: ScoreMapping::Logistic,
        };
        params.b = (m_target / (1.0 - m_target)).ln();
        params
    }

    #[test]
    fn mse_zero_on_perfect_predictions() {
        let params = model_predicting(0.6);
        let pos = vec![wt(0, 0, 1, 0.6)];
        assert_relative_eq!(mse_objective(&params, &pos, &[], 0.02), 0.0, epsilon = 1e-24);
    }

    #[test]
    fn mse_single_positive_residual() {
        let params = model_predicting(0.6);
        let pos = vec![wt(0, 0, 1, 0.8)];
        assert_relative_eq!(mse_objective(&params, &pos, &[], 0.02), 0.04, epsilon = 1e-12);
    }

    #[test]
    fn mse_single_weighted_negative() {
        let params = model_predicting(0.5);
        let neg = vec![wt(0, 0, 1, 0.0)];
        assert_relative_eq!(mse_objective(&params, &[], &neg, 0.02), 0.005, epsilon = 1e-12);
    }

    #[test]
    fn pinball_zero_at_target() {
        let params = model_predicting(0.31);
        let triples = vec![wt(0, 0, 1, 0.31)];
        assert_relative_eq!(pinball_objective(&params, &triples, 0.9), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinball_is_half_absolute_error_at_median() {
        let params = model_predicting(0.5);
        let triples = vec![wt(0, 0, 1, 0.8)];
        assert_relative_eq!(pinball_objective(&params, &triples, 0.5), 0.15, epsilon = 1e-12);
    }

    #[test]
    fn pinball_underprediction_at_high_tau() {
        // tau = 0.9, M = 0.5, c = 0.8 -> 0.9 * 0.3
        let params = model_predicting(0.5);
        let triples = vec![wt(0, 0, 1, 0.8)];
        assert_relative_eq!(pinball_objective(&params, &triples, 0.9), 0.27, epsilon = 1e-12);
    }

    #[test]
    fn pinball_slope_values() {
        assert_eq!(pinball_dl_dm(0.3, 0.5, 0.9), -0.9);
        assert_relative_eq!(pinball_dl_dm(0.7, 0.5, 0.9), 0.1, epsilon = 1e-15);
        assert_eq!(pinball_dl_dm(0.5, 0.5, 0.9), 0.0);
    }

    #[test]
    fn zero_residual_batch_has_zero_gradient() {
        let params = model_predicting(0.6);
        let pos = vec![wt(0, 0, 1, 0.6)];
        let g = gradient(&params, Objective::Mse { neg_weight: 0.02 }, &pos, &[]);
        assert!(g.entity.iter().all(|&v| v == 0.0));
        assert!(g.relation.iter().all(|&v| v == 0.0));
        assert_eq!(g.w, 0.0);
        assert_eq!(g.b, 0.0);
    }

    fn random_model(dim: usize, rng: &mut impl Rng, mapping: ScoreMapping) -> ModelParams {
        let n_e = 4;
        let n_r = 2;
        let entity = (0..n_e * dim).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let relation = (0..n_r * dim).map(|_| rng.gen_range(-0.8..0.8)).collect();
        ModelParams {
            entity_emb: Matrix::from_vec(n_e, dim, entity),
            relation_emb: Matrix::from_vec(n_r, dim, relation),
            w: rng.gen_range(0.5..1.5),
            b: rng.gen_range(-0.3..0.3),
            mapping,
        }
    }

    /// Central finite differences over every parameter coordinate.
    fn numeric_gradient(
        params: &ModelParams,
        objective: Objective,
        pos: &[WeightedTriple],
        neg: &[WeightedTriple],
        step: f64,
    ) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let eval = |p: &ModelParams| match objective {
            Objective::Mse { neg_weight } => mse_objective(p, pos, neg, neg_weight),
            Objective::Pinball { tau } => pinball_objective(p, pos, tau),
        };
        let diff_at = |mutate: &dyn Fn(&mut ModelParams, f64)| {
            let mut hi = params.clone();
            mutate(&mut hi, step);
            let mut lo = params.clone();
            mutate(&mut lo, -step);
            (eval(&hi) - eval(&lo)) / (2.0 * step)
        };
        let n_e = params.entity_emb.as_slice().len();
        let n_r = params.relation_emb.as_slice().len();
        let entity = (0..n_e)
            .map(|i| diff_at(&|p: &mut ModelParams, d: f64| p.entity_emb.as_mut_slice()[i] += d))
            .collect();
        let relation = (0..n_r)
            .map(|i| diff_at(&|p: &mut ModelParams, d: f64| p.relation_emb.as_mut_slice()[i] += d))
            .collect();
        let w = diff_at(&|p: &mut ModelParams, d: f64| p.w += d);
        let b = diff_at(&|p: &mut ModelParams, d: f64| p.b += d);
        (entity, relation, w, b)
    }

    fn assert_close_to_numeric(analytic: f64, numeric: f64) {
        let tol = (1e-3 * numeric.abs()).max(1e-6);
        assert!(
            (analytic - numeric).abs() <= tol,
            "analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn gradient_matches_finite_differences_small_case() {
        let mut rng = crate::seed::seeded_rng(7);
        for draw in 0..6 {
            let mapping = if draw % 2 == 0 {
                ScoreMapping::Logistic
            } else {
                ScoreMapping::Rectified
            };
            let params = random_model(2, &mut rng, mapping);
            let pos = vec![wt(0, 0, 1, 0.7), wt(2, 1, 3, 0.2)];
            let neg = vec![wt(1, 0, 2, 0.0)];
            for objective in [
                Objective::Mse { neg_weight: 0.1 },
                Objective::Pinball { tau: 0.65 },
            ] {
                let g = gradient(&params, objective, &pos, &neg);
                let (ne, nr, nw, nb) = numeric_gradient(&params, objective, &pos, &neg, 1e-5);
                for (a, n) in g.entity.iter().zip(&ne) {
                    assert_close_to_numeric(*a, *n);
                }
                for (a, n) in g.relation.iter().zip(&nr) {
                    assert_close_to_numeric(*a, *n);
                }
                assert_close_to_numeric(g.w, nw);
                assert_close_to_numeric(g.b, nb);
            }
        }
    }

    #[test]
    fn self_loop_gradient_matches_finite_differences() {
        let mut rng = crate::seed::seeded_rng(11);
        let params = random_model(3, &mut rng, ScoreMapping::Logistic);
        let pos = vec![wt(1, 0, 1, 0.4)];
        let objective = Objective::Mse { neg_weight: 0.02 };
        let g = gradient(&params, objective, &pos, &[]);
        let (ne, _, _, _) = numeric_gradient(&params, objective, &pos, &[], 1e-5);
        for (a, n) in g.entity.iter().zip(&ne) {
            assert_close_to_numeric(*a, *n);
        }
    }

    #[test]
    fn clear_resets_touched_rows_only_but_fully() {
        let params = model_predicting(0.6);
        let pos = vec![wt(0, 0, 1, 0.9)];
        let mut g = Gradients::zeros_like(&params);
        sq_residual_term(&params, &pos[0], 0.9, 1.0, Some(&mut g));
        assert_eq!(g.touched_entities(), &[0, 1]);
        g.clear();
        assert!(g.entity.iter().all(|&v| v == 0.0));
        assert!(g.touched_entities().is_empty());
        assert_eq!(g.b, 0.0);
    }
}
