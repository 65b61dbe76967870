//! Uncertain-KG embedding models.
//!
//! A model scores a triple `(h, r, t)` with the trilinear product of the
//! head, relation and tail embeddings, then maps that raw score into
//! `[0, 1]` either through a learnable logistic (`w`, `b`) or through a
//! rectified linear clamp.

mod checkpoint;
mod objective;
mod train;

pub use checkpoint::{
    checkpoint_bytes, fingerprint, load_checkpoint, read_checkpoint, save_checkpoint,
    write_checkpoint, CheckpointError, Fingerprint,
};
pub use objective::{gradient, mse_objective, pinball_objective, Gradients, Objective};
pub use train::{
    pseudo_label, train, train_semi, EpochStats, OptimizerKind, SemiConfig, TrainConfig,
    TrainError, TrainObjective, TrainOutcome,
};

use rand::Rng;

use crate::seed::seeded_rng;

/// Dense row-major matrix of `f64`, used for embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data. Panics if the length is not `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// How a raw trilinear score is mapped into a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMapping {
    /// `sigmoid(w * raw + b)`; output lies strictly inside `(0, 1)`.
    Logistic,
    /// `clamp(w * raw + b, 0, 1)`; output may sit exactly on the bounds.
    Rectified,
}

/// Embedding tables plus the scalar score-mapping parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub entity_emb: Matrix,
    pub relation_emb: Matrix,
    pub w: f64,
    pub b: f64,
    pub mapping: ScoreMapping,
}

impl ModelParams {
    /// Fresh parameters: entries uniform in `(-0.5/sqrt(d), 0.5/sqrt(d))`
    /// so initial raw scores are O(1), with `w = 1` and `b = 0` so the
    /// logistic starts unsaturated.
    pub fn init(
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        mapping: ScoreMapping,
        seed: u64,
    ) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        let scale = 0.5 / (dim as f64).sqrt();
        let mut rng = seeded_rng(seed);
        let mut fill = |rows: usize| -> Matrix {
            let data = (0..rows * dim)
                .map(|_| rng.gen_range(-scale..scale))
                .collect();
            Matrix::from_vec(rows, dim, data)
        };
        ModelParams {
            entity_emb: fill(n_entities),
            relation_emb: fill(n_relations),
            w: 1.0,
            b: 0.0,
            mapping,
        }
    }

    pub fn dim(&self) -> usize {
        self.entity_emb.cols()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_emb.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_emb.rows()
    }

    /// Trilinear score `sum_j e_h[j] * e_t[j] * r[j]`.
    ///
    /// Panics if an index is out of range.
    pub fn raw_score(&self, h: u32, r: u32, t: u32) -> f64 {
        let eh = self.entity_emb.row(h as usize);
        let et = self.entity_emb.row(t as usize);
        let er = self.relation_emb.row(r as usize);
        eh.iter()
            .zip(et)
            .zip(er)
            .map(|((&a, &b), &c)| a * b * c)
            .sum()
    }

    /// Confidence prediction in `[0, 1]`.
    pub fn predict(&self, h: u32, r: u32, t: u32) -> f64 {
        let z = self.w * self.raw_score(h, r, t) + self.b;
        match self.mapping {
            ScoreMapping::Logistic => stable_sigmoid(z),
            ScoreMapping::Rectified => z.clamp(0.0, 1.0),
        }
    }

    /// All entries, `w` and `b` finite.
    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.b.is_finite()
            && self.entity_emb.iter().all(|v| v.is_finite())
            && self.relation_emb.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable sigmoid, kept strictly inside `(0, 1)` even where
/// the naive expression would round to an endpoint.
fn stable_sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny_model(entity_rows: Vec<Vec<f64>>, relation_rows: Vec<Vec<f64>>, mapping: ScoreMapping) -> ModelParams {
        let dim = entity_rows[0].len();
        let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<_>>();
        ModelParams {
            entity_emb: Matrix::from_vec(entity_rows.len(), dim, flat(&entity_rows)),
            relation_emb: Matrix::from_vec(relation_rows.len(), dim, flat(&relation_rows)),
            w: 1.0,
            b: 0.0,
            mapping,
        }
    }

    #[test]
    fn raw_score_reduces_to_relation_sum_for_unit_entities() {
        let m = tiny_model(
            vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]],
            vec![vec![0.1, 0.2, 0.3]],
            ScoreMapping::Logistic,
        );
        assert_relative_eq!(m.raw_score(0, 0, 1), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn raw_score_zero_relation_vector() {
        let m = tiny_model(
            vec![vec![3.0, -2.0], vec![0.5, 4.0]],
            vec![vec![0.0, 0.0]],
            ScoreMapping::Logistic,
        );
        assert_eq!(m.raw_score(0, 0, 1), 0.0);
        assert_eq!(m.raw_score(1, 0, 0), 0.0);
    }

    #[test]
    fn raw_score_hand_computed() {
        // 1*3*0.5 + 2*4*0.25 = 3.5
        let m = tiny_model(
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![vec![0.5, 0.25]],
            ScoreMapping::Logistic,
        );
        assert_relative_eq!(m.raw_score(0, 0, 1), 3.5, epsilon = 1e-12);
    }

    #[test]
    #[should_panic]
    fn raw_score_panics_out_of_range() {
        let m = tiny_model(
            vec![vec![1.0], vec![1.0]],
            vec![vec![1.0]],
            ScoreMapping::Logistic,
        );
        m.raw_score(0, 0, 2);
    }

    #[test]
    fn logistic_at_zero_is_half() {
        let m = tiny_model(
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.0]],
            ScoreMapping::Logistic,
        );
        assert_relative_eq!(m.predict(0, 0, 1), 0.5);
    }

    #[test]
    fn rectified_clamps_above_one() {
        let mut m = tiny_model(
            vec![vec![1.0], vec![1.0]],
            vec![vec![1.7]],
            ScoreMapping::Rectified,
        );
        m.w = 1.0;
        assert_eq!(m.predict(0, 0, 1), 1.0);
    }

    #[test]
    fn logistic_of_ln3_is_three_quarters() {
        let m = tiny_model(
            vec![vec![1.0], vec![1.0]],
            vec![vec![3f64.ln()]],
            ScoreMapping::Logistic,
        );
        assert_relative_eq!(m.predict(0, 0, 1), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn permuting_entity_rows_preserves_raw_scores() {
        let m = tiny_model(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]],
            vec![vec![0.5, 0.25]],
            ScoreMapping::Logistic,
        );
        // Relabel entities by the permutation 0->2, 1->0, 2->1.
        let perm = [2u32, 0, 1];
        let mut permuted = m.clone();
        for (old, &new) in perm.iter().enumerate() {
            let row = m.entity_emb.row(old).to_vec();
            permuted.entity_emb.row_mut(new as usize).copy_from_slice(&row);
        }
        for h in 0..3u32 {
            for t in 0..3u32 {
                assert_relative_eq!(
                    m.raw_score(h, 0, t),
                    permuted.raw_score(perm[h as usize], 0, perm[t as usize]),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let a = ModelParams::init(5, 2, 8, ScoreMapping::Logistic, 42);
        let b = ModelParams::init(5, 2, 8, ScoreMapping::Logistic, 42);
        assert_eq!(a, b);
        assert_eq!(a.w, 1.0);
        assert_eq!(a.b, 0.0);
        let scale = 0.5 / 8f64.sqrt();
        assert!(a.entity_emb.iter().all(|v| v.abs() < scale));
    }

    proptest! {
        #[test]
        fn predictions_stay_bounded(
            entries in proptest::collection::vec(-1e3f64..1e3, 6),
            w in -1e3f64..1e3,
            b in -1e3f64..1e3,
        ) {
            for mapping in [ScoreMapping::Logistic, ScoreMapping::Rectified] {
                let mut m = tiny_model(
                    vec![entries[0..3].to_vec(), entries[3..6].to_vec()],
                    vec![vec![1.0, -2.0, 0.5]],
                    mapping,
                );
                m.w = w;
                m.b = b;
                let p = m.predict(0, 0, 1);
                match mapping {
                    ScoreMapping::Logistic => prop_assert!(p > 0.0 && p < 1.0),
                    ScoreMapping::Rectified => prop_assert!((0.0..=1.0).contains(&p)),
                }
            }
        }
    }
}
