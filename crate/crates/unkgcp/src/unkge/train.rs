//! Minibatch training with early stopping, plus the semi-supervised
//! variant that mixes pseudo-labeled corruptions into each batch.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::dataset::{
    carve_validation, corrupt_negatives, corrupt_one, DatasetError, SplitDataset, WeightedTriple,
};
use crate::seed::{named_rng, sub_seed};
use crate::unkge::objective::{pinball_term, sq_residual_term, Gradients};
use crate::unkge::{Matrix, ModelParams, ScoreMapping};

/// Fraction of the training part held out for the early-stopping
/// criterion. Calibration and test data stay untouched by training.
const VALIDATION_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    /// Adam with the usual constants.
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Schedule and mixing parameters for semi-supervised training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiConfig {
    /// First epoch at which the pseudo-labeled pool is used.
    pub t_new_semi: usize,
    /// Epoch after which pool and labels are frozen.
    pub t_semi_train: usize,
    /// Fraction of the batch size mixed in as pseudo-labeled examples.
    pub m_semi_fraction: f64,
    /// Number of corrupted queries kept in the pool.
    pub pool_size: usize,
}

impl SemiConfig {
    /// The published schedule: label from epoch 20, freeze at 30, mix
    /// 0.8 x batch. The pool defaults to a desk-scale size; raise it to
    /// taste (the reference setting is 10^7).
    pub fn benchmark_defaults() -> Self {
        SemiConfig {
            t_new_semi: 20,
            t_semi_train: 30,
            m_semi_fraction: 0.8,
            pool_size: 100_000,
        }
    }

    /// Pseudo-labeled examples mixed into each batch.
    pub fn batch_share(&self, batch_size: usize) -> usize {
        (self.m_semi_fraction * batch_size as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dim: usize,
    pub batch_size: usize,
    pub neg_per_pos: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Weight on the squared score of corrupted negatives.
    pub neg_weight: f64,
    pub mapping: ScoreMapping,
    pub semi: Option<SemiConfig>,
}

impl TrainConfig {
    /// Published defaults: learning rate 0.001, dimension 128, ten
    /// negatives per positive, Adam, patience 200.
    pub fn benchmark_defaults() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            dim: 128,
            batch_size: 128,
            neg_per_pos: 10,
            patience: 200,
            max_epochs: 1000,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            neg_weight: 0.02,
            mapping: ScoreMapping::Logistic,
            semi: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("neg_weight", self.neg_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("neg_per_pos", self.neg_per_pos),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::Config(
                "patience must not exceed max_epochs".to_string(),
            ));
        }
        if let OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(TrainError::Config("invalid Adam constants".to_string()));
            }
        }
        if let Some(semi) = &self.semi {
            if semi.t_new_semi >= semi.t_semi_train || semi.t_semi_train > self.max_epochs {
                return Err(TrainError::Config(
                    "require t_new_semi < t_semi_train <= max_epochs".to_string(),
                ));
            }
            if !(semi.m_semi_fraction > 0.0 && semi.m_semi_fraction <= 1.0) {
                return Err(TrainError::Config(
                    "m_semi_fraction must lie in (0, 1]".to_string(),
                ));
            }
            if semi.pool_size == 0 {
                return Err(TrainError::Config("pool_size must be >= 1".to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainObjective {
    Mse,
    Pinball(f64),
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_criterion: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation criterion.
    pub params: ModelParams,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Label a pool of query triples with the model's own predictions.
pub fn pseudo_label(params: &ModelParams, pool: &[(u32, u32, u32)]) -> Vec<WeightedTriple> {
    pool.iter()
        .map(|&(h, r, t)| {
            WeightedTriple::new(h, r, t, params.predict(h, r, t))
                .expect("predict output lies in [0, 1]")
        })
        .collect()
}

/// Train on the proper training part of `data` and return the best
/// parameters under the early-stopping criterion.
pub fn train(
    data: &SplitDataset,
    cfg: &TrainConfig,
    objective: TrainObjective,
) -> Result<TrainOutcome, TrainError> {
    run_training(data, cfg, objective, None)
}

/// Semi-supervised training. With no [`SemiConfig`] present this is
/// exactly [`train`] with the squared-error objective.
pub fn train_semi(data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    match &cfg.semi {
        None => run_training(data, cfg, TrainObjective::Mse, None),
        Some(semi) => run_training(data, cfg, TrainObjective::Mse, Some(*semi)),
    }
}

enum Optimizer {
    Sgd,
    Adam {
        m_entity: Matrix,
        v_entity: Matrix,
        m_relation: Matrix,
        v_relation: Matrix,
        m_w: f64,
        v_w: f64,
        m_b: f64,
        v_b: f64,
        step: u64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => Optimizer::Adam {
                m_entity: Matrix::zeros(params.n_entities(), params.dim()),
                v_entity: Matrix::zeros(params.n_entities(), params.dim()),
                m_relation: Matrix::zeros(params.n_relations(), params.dim()),
                v_relation: Matrix::zeros(params.n_relations(), params.dim()),
                m_w: 0.0,
                v_w: 0.0,
                m_b: 0.0,
                v_b: 0.0,
                step: 0,
                beta1,
                beta2,
                epsilon,
            },
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for &row in grads.touched_entities() {
                    let p = params.entity_emb.row_mut(row as usize);
                    let g = grads.entity.row(row as usize);
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                }
                for &row in grads.touched_relations() {
                    let p = params.relation_emb.row_mut(row as usize);
                    let g = grads.relation.row(row as usize);
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * gv;
                    }
                }
                params.w -= lr * grads.w;
                params.b -= lr * grads.b;
            }
            Optimizer::Adam {
                m_entity,
                v_entity,
                m_relation,
                v_relation,
                m_w,
                v_w,
                m_b,
                v_b,
                step,
                beta1,
                beta2,
                epsilon,
            } => {
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + *epsilon);
                };
                // Moments for untouched rows are left as-is; their
                // gradients are exactly zero this step.
                for &row in grads.touched_entities() {
                    let i = row as usize;
                    let p = params.entity_emb.row_mut(i);
                    let g = grads.entity.row(i);
                    let m = m_entity.row_mut(i);
                    let v = v_entity.row_mut(i);
                    for j in 0..p.len() {
                        update(&mut p[j], &mut m[j], &mut v[j], g[j]);
                    }
                }
                for &row in grads.touched_relations() {
                    let i = row as usize;
                    let p = params.relation_emb.row_mut(i);
                    let g = grads.relation.row(i);
                    let m = m_relation.row_mut(i);
                    let v = v_relation.row_mut(i);
                    for j in 0..p.len() {
                        update(&mut p[j], &mut m[j], &mut v[j], g[j]);
                    }
                }
                update(&mut params.w, m_w, v_w, grads.w);
                update(&mut params.b, m_b, v_b, grads.b);
            }
        }
    }
}

fn run_training(
    data: &SplitDataset,
    cfg: &TrainConfig,
    objective: TrainObjective,
    semi: Option<SemiConfig>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if let TrainObjective::Pinball(tau) = objective {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(TrainError::Config(format!("tau {tau} must lie in (0, 1)")));
        }
    }
    if data.train.is_empty() {
        return Err(TrainError::Config("training part is empty".to_string()));
    }
    if semi.is_some() && !matches!(objective, TrainObjective::Mse) {
        return Err(TrainError::Config(
            "semi-supervised training uses the squared-error objective".to_string(),
        ));
    }

    let (train_part, mut val) = carve_validation(&data.train, VALIDATION_FRACTION, cfg.seed);
    if val.is_empty() {
        val = train_part.clone();
    }
    let needs_negatives = matches!(objective, TrainObjective::Mse);
    let val_negatives = if needs_negatives {
        corrupt_negatives(
            &val,
            &data.vocab,
            cfg.neg_per_pos,
            sub_seed(cfg.seed, "val-negatives"),
        )?
    } else {
        Vec::new()
    };

    let n_entities = data.vocab.entity_count() as u32;
    let positive_set: HashSet<(u32, u32, u32)> = data.train.iter().map(|t| t.query()).collect();

    let mut params = ModelParams::init(
        data.vocab.entity_count(),
        data.vocab.relation_count(),
        cfg.dim,
        cfg.mapping,
        sub_seed(cfg.seed, "init"),
    );
    let mut optimizer = Optimizer::new(cfg.optimizer, &params);
    let mut grads = Gradients::zeros_like(&params);

    let mut shuffle_rng = named_rng(cfg.seed, "epochs");
    let mut negative_rng = named_rng(cfg.seed, "negatives");
    let mut pool_rng = named_rng(cfg.seed, "semi-pool");

    let mut pool: Vec<WeightedTriple> = Vec::new();
    // Count of negatives drawn across one epoch; the published
    // normalizer divides the semi and negative sums by the size of the
    // pseudo-labeled pool plus the negative set.
    let negatives_per_epoch = train_part.len() * cfg.neg_per_pos;

    let mut order: Vec<usize> = (0..train_part.len()).collect();
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut since_improvement = 0usize;
    let mut curve = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let semi_phase = semi.map_or(false, |sc| epoch >= sc.t_new_semi);
        if let Some(sc) = semi {
            if epoch >= sc.t_new_semi && epoch < sc.t_semi_train {
                let queries = sample_pool(
                    sc.pool_size,
                    &train_part,
                    &positive_set,
                    n_entities,
                    &mut pool_rng,
                );
                pool = pseudo_label(&params, &queries);
            }
        }
        let (neg_weight, semi_weight) = if semi_phase {
            let norm = 1.0 / ((pool.len() + negatives_per_epoch) as f64);
            (norm, norm)
        } else {
            (cfg.neg_weight, 0.0)
        };
        let semi_per_batch = match (semi_phase, semi) {
            (true, Some(sc)) => sc.batch_share(cfg.batch_size),
            _ => 0,
        };

        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let pos = &train_part[idx];
                batch_loss += match objective {
                    TrainObjective::Mse => {
                        sq_residual_term(&params, pos, pos.confidence(), 1.0, Some(&mut grads))
                    }
                    TrainObjective::Pinball(tau) => {
                        pinball_term(&params, pos, tau, Some(&mut grads))
                    }
                };
            }
            if needs_negatives {
                for &idx in chunk {
                    for _ in 0..cfg.neg_per_pos {
                        let neg = corrupt_one(
                            &train_part[idx],
                            &positive_set,
                            n_entities,
                            &mut negative_rng,
                        );
                        batch_loss +=
                            sq_residual_term(&params, &neg, 0.0, neg_weight, Some(&mut grads));
                    }
                }
            }
            for _ in 0..semi_per_batch {
                let pseudo = pool[pool_rng.gen_range(0..pool.len())];
                batch_loss += sq_residual_term(
                    &params,
                    &pseudo,
                    pseudo.confidence(),
                    semi_weight,
                    Some(&mut grads),
                );
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            epoch_loss += batch_loss;
            optimizer.apply(&mut params, &grads, cfg.learning_rate);
        }

        let val_criterion = validation_criterion(&params, objective, &val, &val_negatives);
        if !val_criterion.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        curve.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_criterion,
        });

        let improved = best
            .as_ref()
            .map_or(true, |(best_val, _, _)| val_criterion < *best_val);
        if improved {
            best = Some((val_criterion, params.clone(), epoch));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        curve,
        best_epoch,
    })
}

/// Early-stopping criterion: for the squared-error objective, the mean
/// of the positive validation MSE and the negative-sample validation
/// MSE; for pinball, the mean pinball loss on the validation part.
fn validation_criterion(
    params: &ModelParams,
    objective: TrainObjective,
    val: &[WeightedTriple],
    val_negatives: &[WeightedTriple],
) -> f64 {
    match objective {
        TrainObjective::Mse => {
            let pos: f64 = val
                .iter()
                .map(|t| sq_residual_term(params, t, t.confidence(), 1.0, None))
                .sum::<f64>()
                / val.len() as f64;
            let neg: f64 = val_negatives
                .iter()
                .map(|t| sq_residual_term(params, t, 0.0, 1.0, None))
                .sum::<f64>()
                / val_negatives.len().max(1) as f64;
            0.5 * (pos + neg)
        }
        TrainObjective::Pinball(tau) => {
            val.iter()
                .map(|t| pinball_term(params, t, tau, None))
                .sum::<f64>()
                / val.len() as f64
        }
    }
}

/// Uniformly sampled corrupted queries for the pseudo-label pool.
fn sample_pool<R: Rng>(
    pool_size: usize,
    train_part: &[WeightedTriple],
    positive_set: &HashSet<(u32, u32, u32)>,
    n_entities: u32,
    rng: &mut R,
) -> Vec<(u32, u32, u32)> {
    (0..pool_size)
        .map(|_| {
            let pos = &train_part[rng.gen_range(0..train_part.len())];
            corrupt_one(pos, positive_set, n_entities, rng).query()
        })
        .collect()
}
