//! Prediction intervals for uncertain-knowledge-graph embedding models.
//!
//! An uncertain knowledge graph attaches a confidence score in `[0, 1]`
//! to every triple. Embedding models trained on such graphs predict a
//! single score for an unseen triple; this crate wraps those point
//! predictions in inductive conformal prediction so that each query
//! comes with an interval guaranteed to contain the true score at a
//! user-chosen confidence level.
//!
//! The pieces, bottom to top:
//!
//! - [`dataset`]: TSV parsing, score normalization, vocabulary encoding,
//!   seeded train/calibration/test splits and negative corruption.
//! - [`unkge`]: trilinear embedding models with a logistic or rectified
//!   score mapping, squared-error and pinball objectives with analytic
//!   gradients, minibatch training with early stopping, and a
//!   semi-supervised variant driven by pseudo-labels.
//! - [`conformal`]: nonconformity measures (absolute and
//!   entropy-normalized residuals), calibration artifacts, quantile
//!   thresholds and interval construction.
//! - [`baselines`]: the parametric t-interval over calibration
//!   confidences and quantile-regression interval pairs.
//! - [`evaluation`]: coverage, sharpness, conditionality bins, sweeps
//!   and CSV/JSON-lines report emission.
//! - [`testbed`]: planted-model generators and independent oracles
//!   (grid rank-count membership, Monte Carlo coverage) used to verify
//!   the conformal machinery.
//!
//! The `unkgcp` binary in the companion crate drives these modules as a
//! pipeline; the guide under `book/` walks through the concepts with
//! runnable snippets.

pub mod baselines;
pub mod conformal;
pub mod dataset;
pub mod evaluation;
pub mod seed;
pub mod testbed;
pub mod unkge;
