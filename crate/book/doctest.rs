// The guide's code listings must never rot: each chapter is included
// here as a module doc, so `cargo test --doc -p unkgcp-book` compiles
// and runs every ```rust fence in the book. mdBook itself cannot run
// listings against the workspace crates, hence this shim.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("src/models.md")]
pub mod models {}
#[doc = include_str!("src/conformal.md")]
pub mod conformal {}
#[doc = include_str!("src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/verification.md")]
pub mod verification {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
