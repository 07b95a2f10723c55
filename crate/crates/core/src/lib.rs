//! Pairwise learning-to-rank for implicit feedback.
//!
//! Users and items are embedded jointly with a small feed-forward scorer
//! `g` over the element-wise product of their embeddings. Training
//! minimizes logistic surrogates of the pairwise misranking loss over
//! `(preferred item, user, non-preferred item)` triplets; inference keeps a
//! top-k list per user. The crate also ships the MAP evaluation protocol,
//! a Wilcoxon rank-sum test, and a computable generalization bound built on
//! exact proper fractional covers of the triplet dependency graph.

pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod ranker;
pub mod synthetic;
pub mod theory;
pub mod trainer;

pub use config::RunConfig;
pub use dataset::{CandidateSetting, Dataset, SplitSpec};
pub use error::{Error, Result};
pub use metrics::{ap_at, evaluate, wilcoxon_rank_sum, EvalOptions, EvalReport, RankSumTest};
pub use model::{Gradients, ModelConfig, ModelParams, Scorer};
pub use objective::{NormMode, ObjectiveSpec, Triplet, Variant};
pub use ranker::{topk_insertion, topk_sort, RankedList};
pub use theory::{CoverMethod, CoverResult, DependencyGraph};
pub use trainer::{train, AdamState, TrainConfig, TrainingLog};
