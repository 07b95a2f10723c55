//! Dependency graphs of triplets, fractional covers, and the
//! generalization-bound terms evaluated on a trained model.

mod bound;
mod cover;
mod graph;

pub use bound::{
    b_proxy, bound_report, complexity_term, generalization_bound, spectral_norm,
    worst_case_empirical_loss, BoundInputs, BoundReport, TieMode, WorstCaseLoss,
};
pub use cover::{
    check_cover, fractional_chromatic, CoverMethod, CoverResult, MAX_EXHAUSTIVE_NODES, MAX_SETS,
};
pub use graph::{build_dependency_graph, DependencyGraph};
