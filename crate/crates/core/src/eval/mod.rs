//! Clustering and ranking metrics plus the brute-force oracle.

mod metrics;
mod oracle;
mod ranking;

pub use metrics::{modularity_metric, nmi, one_hot, pairwise_f1, to_deterministic, HardAssignment};
pub use oracle::{
    assignment_probability, bruteforce_best, enumerate_assignments, expectation_conforming_gap, expected_hard_value,
    grid_minimum_check, literal_modularity_loss, modularity_loss, normalized_cut_loss, normalized_cut_two_node_closed_forms,
    simplex_grid, Assignments, BruteForce, Goal, GridMinimum, ENUMERATION_LIMIT, OPTIMUM_TOLERANCE,
};
pub use ranking::{hits_cutoff, ranking_metrics, RankingMetrics};
