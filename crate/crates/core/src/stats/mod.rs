//! Statistics used to relate features to memorability scores.

mod dist;
mod glm;
mod rank;
mod summary;
mod zscore;

pub use dist::{ln_gamma, normal_two_sided_p, regularized_incomplete_beta, student_t_two_sided_p};
pub use glm::{glm_gaussian, significance_stars, GlmFit, GlmTerm};
pub use rank::{average_ranks, correlate_table, pearson, spearman, ColumnCorrelation, CorrelationResult};
pub use summary::{group_summary, GroupStats};
pub use zscore::{zscore_columns, Standardizer};
