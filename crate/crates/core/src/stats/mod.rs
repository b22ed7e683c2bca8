//! Fold-level model comparison and confusion-matrix utilities.

mod confusion;
mod student;
mod ttest;

pub use confusion::{most_confused_submatrix, ConfusionMatrix, ConfusionSummary, Submatrix};
pub use student::{regularized_incomplete_beta, student_t_cdf, student_t_quantile, two_sided_p};
pub use ttest::{cohens_d, corrected_paired_ttest, corrected_ttest_from_summary, FoldScores, TTestResult};
