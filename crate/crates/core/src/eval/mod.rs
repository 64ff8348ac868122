//! Fairness, diversity and alignment metrics plus the tests used to compare
//! methods.

mod bootstrap;
mod embedding;
mod labels;
mod mann_whitney;
mod parity;
mod report;
mod run;

pub use bootstrap::{bootstrap_sp_test, bootstrap_sp_test_with};
pub use embedding::{
    clip_alignment_mean, frechet_distance, frechet_from_moments, trace_diversity, ClipAlignment,
    EmbeddingSet,
};
pub use labels::LabelFile;
pub use mann_whitney::{mann_whitney_one_sided, mann_whitney_with, MwMethod, EXACT_LIMIT};
pub use parity::{
    empirical_distribution, merge_race_for_bls, statistical_parity, BLS_RACES, FAIRFACE_RACES,
};
pub use report::TestReport;
pub use run::{evaluate_run, CategoryReport, EvaluationReport, LabelSource, UNLABELED};
