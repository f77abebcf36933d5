//! Nearest-timestamp alignment of images with parameter measurements and
//! the per-parameter labeled datasets built from it.

mod dictionary;
mod merge;

use thiserror::Error;

pub use dictionary::{
    build_dictionary, select_units, split_train_val, write_dataset_csv, DatasetRow, Dictionary,
    DictionarySummary, ParameterSummary, UnitChoice, UnitSelection,
};
pub use merge::{asof_merge, AlignedSample, MergeConfig, MergeDirection, MergeOutput, MergeStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("{what} for site {site_code} are not sorted by time at index {index}")]
    UnsortedInput {
        what: &'static str,
        site_code: String,
        index: usize,
    },
    #[error("no parameter samples to select units from")]
    EmptyInput,
    #[error("tolerance must be non-negative")]
    InvalidTolerance,
    #[error("fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
}
