//! Dataset types, loaders and the synthetic generators used by the
//! acceptance workloads.

mod images;
mod schema;
mod synth;
mod tabular;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

pub use images::{encode_pgm, load_pgm, parse_pgm, to_bytes, write_pgm, write_pgm_dataset, ImageDataset, Pgm};
pub use schema::{Attribute, AttributeKind, AttributeSchema};
pub use synth::{synth_images, synth_tabular, SENSITIVE_AGREEMENT, CORRELATED_AGREEMENT};
pub use tabular::{
    estimate_priors, load_tabular, parse_tabular, to_csv, write_tabular, CellError, PriorTable, TabularDataset,
};

use crate::seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("{} invalid cell(s): {}", .0.len(), join(.0))]
    InvalidCells(Vec<CellError>),
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("{file}: {message}")]
    Pgm { file: String, message: String },
    #[error("{file}: size {actual:?} differs from first image {expected:?}")]
    DimensionMismatch { file: String, expected: (usize, usize), actual: (usize, usize) },
    #[error("cannot split: {0}")]
    Split(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn join(errors: &[CellError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

/// A dataset that can be restricted to a list of row indices.
pub trait Subset: Sized {
    fn len(&self) -> usize;
    fn subset(&self, indices: &[usize]) -> Self;
}

/// Seeded shuffled partition with `round(fraction * n)` training rows.
pub fn split_train_test<D: Subset>(dataset: &D, fraction: f64, seed: u64) -> Result<(D, D), DataError> {
    let n = dataset.len();
    if n < 2 {
        return Err(DataError::Split(format!("need at least 2 rows, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Split(format!("fraction {fraction} must lie strictly between 0 and 1")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::Split(format!("fraction {fraction} of {n} rows leaves one side empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_from_seed(seed));
    Ok((dataset.subset(&order[..n_train]), dataset.subset(&order[n_train..])))
}
