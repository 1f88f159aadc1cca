//! Dataset loaders, the model container and CSV reports.

mod container;
mod datasets;
mod report;

use thiserror::Error;

pub use container::{load_model, read_model, save_model, write_model, MAGIC, VERSION};
pub use datasets::{checksum_files, load_cifar10, load_idx, verify_checksum, DatasetKind};
pub use report::{format_number, read_sweep_csv, read_training_csv, write_csv, CoverageRow, CsvRow, DistortionRow, SweepRow, TrainingRow};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: wrong magic {found:#010x}, expected {expected:#010x}")]
    WrongMagic { path: String, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated { path: String, expected: u64, found: u64 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: length {len} is not a multiple of the {record}-byte record")]
    RecordLength { path: String, len: usize, record: usize },
    #[error("label {label} out of range")]
    BadLabel { label: u8 },
    #[error("checksum mismatch for {what}: recorded {recorded}, found {found}")]
    Checksum { what: String, recorded: String, found: String },
    #[error("not a model container: bad magic")]
    ModelMagic,
    #[error("unsupported model container version {0}")]
    ModelVersion(u32),
    #[error("malformed model container: {0}")]
    ModelLayout(String),
    #[error(transparent)]
    CsvFormat(#[from] csv::Error),
    #[error("{0}")]
    Csv(String),
}

pub(crate) fn file_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.display().to_string(),
        source,
    }
}
