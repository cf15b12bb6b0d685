//! Study bundles on disk, synthetic PSG generation, preparation and fold plans.

mod bundle;
mod folds;
mod prepare;
mod synth;

pub use bundle::{list_studies, load_bundle, load_dataset, save_bundle, ChannelFile, Manifest, StudyBundle};
pub use folds::{make_folds, FoldPlan};
pub use prepare::{bundle_from_epochs, epochs_from_bundle, prepare_study, zscore, EcgInput, PrepareOptions};
pub use synth::{native_rate, synth_dataset, synth_ecg, synth_study, SynthParams};

use std::path::PathBuf;

use crate::sigprep::SigprepError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("channel {channel}: expected {expected} samples, file holds {actual}")]
    LengthMismatch { channel: String, expected: usize, actual: usize },
    #[error("unknown modality tag {0:?}")]
    UnknownModality(String),
    #[error("duplicate channel {0}")]
    DuplicateChannel(String),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("bad labels: {0}")]
    Labels(String),
    #[error("channel {0} holds a non-finite sample")]
    NonFinite(String),
    #[error("need at least {k} studies for {k} folds, got {got}")]
    TooFewStudies { k: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Signal(#[from] SigprepError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            DataError::MissingFile(_) => 10,
            DataError::LengthMismatch { .. } => 11,
            DataError::UnknownModality(_) => 12,
            DataError::DuplicateChannel(_) => 13,
            DataError::Manifest(_) => 14,
            DataError::Labels(_) => 15,
            DataError::NonFinite(_) => 16,
            DataError::TooFewStudies { .. } => 17,
            DataError::Param(_) => 18,
            DataError::Signal(_) => 19,
            DataError::Io(_) => 20,
        }
    }
}
