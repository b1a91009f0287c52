use std::path::PathBuf;

use thiserror::Error;

use crate::region::AnatomicalRegion;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown anatomical region label `{0}`")]
    UnknownLabel(String),
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    RatioSumInvalid([f64; 3]),
    #[error("class {0} has fewer than 3 records and cannot be split")]
    EmptyClass(AnatomicalRegion),
    #[error("record `{0}` already has a split assigned")]
    AlreadyAssigned(String),
    #[error("cannot write to output directory {path}: {source}")]
    UnwritableOutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("projection with norm below epsilon at row {0}")]
    DegenerateProjection(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no anchor has a positive partner")]
    NoPositivesAnywhere,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NaNLoss { epoch: usize, step: usize },
    #[error("a batch of {batch} views needs about {estimate_mb} MB of activations, above the {limit_mb} MB limit; use a smaller batch_size")]
    OutOfMemoryHint { batch: usize, estimate_mb: u64, limit_mb: u64 },
    #[error("backbone parameters changed during linear-head training")]
    BackboneMutated,
    #[error("fraction {fraction} selects {budget} images but {classes} classes need one each")]
    FractionTooSmall { fraction: f64, budget: usize, classes: usize },
    #[error("split `{0}` contains no records")]
    EmptySplit(String),
    #[error("prediction sets disagree on record ids: {0}")]
    IdMismatch(String),
    #[error("no reference label for record `{0}`")]
    MissingLabel(String),
    #[error("verdict for record `{0}` which was not flagged as a mismatch")]
    VerdictForUnflaggedRecord(String),
    #[error("unknown audit candidate `{0}`")]
    UnknownCandidate(String),
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("class index {0} is outside the 14-region taxonomy")]
    InvalidClass(usize),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Nn(#[from] radreg_nn::NnError),
}

impl Error {
    /// Stable snake_case identifier for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "missing_file",
            Error::MalformedRow { .. } => "malformed_row",
            Error::UnknownLabel(_) => "unknown_label",
            Error::UnknownSplit(_) => "unknown_split",
            Error::DuplicateId(_) => "duplicate_id",
            Error::RatioSumInvalid(_) => "ratio_sum_invalid",
            Error::EmptyClass(_) => "empty_class",
            Error::AlreadyAssigned(_) => "already_assigned",
            Error::UnwritableOutputDir { .. } => "unwritable_output_dir",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DegenerateProjection(_) => "degenerate_projection",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoPositivesAnywhere => "no_positives_anywhere",
            Error::NaNLoss { .. } => "nan_loss",
            Error::OutOfMemoryHint { .. } => "out_of_memory_hint",
            Error::BackboneMutated => "backbone_mutated",
            Error::FractionTooSmall { .. } => "fraction_too_small",
            Error::EmptySplit(_) => "empty_split",
            Error::IdMismatch(_) => "id_mismatch",
            Error::MissingLabel(_) => "missing_label",
            Error::VerdictForUnflaggedRecord(_) => "verdict_for_unflagged_record",
            Error::UnknownCandidate(_) => "unknown_candidate",
            Error::InvalidVerdict(_) => "invalid_verdict",
            Error::InvalidClass(_) => "invalid_class",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Image(_) => "image",
            Error::Nn(_) => "nn",
        }
    }

    /// Whether the failure stems from the caller's input rather than from a
    /// fault during computation.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateProjection(_)
                | Error::ShapeMismatch(_)
                | Error::NoPositivesAnywhere
                | Error::NaNLoss { .. }
                | Error::BackboneMutated
                | Error::Io(_)
                | Error::Nn(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
