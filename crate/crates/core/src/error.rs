use std::path::PathBuf;

use thiserror::Error;

use crate::datamodel::{ClassId, ImageId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("class id {0} is outside the declared class universe")]
    UnknownClass(ClassId),

    #[error("image id {0} appears more than once in the image index")]
    DuplicateImageId(ImageId),

    #[error("detection score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("covariance diagonal entries must be positive")]
    CovarianceNotPositive,

    #[error("IoU threshold {0} must lie in [0, 1)")]
    InvalidTau(f64),

    #[error("precision-recall curve is empty: no detections and no ground truths")]
    EmptyCurve,

    #[error("LRP is undefined when there are no TPs, FPs or FNs")]
    DegenerateInstance,

    #[error("class {0} has no detections")]
    NoDetections(ClassId),

    #[error("calibrator has no model for class {0}")]
    MissingClassModel(ClassId),

    #[error("logit vector contains a non-finite value")]
    NonFiniteLogit,

    #[error("normalisation bounds require max > min")]
    DegenerateBounds,

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("synthetic spec is infeasible: {0}")]
    InfeasibleSpec(String),

    #[error("corrupted image {0} carries no severity")]
    MissingSeverity(ImageId),

    #[error("image {0} belongs to more than one split")]
    SplitOverlap(ImageId),

    #[error("no accept/reject decision for image {0}")]
    MissingDecisions(ImageId),

    #[error("{0}")]
    Config(String),
}

impl Error {
    /// Stable, machine-parsable identifier for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedFile(_) => "malformed_file",
            Error::UnknownClass(_) => "unknown_class",
            Error::DuplicateImageId(_) => "duplicate_image_id",
            Error::ScoreOutOfRange(_) => "score_out_of_range",
            Error::CovarianceNotPositive => "covariance_not_positive",
            Error::InvalidTau(_) => "invalid_tau",
            Error::EmptyCurve => "empty_curve",
            Error::DegenerateInstance => "degenerate_instance",
            Error::NoDetections(_) => "no_detections",
            Error::MissingClassModel(_) => "missing_class_model",
            Error::NonFiniteLogit => "non_finite_logit",
            Error::DegenerateBounds => "degenerate_bounds",
            Error::EmptySplit(_) => "empty_split",
            Error::InfeasibleSpec(_) => "infeasible_spec",
            Error::MissingSeverity(_) => "missing_severity",
            Error::SplitOverlap(_) => "split_overlap",
            Error::MissingDecisions(_) => "missing_decisions",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
