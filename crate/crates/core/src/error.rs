use thiserror::Error;

/// Errors produced anywhere in the simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model validity: {0}")]
    ModelValidity(String),
    #[error("unsupported coding: {0}")]
    UnsupportedCoding(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("degenerate edge: samples do not rise")]
    DegenerateEdge,
    #[error("raw fraction {psi} outside sensitive range [{lo}, {hi}]")]
    OutOfSensitiveRange { psi: f64, lo: f64, hi: f64 },
    #[error("unsupported tap count {0} (expected 4)")]
    UnsupportedTapCount(usize),
    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),
    #[error("calibration failed: {invalid} of {total} pixels invalid ({fraction:.1}% > 20%)", fraction = 100.0 * *.invalid as f64 / *.total as f64)]
    CalibrationFailure { invalid: usize, total: usize },
    #[error("reference depth {reference} m is {distance} m from the depth of interest; the sensitive half-range is {half_range} m")]
    ReferenceOutOfRange {
        reference: f64,
        distance: f64,
        half_range: f64,
    },
    #[error("incompatible calibration: {0}")]
    Compatibility(String),
    #[error("no valid pixels to evaluate")]
    EmptyMetric,
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
