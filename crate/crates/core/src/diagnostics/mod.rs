//! Evidence that the translator learned the bias rather than the signal:
//! oracle classifiers trained on unbiased data probe generated images
//! during translator training, and transformation grids visualize what
//! the generator rewrites.

pub mod chart;
pub mod grid;
pub mod oracle;
pub mod probe;

pub use grid::render_transformation_grid;
pub use oracle::{train_oracle, LabelKind, OracleClassifier, OracleConfig};
pub use probe::{measure_bias_signal_losses, ProbeCurve, ProbePoint};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("oracle expects {expected} classes but got {actual}")]
    DomainMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Debias(#[from] crate::debias::DebiasError),
    #[error(transparent)]
    Translator(#[from] crate::translator::TranslatorError),
    #[error("io error: {0}")]
    Io(String),
}
