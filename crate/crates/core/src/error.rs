use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("no tissue: {0}")]
    NoTissue(String),

    #[error("optical density covariance is rank deficient (eigenvalue ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("stain matrix is singular")]
    SingularStain,

    #[error("could not place cutout {index} without overlap after {attempts} attempts")]
    Placement { index: usize, attempts: usize },

    #[error("both classes must be present")]
    MissingClass,

    #[error("comparison is not testable: {0}")]
    Degenerate(String),

    #[error("statistic undefined on too many resamples ({redraws} redraws)")]
    BootstrapExhausted { redraws: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NoTissue(_) => "no_tissue",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::SingularStain => "singular_stain",
            Error::Placement { .. } => "placement",
            Error::MissingClass => "missing_class",
            Error::Degenerate(_) => "degenerate",
            Error::BootstrapExhausted { .. } => "bootstrap_exhausted",
            Error::Parse(_) => "parse",
            Error::Io(_) | Error::File { .. } => "io",
            Error::Image(_) => "image",
            Error::Csv(_) => "csv",
        }
    }
}

impl Error {
    /// Attaches a path to an I/O error, for `map_err`.
    pub fn file(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::File { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
