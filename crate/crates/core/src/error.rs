use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("integration failed at t = {t}: drift is not finite")]
    IntegrationFailure { t: f64 },

    #[error("rejection sampler exhausted after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("total weight degeneracy: every log weight is -inf")]
    TotalDegeneracy,

    #[error("ensemble weights are not normalised")]
    NotNormalized,

    #[error("time {t} outside interval [{start}, {end}]")]
    OutsideInterval { t: f64, start: f64, end: f64 },

    #[error("normalisation undefined: sum of squared true-state norms is zero")]
    UndefinedNormalization,

    #[error("insufficient decay for fitting: cutoff index {n_cut} < 2")]
    InsufficientDecay { n_cut: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                found,
            })
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
