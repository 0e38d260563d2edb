use std::path::PathBuf;

use composer_autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {what} at byte {offset}: {reason}")]
    Parse {
        what: &'static str,
        offset: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Diverged { step: usize, last_good: Option<PathBuf> },

    #[error(
        "retained graph uses {used} bytes, over the {budget}-byte budget; switch the meta mode to first_order_approx"
    )]
    MemoryBudget { used: usize, budget: usize },

    #[error(transparent)]
    Autodiff(#[from] AdError),
}

impl Error {
    /// Process exit code: 1 config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::MemoryBudget { .. } | Error::Autodiff(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
