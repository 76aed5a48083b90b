use std::path::PathBuf;

use thiserror::Error;

use crate::losses::Direction;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("no decodable images in {}", .0.display())]
    EmptyDataset(PathBuf),

    /// A caller broke an input contract (shape or size mismatch).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    /// `direction` is `None` for the hybrid classifier, which sees both domains.
    #[error("non-finite {term} loss at hop {hop}{}", direction_suffix(.direction))]
    NonFinite {
        term: &'static str,
        hop: usize,
        direction: Option<Direction>,
    },

    #[error("refusing to resume: checkpoint config hash {checkpoint} does not match {current}")]
    ResumeMismatch { checkpoint: String, current: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

fn direction_suffix(direction: &Option<Direction>) -> String {
    direction.map(|d| format!(" ({d})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::EmptyDataset(_) | Error::Contract(_) | Error::ResumeMismatch { .. }
        )
    }
}
