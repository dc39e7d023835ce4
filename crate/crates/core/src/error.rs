use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scene too crowded: could not place object {object} after {attempts} attempts")]
    SceneTooCrowded { object: usize, attempts: usize },

    #[error("{}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("non-finite forward at layer {layer}")]
    NonFiniteForward { layer: usize },

    #[error("non-finite gradient at layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("scene {scene}: {source}")]
    InScene {
        scene: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable kebab-case identifier of the variant; `InScene` reports its
    /// source's code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "invalid-params",
            Error::Shape(_) => "shape",
            Error::SceneTooCrowded { .. } => "scene-too-crowded",
            Error::Parse { .. } => "parse",
            Error::MissingFile { .. } => "missing-file",
            Error::NonFiniteForward { .. } => "non-finite-forward",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::Diverged { .. } => "diverged",
            Error::InScene { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_scene(scene: &str, source: Error) -> Self {
        Error::InScene {
            scene: scene.to_string(),
            source: Box::new(source),
        }
    }
}
