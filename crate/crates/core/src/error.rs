use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no input frames found in {0}")]
    EmptyInput(PathBuf),

    #[error("{file}: frame is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        file: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },

    #[error("{file}: {message}")]
    Unreadable { file: String, message: String },

    #[error("frame too small: {0}x{1} (minimum 16x16)")]
    FrameTooSmall(usize, usize),

    #[error("invalid frame buffer: {0}")]
    InvalidFrame(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("labels line {line}: {message}")]
    Labels { line: usize, message: String },

    #[error("scene script: {0}")]
    Script(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("stage {stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
