use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("unsupported channel layout in {path}: {detail}")]
    ChannelCount { path: PathBuf, detail: String },

    #[error("image dimensions {got:?} do not match {expected:?}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
        context: &'static str,
    },

    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),

    #[error("unknown catalog `{0}`")]
    UnknownCatalog(String),

    #[error("operation id {id} is not part of the `{catalog}` catalog")]
    UnknownOperation { id: u16, catalog: String },

    #[error("the stop operation terminates an episode and cannot be applied to an image")]
    StopNotApplicable,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model file {path}: {detail}")]
    ModelFormat { path: PathBuf, detail: String },

    #[error("model expects {model_actions} actions but catalog `{catalog}` has {catalog_actions}")]
    ModelCatalogMismatch {
        model_actions: usize,
        catalog: String,
        catalog_actions: usize,
    },

    #[error("evaluator shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at batch index {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("search error: {0}")]
    Search(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

fn context_suffix(context: &&'static str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
