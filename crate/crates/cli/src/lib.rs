//! Library side of the pipeline CLI: corpus synthesis, dataset rendering,
//! stage training, generation, evaluation and retrieval, all reproducible
//! from (config, seed, manifest).

pub mod config;
pub mod manifest;
pub mod ops;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("stage dependency: {0}")]
    StageDependency(String),
    #[error("training error: {0}")]
    Train(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Lang(#[from] gencad_core::lang::LangError),
    #[error(transparent)]
    Geom(#[from] gencad_core::geom::GeomError),
    #[error(transparent)]
    Img(#[from] gencad_core::img::ImgError),
    #[error(transparent)]
    Nn(#[from] gencad_nn::NnError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
