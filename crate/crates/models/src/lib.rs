//! The four learned stages of the pipeline: the command-sequence autoencoder
//! (CSR), the contrastive CAD-image embedder (CCIP), the latent diffusion
//! prior (CDP, plus a deterministic prior baseline), and the end-to-end
//! image-to-program generation path, with retrieval on top.
//!
//! Models are generic over the scalar; training runs at `f32` (see the
//! aliases below), gradient tests instantiate `f64`.

pub mod ccip;
pub mod cdp;
pub mod csr;
pub mod generate;
pub mod retrieval;
pub mod train;

pub use ccip::{ccip_loss, CcipConfig, CcipModel, ImageEncoder};
pub use cdp::{CdpConfig, CdpModel, DeterministicPrior, NoiseSchedule, PredictTarget};
pub use csr::{CsrConfig, CsrModel};
pub use generate::{Generator, GenerateOutcome};
pub use retrieval::{build_index, eval_protocol, retrieve, EmbeddingIndex, RetrievalReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("batch too small: need at least {need}, got {got}")]
    BatchTooSmall { need: usize, got: usize },
    #[error("timestep {t} outside 1..={max}")]
    BadTimestep { t: usize, max: usize },
    #[error("language error: {0}")]
    Lang(#[from] gencad_core::lang::LangError),
    #[error("nn error: {0}")]
    Nn(#[from] gencad_nn::NnError),
    #[error("image error: {0}")]
    Img(#[from] gencad_core::img::ImgError),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

/// Training-width models.
pub type CsrModel32 = CsrModel<f32>;
pub type CcipModel32 = CcipModel<f32>;
pub type CdpModel32 = CdpModel<f32>;
pub type Generator32 = Generator<f32>;
