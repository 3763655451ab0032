//! Pipeline configuration: a flat, documented key-value file (TOML syntax,
//! all keys at the top level). Every hyperparameter of every stage lives
//! here; desk-scale values are the defaults and the full-scale values sit in
//! the template comments.

use serde::{Deserialize, Serialize};

use gencad_models::ccip::CcipConfig;
use gencad_models::cdp::{CdpConfig, PredictTarget};
use gencad_models::csr::CsrConfig;
use gencad_models::train::{CcipTrainOptions, CdpTrainOptions, CsrTrainOptions};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // Global
    pub seed: u64,

    // Dataset synthesis
    pub dataset_count: usize,
    pub dataset_difficulty: String,
    pub padded_len: usize,

    // Rendering
    pub render_size: usize,

    // Sequence autoencoder
    pub csr_d_z: usize,
    pub csr_enc_layers: usize,
    pub csr_dec_layers: usize,
    pub csr_heads: usize,
    pub csr_ffn_dim: usize,
    pub csr_dropout: f64,
    pub csr_slot_embed_dim: usize,
    pub csr_beta: f64,
    pub csr_lr: f64,
    pub csr_warmup_steps: u64,
    pub csr_max_steps: u64,
    pub csr_batch_size: usize,
    pub csr_clip_norm: f64,
    pub csr_eval_every: u64,
    pub csr_target_cmd_acc: f64,
    pub csr_target_param_acc: f64,

    // Contrastive CAD-image model
    pub ccip_base_width: usize,
    pub ccip_dropout: f64,
    pub ccip_temperature: f64,
    pub ccip_lr: f64,
    pub ccip_weight_decay: f64,
    pub ccip_plateau_patience: usize,
    pub ccip_max_steps: u64,
    pub ccip_batch_size: usize,
    pub ccip_target_top1: f64,
    pub ccip_target_loss: f64,

    // Diffusion prior
    pub cdp_width: usize,
    pub cdp_blocks: usize,
    pub cdp_dropout: f64,
    pub cdp_timesteps: usize,
    pub cdp_beta_start: f64,
    pub cdp_beta_end: f64,
    pub cdp_predict: String,
    pub cdp_conditional: bool,
    pub cdp_lr: f64,
    pub cdp_max_steps: u64,
    pub cdp_batch_size: usize,
    pub cdp_accumulate: usize,
    pub cdp_clip_norm: f64,

    // Evaluation
    pub eval_eta: u8,
    pub eval_points: usize,
    pub eval_jsd_grid: usize,
    pub eval_repeats: usize,
    pub eval_reference_size: usize,
    pub eval_generated_size: usize,
    pub eval_resolution: usize,

    // Retrieval protocol
    pub retrieval_batch_sizes: Vec<usize>,
    pub retrieval_repeats: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset_count: 100,
            dataset_difficulty: "medium".to_string(),
            padded_len: 60,
            render_size: 448,
            csr_d_z: 64,
            csr_enc_layers: 2,
            csr_dec_layers: 2,
            csr_heads: 8,
            csr_ffn_dim: 512,
            csr_dropout: 0.1,
            csr_slot_embed_dim: 8,
            csr_beta: 2.0,
            csr_lr: 1e-3,
            csr_warmup_steps: 200,
            csr_max_steps: 5000,
            csr_batch_size: 64,
            csr_clip_norm: 1.0,
            csr_eval_every: 100,
            csr_target_cmd_acc: 0.99,
            csr_target_param_acc: 0.95,
            ccip_base_width: 8,
            ccip_dropout: 0.1,
            ccip_temperature: 0.07,
            ccip_lr: 1e-3,
            ccip_weight_decay: 1e-4,
            ccip_plateau_patience: 10,
            ccip_max_steps: 1500,
            ccip_batch_size: 32,
            ccip_target_top1: 1.0,
            ccip_target_loss: 0.1,
            cdp_width: 128,
            cdp_blocks: 10,
            cdp_dropout: 0.1,
            cdp_timesteps: 500,
            cdp_beta_start: 1e-4,
            cdp_beta_end: 0.02,
            cdp_predict: "epsilon".to_string(),
            cdp_conditional: true,
            cdp_lr: 1e-3,
            cdp_max_steps: 4000,
            cdp_batch_size: 64,
            cdp_accumulate: 2,
            cdp_clip_norm: 1.0,
            eval_eta: 3,
            eval_points: 2000,
            eval_jsd_grid: 28,
            eval_repeats: 3,
            eval_reference_size: 1000,
            eval_generated_size: 3000,
            eval_resolution: 64,
            retrieval_batch_sizes: vec![10, 128],
            retrieval_repeats: vec![1000, 10],
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Apply the GENCAD_SEED environment override.
    pub fn with_env_seed(mut self) -> Self {
        if let Ok(v) = std::env::var("GENCAD_SEED") {
            if let Ok(seed) = v.parse::<u64>() {
                self.seed = seed;
            }
        }
        self
    }

    pub fn csr_config(&self) -> CsrConfig {
        CsrConfig {
            d_z: self.csr_d_z,
            enc_layers: self.csr_enc_layers,
            dec_layers: self.csr_dec_layers,
            heads: self.csr_heads,
            ffn_dim: self.csr_ffn_dim,
            dropout: self.csr_dropout,
            vocab: gencad_core::lang::VOCAB_SIZE,
            param_slots: gencad_core::lang::PARAM_SLOTS,
            levels: gencad_core::lang::QUANT_LEVELS,
            n: self.padded_len,
            slot_embed_dim: self.csr_slot_embed_dim,
            beta: self.csr_beta,
            seed: self.seed,
        }
    }

    pub fn csr_train_options(&self) -> CsrTrainOptions {
        CsrTrainOptions {
            lr: self.csr_lr,
            warmup_steps: self.csr_warmup_steps,
            max_steps: self.csr_max_steps,
            batch_size: self.csr_batch_size,
            clip_norm: self.csr_clip_norm,
            eval_every: self.csr_eval_every,
            target_cmd_acc: self.csr_target_cmd_acc,
            target_param_acc: self.csr_target_param_acc,
            eta: self.eval_eta,
            seed: self.seed,
        }
    }

    pub fn ccip_config(&self) -> CcipConfig {
        let w = self.ccip_base_width;
        CcipConfig {
            d_z: self.csr_d_z,
            widths: [w, 2 * w, 4 * w, 8 * w],
            blocks_per_stage: 2,
            dropout: self.ccip_dropout,
            temperature: self.ccip_temperature,
            input_size: 256,
            seed: self.seed,
        }
    }

    pub fn ccip_train_options(&self) -> CcipTrainOptions {
        CcipTrainOptions {
            lr: self.ccip_lr,
            weight_decay: self.ccip_weight_decay,
            plateau_patience: self.ccip_plateau_patience,
            max_steps: self.ccip_max_steps,
            batch_size: self.ccip_batch_size,
            eval_every: 25,
            target_top1: self.ccip_target_top1,
            target_loss: self.ccip_target_loss,
            seed: self.seed,
        }
    }

    pub fn cdp_config(&self) -> Result<CdpConfig, CliError> {
        let predict = match self.cdp_predict.as_str() {
            "epsilon" => PredictTarget::Epsilon,
            "z0" => PredictTarget::Z0,
            other => {
                return Err(CliError::Config(format!(
                    "cdp_predict must be \"epsilon\" or \"z0\", got {other:?}"
                )))
            }
        };
        Ok(CdpConfig {
            d_z: self.csr_d_z,
            width: self.cdp_width,
            blocks: self.cdp_blocks,
            dropout: self.cdp_dropout,
            timesteps: self.cdp_timesteps,
            beta_start: self.cdp_beta_start,
            beta_end: self.cdp_beta_end,
            predict,
            conditional: self.cdp_conditional,
            seed: self.seed,
        })
    }

    pub fn cdp_train_options(&self) -> CdpTrainOptions {
        CdpTrainOptions {
            lr: self.cdp_lr,
            max_steps: self.cdp_max_steps,
            batch_size: self.cdp_batch_size,
            clip_norm: self.cdp_clip_norm,
            accumulate: self.cdp_accumulate,
            seed: self.seed,
        }
    }

    /// FNV digest of the canonical serialized form, for provenance headers.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let mut hash = 0xcbf29ce484222325u64;
        for b in text.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

/// The documented default config template, desk-scale values active and
/// full-scale values noted alongside.
pub const CONFIG_TEMPLATE: &str = r#"# gencad pipeline configuration (flat key = value, TOML syntax)
# Active values are the desk-scale defaults; full-scale values are noted.

seed = 0

# ---- dataset synthesis ----
dataset_count = 100            # full scale: 152530 train / 8515 val / 7629 test
dataset_difficulty = "medium"  # easy | medium | hard
padded_len = 60                # padded sequence length N

# ---- rendering ----
render_size = 448              # grayscale renders, 1 x 448 x 448

# ---- sequence autoencoder ----
csr_d_z = 64                   # latent dim; full scale: 256
csr_enc_layers = 2             # full scale: 4
csr_dec_layers = 2             # full scale: 4
csr_heads = 8
csr_ffn_dim = 512
csr_dropout = 0.1
csr_slot_embed_dim = 8         # full scale: 32
csr_beta = 2.0                 # type/parameter loss weight
csr_lr = 1e-3
csr_warmup_steps = 200         # full scale: 2000
csr_max_steps = 5000           # full scale: 1000 epochs at batch 512
csr_batch_size = 64            # full scale: 512
csr_clip_norm = 1.0
csr_eval_every = 100
csr_target_cmd_acc = 0.99
csr_target_param_acc = 0.95

# ---- contrastive CAD-image model ----
ccip_base_width = 8            # stage widths w,2w,4w,8w; full scale: 64 -> 64/128/256/512
ccip_dropout = 0.1
ccip_temperature = 0.07
ccip_lr = 1e-3
ccip_weight_decay = 1e-4
ccip_plateau_patience = 10
ccip_max_steps = 1500          # full scale: 300 epochs at batch 256
ccip_batch_size = 32           # full scale: 256
ccip_target_top1 = 1.0
ccip_target_loss = 0.1

# ---- diffusion prior ----
cdp_width = 128                # full scale: 2048
cdp_blocks = 10
cdp_dropout = 0.1
cdp_timesteps = 500
cdp_beta_start = 1e-4
cdp_beta_end = 0.02
cdp_predict = "epsilon"        # epsilon | z0
cdp_conditional = true
cdp_lr = 1e-3                  # full scale: 1e-5
cdp_max_steps = 4000           # full scale: 1e6 steps at batch 2048
cdp_batch_size = 64            # full scale: 2048
cdp_accumulate = 2             # gradient accumulation interval
cdp_clip_norm = 1.0

# ---- evaluation ----
eval_eta = 3                   # parameter accuracy tolerance, in levels
eval_points = 2000             # points per sampled cloud
eval_jsd_grid = 28
eval_repeats = 3
eval_reference_size = 1000
eval_generated_size = 3000
eval_resolution = 64

# ---- retrieval protocol ----
retrieval_batch_sizes = [10, 128]   # full scale: [10, 128, 1024, 2048]
retrieval_repeats = [1000, 10]      # full scale: [1000, 10, 3, 3]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let cfg = PipelineConfig::parse(CONFIG_TEMPLATE).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("nonsense_key = 1").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.csr_lr = 5e-4;
        assert_ne!(a.digest(), b.digest());
    }
}
