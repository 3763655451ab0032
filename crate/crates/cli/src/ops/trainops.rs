//! `train-csr`, `train-ccip`, `train-cdp`: stage training with enforced
//! ordering, frozen-dependency fingerprinting, checkpoints and JSONL logs.

use std::io::Write;
use std::path::Path;

use gencad_models::ccip::{CcipConfig, CcipModel, ImageEncoder};
use gencad_models::cdp::CdpModel;
use gencad_models::csr::{CsrConfig, CsrModel};
use gencad_models::train::{
    encode_images_frozen, train_ccip as train_ccip_loop, train_cdp as train_cdp_loop, train_csr as train_csr_loop,
    LogRecord,
};
use gencad_nn::checkpoint::{load_checkpoint, params_fingerprint, peek_config, save_checkpoint};
use gencad_nn::tensor::Tensor;

use crate::config::PipelineConfig;
use crate::manifest::DatasetManifest;
use crate::ops::{entries_of, images_to_tensor, load_image, load_split_matrices};
use crate::CliError;

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).map_err(|e| CliError::Io(e.to_string()))?)?;
    }
    Ok(())
}

/// Load a sequence-autoencoder checkpoint; the model is rebuilt from the
/// config echo, so checkpoints are self-describing.
pub fn load_csr(path: &Path) -> Result<CsrModel<f32>, CliError> {
    let echo = peek_config(path)?;
    let parsed: serde_json::Value =
        serde_json::from_str(&echo).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let config: CsrConfig = serde_json::from_value(parsed["config"].clone())
        .map_err(|e| CliError::Checkpoint(format!("bad config echo: {e}")))?;
    let mut model = CsrModel::new(config);
    load_checkpoint(&mut model, path)?;
    Ok(model)
}

pub fn load_image_encoder(path: &Path) -> Result<ImageEncoder<f32>, CliError> {
    let echo = peek_config(path)?;
    let parsed: serde_json::Value =
        serde_json::from_str(&echo).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let config: CcipConfig = serde_json::from_value(parsed["config"].clone())
        .map_err(|e| CliError::Checkpoint(format!("bad config echo: {e}")))?;
    let mut encoder = ImageEncoder::new(config);
    load_checkpoint(&mut encoder, path)?;
    Ok(encoder)
}

pub fn load_cdp(path: &Path) -> Result<CdpModel<f32>, CliError> {
    let echo = peek_config(path)?;
    let parsed: serde_json::Value =
        serde_json::from_str(&echo).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let config: gencad_models::cdp::CdpConfig = serde_json::from_value(parsed["config"].clone())
        .map_err(|e| CliError::Checkpoint(format!("bad config echo: {e}")))?;
    let mut model = CdpModel::new(config);
    load_checkpoint(&mut model, path)?;
    Ok(model)
}

pub struct CsrTrainSummary {
    pub steps: u64,
    pub cmd_acc: f64,
    pub param_acc: f64,
    pub reached_target: bool,
}

pub fn train_csr_cmd(
    config: &PipelineConfig,
    manifest_path: &Path,
    out_ckpt: &Path,
    log_path: &Path,
) -> Result<CsrTrainSummary, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let data = load_split_matrices(&manifest, dir, "train", config.padded_len)?;
    let mats: Vec<_> = data.into_iter().map(|(_, m)| m).collect();
    if mats.is_empty() {
        return Err(CliError::Manifest("train split is empty".to_string()));
    }

    let mut model = CsrModel::new(config.csr_config());
    let result = train_csr_loop(&mut model, &mats, &config.csr_train_options())
        .map_err(|e| CliError::Train(e.to_string()))?;
    write_log(log_path, &result.log)?;

    let echo = serde_json::json!({
        "stage": "csr",
        "config": model.config,
        "config_digest": config.digest(),
        "steps": result.steps,
        "cmd_acc": result.cmd_acc,
        "param_acc": result.param_acc,
    });
    save_checkpoint(&mut model, &echo.to_string(), out_ckpt)?;
    Ok(CsrTrainSummary {
        steps: result.steps,
        cmd_acc: result.cmd_acc,
        param_acc: result.param_acc,
        reached_target: result.reached_target,
    })
}

pub struct CcipTrainSummary {
    pub steps: u64,
    pub top1: f64,
    pub loss: f64,
    pub reached_target: bool,
    pub pairs: usize,
}

/// Collect (sequence matrix, render image) training pairs: one pair per
/// surviving variant render.
fn collect_pairs(
    manifest: &DatasetManifest,
    dir: &Path,
    split: &str,
    n: usize,
    use_sketches: bool,
) -> Result<(Vec<gencad_core::lang::SeqMatrix>, Tensor<f32>), CliError> {
    let mut mats = Vec::new();
    let mut images = Vec::new();
    for entry in entries_of(manifest, split)? {
        let mut seq = crate::ops::load_sequence(dir, entry)?;
        seq.padded_len = n;
        let mat = gencad_core::lang::encode_sequence(&seq)?;
        for v in &entry.variants {
            let rel = if use_sketches { &v.sketch } else { &v.render };
            if let Some(rel) = rel {
                mats.push(mat.clone());
                images.push(load_image(&dir.join(rel))?);
            }
        }
    }
    if mats.is_empty() {
        return Err(CliError::Manifest(
            "no rendered variants found; run render-dataset first".to_string(),
        ));
    }
    let tensor = images_to_tensor(&images)?;
    Ok((mats, tensor))
}

pub fn train_ccip_cmd(
    config: &PipelineConfig,
    manifest_path: &Path,
    csr_ckpt: &Path,
    out_ckpt: &Path,
    log_path: &Path,
    use_sketches: bool,
) -> Result<CcipTrainSummary, CliError> {
    if !csr_ckpt.exists() {
        return Err(CliError::StageDependency(format!(
            "train-ccip requires a sequence-autoencoder checkpoint; {} does not exist (run train-csr first)",
            csr_ckpt.display()
        )));
    }
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cad_encoder = load_csr(csr_ckpt)?;
    let frozen_before = params_fingerprint(&mut cad_encoder);
    let n = cad_encoder.config.n;

    let (mats, images) = collect_pairs(&manifest, dir, "train", n, use_sketches)?;
    let mut ccip_cfg = config.ccip_config();
    ccip_cfg.d_z = cad_encoder.config.d_z;
    let mut model =
        CcipModel::new(ccip_cfg, cad_encoder).map_err(|e| CliError::Train(e.to_string()))?;
    let pairs = mats.len();
    let result = train_ccip_loop(&mut model, &mats, &images, &config.ccip_train_options())
        .map_err(|e| CliError::Train(e.to_string()))?;
    write_log(log_path, &result.log)?;

    let frozen_after = params_fingerprint(&mut model.cad_encoder);
    if frozen_before != frozen_after {
        return Err(CliError::Train(
            "frozen CAD encoder parameters changed during CCIP training".to_string(),
        ));
    }

    let echo = serde_json::json!({
        "stage": "ccip",
        "config": model.image_encoder.config,
        "config_digest": config.digest(),
        "frozen_csr_fingerprint": frozen_before,
        "steps": result.steps,
        "top1": result.top1,
        "loss": result.loss,
        "modality": if use_sketches { "sketch" } else { "image" },
    });
    save_checkpoint(&mut model.image_encoder, &echo.to_string(), out_ckpt)?;
    Ok(CcipTrainSummary {
        steps: result.steps,
        top1: result.top1,
        loss: result.loss,
        reached_target: result.reached_target,
        pairs,
    })
}

pub struct CdpTrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub conditional: bool,
}

pub fn train_cdp_cmd(
    config: &PipelineConfig,
    manifest_path: &Path,
    csr_ckpt: &Path,
    ccip_ckpt: Option<&Path>,
    out_ckpt: &Path,
    log_path: &Path,
) -> Result<CdpTrainSummary, CliError> {
    if !csr_ckpt.exists() {
        return Err(CliError::StageDependency(format!(
            "train-cdp requires a sequence-autoencoder checkpoint; {} does not exist (run train-csr first)",
            csr_ckpt.display()
        )));
    }
    let cdp_cfg = config.cdp_config()?;
    if cdp_cfg.conditional && ccip_ckpt.is_none() {
        return Err(CliError::StageDependency(
            "conditional prior training requires a contrastive checkpoint (run train-ccip first or set cdp_conditional = false)".to_string(),
        ));
    }
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut csr = load_csr(csr_ckpt)?;
    let csr_before = params_fingerprint(&mut csr);
    let n = csr.config.n;

    // Frozen CAD latents for every rendered training pair (falling back to
    // one latent per model when renders are absent and unconditioned).
    let (mats, cond) = if cdp_cfg.conditional {
        let ccip_path = ccip_ckpt.unwrap();
        let encoder = load_image_encoder(ccip_path)?;
        let (mats, images) = collect_pairs(&manifest, dir, "train", n, false)?;
        let ccip_cfg = encoder.config.clone();
        let mut holder = CcipModel { image_encoder: encoder, cad_encoder: load_csr(csr_ckpt)?, temperature: ccip_cfg.temperature };
        let latents = encode_images_frozen(&holder, &images);
        let (normed, _) = gencad_models::ccip::l2_normalize_rows(&latents);
        let enc_before = params_fingerprint(&mut holder.image_encoder);
        let _ = enc_before;
        (mats, Some(normed))
    } else {
        let data = load_split_matrices(&manifest, dir, "train", n)?;
        (data.into_iter().map(|(_, m)| m).collect(), None)
    };

    let mut z0 = Tensor::zeros(&[mats.len(), csr.config.d_z]);
    for (start, chunk) in mats.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let z = csr.encode_frozen(chunk).map_err(|e| CliError::Train(e.to_string()))?;
        for r in 0..chunk.len() {
            z0.row_mut(start + r).copy_from_slice(z.row(r));
        }
    }

    let mut model = CdpModel::new(cdp_cfg.clone());
    let log = train_cdp_loop(&mut model, &z0, cond.as_ref(), &config.cdp_train_options())
        .map_err(|e| CliError::Train(e.to_string()))?;
    write_log(log_path, &log)?;

    let csr_after = params_fingerprint(&mut csr);
    if csr_before != csr_after {
        return Err(CliError::Train(
            "frozen CAD encoder parameters changed during prior training".to_string(),
        ));
    }

    let final_loss = log.iter().rev().take(50).map(|r| r.loss).sum::<f64>()
        / log.len().min(50).max(1) as f64;
    let echo = serde_json::json!({
        "stage": "cdp",
        "config": model.config,
        "config_digest": config.digest(),
        "frozen_csr_fingerprint": csr_before,
        "final_loss": final_loss,
    });
    save_checkpoint(&mut model, &echo.to_string(), out_ckpt)?;
    Ok(CdpTrainSummary { steps: log.len() as u64, final_loss, conditional: cdp_cfg.conditional })
}
