//! `retrieve`: single-image ranked retrieval and the batch protocol.

use std::path::Path;

use serde::Serialize;

use gencad_core::metrics::MetricReport;
use gencad_models::ccip::l2_normalize_rows;
use gencad_models::retrieval::{build_index, eval_protocol, retrieve, EmbeddingIndex};
use gencad_nn::tensor::Tensor;

use crate::config::PipelineConfig;
use crate::manifest::{DatasetManifest, Provenance};
use crate::ops::trainops::{load_csr, load_image_encoder};
use crate::ops::{entries_of, images_to_tensor, load_image, load_sequence};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RankedHit {
    pub rank: usize,
    pub model_id: String,
    pub similarity: f32,
}

/// Build (or rebuild) the embedding index over a split and persist it.
pub fn build_index_cmd(
    config: &PipelineConfig,
    manifest_path: &Path,
    csr_ckpt: &Path,
    split: &str,
    out_path: &Path,
) -> Result<EmbeddingIndex, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let model = load_csr(csr_ckpt)?;
    let mut corpus = Vec::new();
    for entry in entries_of(&manifest, split)? {
        let mut seq = load_sequence(dir, entry)?;
        seq.padded_len = model.config.n;
        corpus.push((entry.model_id.clone(), gencad_core::lang::encode_sequence(&seq)?));
    }
    let _ = config;
    let index = build_index(&model, &corpus).map_err(|e| CliError::Train(e.to_string()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    index.write_gcix(&mut w).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(index)
}

/// Rank the index against one query image; prints and returns the table.
pub fn retrieve_image(
    index: &EmbeddingIndex,
    ccip_ckpt: &Path,
    image_path: &Path,
    k: usize,
) -> Result<Vec<RankedHit>, CliError> {
    let encoder = load_image_encoder(ccip_ckpt)?;
    let image = load_image(image_path)?;
    let tensor = images_to_tensor(std::slice::from_ref(&image))?;
    let latent = encoder.forward_frozen(&tensor);
    let (normed, _) = l2_normalize_rows(&latent);
    let query: Vec<f32> = normed.row(0).to_vec();
    let hits = retrieve(&query, index, k);
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, (model_id, similarity))| RankedHit { rank: i + 1, model_id, similarity })
        .collect())
}

/// The batch protocol over a split: per batch size, sample batches, query
/// with one image, score top-1 accuracy.
pub fn retrieve_protocol(
    config: &PipelineConfig,
    manifest_path: &Path,
    csr_ckpt: &Path,
    ccip_ckpt: &Path,
    split: &str,
    out_dir: &Path,
) -> Result<Vec<MetricReport>, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let csr = load_csr(csr_ckpt)?;
    let encoder = load_image_encoder(ccip_ckpt)?;

    // One (sequence latent, first-render image latent) pair per model.
    let mut mats = Vec::new();
    let mut images = Vec::new();
    for entry in entries_of(&manifest, split)? {
        let Some(render) = entry.variants.iter().find_map(|v| v.render.as_ref()) else {
            continue;
        };
        let mut seq = load_sequence(dir, entry)?;
        seq.padded_len = csr.config.n;
        mats.push(gencad_core::lang::encode_sequence(&seq)?);
        images.push(load_image(&dir.join(render))?);
    }
    if mats.len() < 2 {
        return Err(CliError::Manifest(
            "protocol needs at least two rendered models; run render-dataset first".to_string(),
        ));
    }

    let mut cad_latents = Tensor::zeros(&[mats.len(), csr.config.d_z]);
    for (start, chunk) in mats.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let z = csr.encode_frozen(chunk).map_err(|e| CliError::Train(e.to_string()))?;
        for r in 0..chunk.len() {
            cad_latents.row_mut(start + r).copy_from_slice(z.row(r));
        }
    }
    let tensor = images_to_tensor(&images)?;
    let mut image_latents = Tensor::zeros(&[mats.len(), csr.config.d_z]);
    for start in (0..mats.len()).step_by(16) {
        let end = (start + 16).min(mats.len());
        let idx: Vec<usize> = (start..end).collect();
        let mut batch = Tensor::zeros(&[idx.len(), 1, 256, 256]);
        let stride = 256 * 256;
        for (r, &i) in idx.iter().enumerate() {
            batch.data_mut()[r * stride..(r + 1) * stride]
                .copy_from_slice(&tensor.data()[i * stride..(i + 1) * stride]);
        }
        let z = encoder.forward_frozen(&batch);
        for (r, &i) in idx.iter().enumerate() {
            image_latents.row_mut(i).copy_from_slice(z.row(r));
        }
    }

    let mut reports = Vec::new();
    for (i, &n_b) in config.retrieval_batch_sizes.iter().enumerate() {
        let repeats = config.retrieval_repeats.get(i).copied().unwrap_or(3);
        let r = eval_protocol(&cad_latents, &image_latents, n_b, repeats, config.seed)
            .map_err(|e| CliError::Metric(e.to_string()))?;
        reports.push(
            MetricReport::repeated(&format!("top1_at_{n_b}"), r.scores)
                .with("n_b", r.n_b)
                .with("repeats", repeats)
                .with("split", split)
                .with("corpus_size", mats.len())
                .with("seed", config.seed),
        );
    }
    let provenance = Provenance {
        command: format!("retrieve --protocol --split {split}"),
        seed: config.seed,
        config_digest: config.digest(),
    };
    crate::ops::write_reports(out_dir, "retrieval", &reports, &provenance)?;
    Ok(reports)
}
