//! Subcommand implementations.

pub mod data;
pub mod evalops;
pub mod genops;
pub mod retrieveops;
pub mod trainops;

use std::path::Path;

use gencad_core::geom::{execute, is_valid, normalize, sample_surface};
use gencad_core::img::{preprocess_for_encoder, GrayImage, ENCODER_SIZE};
use gencad_core::lang::{encode_sequence, from_json, validate, CadSequence, SeqMatrix};
use gencad_nn::tensor::Tensor;

use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::CliError;

/// Load a sequence JSON from a manifest entry.
pub fn load_sequence(dir: &Path, entry: &ManifestEntry) -> Result<CadSequence, CliError> {
    let text = std::fs::read_to_string(dir.join(&entry.sequence))?;
    Ok(from_json(&text)?)
}

/// Load a split's sequences re-padded to `n` and encoded.
pub fn load_split_matrices(
    manifest: &DatasetManifest,
    dir: &Path,
    split: &str,
    n: usize,
) -> Result<Vec<(String, SeqMatrix)>, CliError> {
    let mut out = Vec::new();
    for entry in manifest.split(split)? {
        let mut seq = load_sequence(dir, entry)?;
        seq.padded_len = n;
        out.push((entry.model_id.clone(), encode_sequence(&seq)?));
    }
    Ok(out)
}

/// Entries of one split, or of every split when `split == "all"`.
pub fn entries_of<'m>(
    manifest: &'m DatasetManifest,
    split: &str,
) -> Result<Vec<&'m ManifestEntry>, CliError> {
    if split == "all" {
        Ok(manifest.all_entries().collect())
    } else {
        Ok(manifest.split(split)?.iter().collect())
    }
}

/// Read a PGM image from disk.
pub fn load_image(path: &Path) -> Result<GrayImage, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = std::io::BufReader::new(file);
    Ok(GrayImage::read_pgm(&mut reader)?)
}

/// Preprocess images into the `[N, 1, 256, 256]` encoder input tensor.
pub fn images_to_tensor(images: &[GrayImage]) -> Result<Tensor<f32>, CliError> {
    let mut t = Tensor::zeros(&[images.len(), 1, ENCODER_SIZE, ENCODER_SIZE]);
    let stride = ENCODER_SIZE * ENCODER_SIZE;
    for (i, img) in images.iter().enumerate() {
        let pixels = preprocess_for_encoder(img)?;
        t.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(&pixels);
    }
    Ok(t)
}

/// Normalized surface cloud of a sequence, or `None` when it does not build
/// a usable solid.
pub fn cloud_of(
    seq: &CadSequence,
    points: usize,
    seed: u64,
    resolution: usize,
) -> Option<Vec<[f64; 3]>> {
    if !validate(seq).is_ok() {
        return None;
    }
    let solid = execute(seq).ok()?;
    if !is_valid(&solid, resolution) {
        return None;
    }
    let cloud = sample_surface(&solid, points, seed, resolution).ok()?;
    Some(normalize(&cloud).points)
}

/// Write a metric report set as JSON plus a CSV summary.
pub fn write_reports(
    out_dir: &Path,
    stem: &str,
    reports: &[gencad_core::metrics::MetricReport],
    provenance: &crate::manifest::Provenance,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let payload = serde_json::json!({ "provenance": provenance, "metrics": reports });
    std::fs::write(
        out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&payload).map_err(|e| CliError::Io(e.to_string()))?,
    )?;
    let mut csv = String::from("metric,value,std_dev,repeats\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.name,
            r.value,
            r.std_dev.map(|s| s.to_string()).unwrap_or_default(),
            r.repeats.len()
        ));
    }
    std::fs::write(out_dir.join(format!("{stem}.csv")), csv)?;
    Ok(())
}
