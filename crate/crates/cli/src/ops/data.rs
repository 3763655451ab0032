//! `synth-dataset` and `render-dataset`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use gencad_core::geom::execute;
use gencad_core::img::{make_sketch, render_isometric, scale_variants, DEFAULT_FACTORS};
use gencad_core::lang::{encode_sequence, to_json};

use crate::config::PipelineConfig;
use crate::manifest::{
    split_for_index, DatasetManifest, DropEntry, ManifestEntry, Provenance, VariantEntry,
};
use crate::synth::{synth_corpus, SynthOptions};
use crate::CliError;

/// Synthesize a corpus, write canonical JSON + GCSQ1 sidecars, and create
/// the manifest with deterministic splits.
pub fn synth_dataset(config: &PipelineConfig, out_dir: &Path) -> Result<DatasetManifest, CliError> {
    let difficulty = config.dataset_difficulty.parse().map_err(CliError::Config)?;
    let opts = SynthOptions {
        count: config.dataset_count,
        seed: config.seed,
        difficulty,
        padded_len: config.padded_len,
        max_commands: config.padded_len,
    };
    let corpus = synth_corpus(&opts);

    let seq_dir = out_dir.join("sequences");
    std::fs::create_dir_all(&seq_dir)?;
    let provenance = Provenance {
        command: "synth-dataset".to_string(),
        seed: config.seed,
        config_digest: config.digest(),
    };
    let mut manifest = DatasetManifest::new(provenance);
    for (i, seq) in corpus.iter().enumerate() {
        let model_id = format!("model_{i:05}");
        let json_rel = Path::new("sequences").join(format!("{model_id}.json"));
        let gcsq_rel = Path::new("sequences").join(format!("{model_id}.gcsq"));
        std::fs::write(out_dir.join(&json_rel), to_json(seq))?;
        let mat = encode_sequence(seq)?;
        let mut w = BufWriter::new(File::create(out_dir.join(&gcsq_rel))?);
        mat.write_gcsq(&mut w)?;
        let entry = ManifestEntry {
            model_id,
            sequence: json_rel,
            matrix: gcsq_rel,
            variants: Vec::new(),
        };
        manifest
            .splits
            .entry(split_for_index(i, corpus.len()).to_string())
            .or_default()
            .push(entry);
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Render every model's surviving scale variants into grayscale images and
/// sketches, updating the manifest in place. Re-runs are idempotent: the
/// renderer is deterministic and file contents carry no timestamps.
pub fn render_dataset(
    config: &PipelineConfig,
    manifest_path: &Path,
) -> Result<DatasetManifest, CliError> {
    let mut manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(dir.join("renders"))?;
    std::fs::create_dir_all(dir.join("sketches"))?;

    let mut drops: Vec<DropEntry> = Vec::new();
    let entries: Vec<(String, std::path::PathBuf)> = manifest
        .all_entries()
        .map(|e| (e.model_id.clone(), e.sequence.clone()))
        .collect();
    let mut rendered: std::collections::BTreeMap<String, Vec<VariantEntry>> =
        std::collections::BTreeMap::new();

    for (model_id, seq_rel) in entries {
        let text = std::fs::read_to_string(dir.join(&seq_rel))?;
        let seq = gencad_core::lang::from_json(&text)?;
        let outcome = scale_variants(&seq, &DEFAULT_FACTORS)?;
        for (factors, reason) in outcome.dropped {
            drops.push(DropEntry { model_id: model_id.clone(), factors, reason });
        }
        let mut variants = Vec::new();
        for (k, variant) in outcome.variants.iter().enumerate() {
            let solid = execute(&variant.sequence)
                .map_err(|e| CliError::Io(format!("{model_id} variant {k}: {e}")))?;
            let render = render_isometric(&solid, config.render_size)?;
            let sketch = make_sketch(&render)?;
            let render_rel = Path::new("renders").join(format!("{model_id}_{k}.pgm"));
            let sketch_rel = Path::new("sketches").join(format!("{model_id}_{k}_sketch.pgm"));
            let comment = format!(
                "render-dataset model={model_id} variant={k} factors={:?} seed={}",
                variant.factors, config.seed
            );
            let mut w = BufWriter::new(File::create(dir.join(&render_rel))?);
            render.write_pgm(&mut w, Some(&comment))?;
            let mut w = BufWriter::new(File::create(dir.join(&sketch_rel))?);
            sketch.write_pgm(&mut w, Some(&comment))?;
            variants.push(VariantEntry {
                variant_id: format!("{k}"),
                factors: variant.factors,
                render: Some(render_rel),
                sketch: Some(sketch_rel),
            });
        }
        rendered.insert(model_id, variants);
    }

    for entry in manifest.all_entries_mut() {
        if let Some(v) = rendered.remove(&entry.model_id) {
            entry.variants = v;
        }
    }
    manifest.drops = drops;
    // The drop log is also written as plain text for quick inspection.
    let mut log = String::new();
    for d in &manifest.drops {
        log.push_str(&format!("{} {:?} {}\n", d.model_id, d.factors, d.reason));
    }
    std::fs::write(dir.join("drops.log"), log)?;
    manifest.save(manifest_path)?;
    Ok(manifest)
}
