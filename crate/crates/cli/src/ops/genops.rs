//! `generate`: image-conditioned program generation with solids, renders
//! and a validity report.

use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use gencad_core::geom::{execute, extract_mesh};
use gencad_core::img::render_isometric;
use gencad_core::lang::to_json;
use gencad_models::generate::Generator;

use crate::config::PipelineConfig;
use crate::ops::load_image;
use crate::ops::trainops::{load_cdp, load_csr, load_image_encoder};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct GenerateRecord {
    pub image: PathBuf,
    pub sample: usize,
    pub seed: u64,
    pub grammar_ok: bool,
    pub solid_ok: bool,
    pub program: PathBuf,
    pub mesh: Option<PathBuf>,
    pub render: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub provenance: crate::manifest::Provenance,
    pub outputs: Vec<GenerateRecord>,
    pub invalid_ratio: f64,
}

pub struct GeneratorPaths<'a> {
    pub csr: &'a Path,
    pub ccip: &'a Path,
    pub cdp: &'a Path,
}

pub fn build_generator(paths: &GeneratorPaths) -> Result<Generator<f32>, CliError> {
    for (name, p) in [("train-csr", paths.csr), ("train-ccip", paths.ccip), ("train-cdp", paths.cdp)] {
        if !p.exists() {
            return Err(CliError::StageDependency(format!(
                "checkpoint {} does not exist (run {name} first)",
                p.display()
            )));
        }
    }
    Ok(Generator {
        csr: load_csr(paths.csr)?,
        image_encoder: load_image_encoder(paths.ccip)?,
        cdp: load_cdp(paths.cdp)?,
    })
}

/// Generate `n_per_image` programs per input image. Every output is written
/// as canonical JSON; valid outputs also get a mesh and a render.
pub fn generate_cmd(
    config: &PipelineConfig,
    images: &[PathBuf],
    paths: &GeneratorPaths,
    n_per_image: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<GenerateReport, CliError> {
    let generator = build_generator(paths)?;
    std::fs::create_dir_all(out_dir.join("programs"))?;
    std::fs::create_dir_all(out_dir.join("meshes"))?;
    std::fs::create_dir_all(out_dir.join("renders"))?;

    let mut outputs = Vec::new();
    let mut invalid = 0usize;
    for image_path in images {
        let image = load_image(image_path)?;
        let stem = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "image".to_string());
        for k in 0..n_per_image {
            let sample_seed = seed
                .wrapping_add(k as u64)
                .wrapping_add(fnv(stem.as_bytes()));
            let outcome = generator
                .generate(&image, sample_seed)
                .map_err(|e| CliError::Train(e.to_string()))?;
            let program_rel = Path::new("programs").join(format!("{stem}_{k}.json"));
            std::fs::write(out_dir.join(&program_rel), to_json(&outcome.sequence))?;

            let mut mesh_rel = None;
            let mut render_rel = None;
            if outcome.solid_ok {
                let solid = execute(&outcome.sequence)
                    .map_err(|e| CliError::Io(format!("valid output failed to execute: {e}")))?;
                let mesh = extract_mesh(&solid, config.eval_resolution);
                let mrel = Path::new("meshes").join(format!("{stem}_{k}.stl"));
                let mut w = BufWriter::new(std::fs::File::create(out_dir.join(&mrel))?);
                mesh.write_stl(&mut w, &format!("{stem}_{k}"))?;
                mesh_rel = Some(mrel);
                let render = render_isometric(&solid, 256)?;
                let rrel = Path::new("renders").join(format!("{stem}_{k}.pgm"));
                let mut w = BufWriter::new(std::fs::File::create(out_dir.join(&rrel))?);
                render.write_pgm(
                    &mut w,
                    Some(&format!("generate {stem} sample={k} seed={sample_seed}")),
                )?;
                render_rel = Some(rrel);
            } else {
                invalid += 1;
            }
            outputs.push(GenerateRecord {
                image: image_path.clone(),
                sample: k,
                seed: sample_seed,
                grammar_ok: outcome.grammar_ok,
                solid_ok: outcome.solid_ok,
                program: program_rel,
                mesh: mesh_rel,
                render: render_rel,
            });
        }
    }
    let report = GenerateReport {
        provenance: crate::manifest::Provenance {
            command: "generate".to_string(),
            seed,
            config_digest: config.digest(),
        },
        invalid_ratio: invalid as f64 / outputs.len().max(1) as f64,
        outputs,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?,
    )?;
    Ok(report)
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
