//! `evaluate-recon` and `evaluate-gen`.

use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gencad_core::lang::{decode_sequence, from_json, CadSequence, SeqMatrix};
use gencad_core::metrics::chamfer::chamfer;
use gencad_core::metrics::gen::{cov_from_matrix, jsd, mmd_from_matrix, pairwise_chamfer};
use gencad_core::metrics::recon::{cmd_accuracy, invalid_ratio, param_accuracy};
use gencad_core::metrics::{fid::fid, MetricReport};

use crate::config::PipelineConfig;
use crate::manifest::{DatasetManifest, Provenance};
use crate::ops::trainops::load_csr;
use crate::ops::{cloud_of, load_split_matrices, write_reports};
use crate::CliError;

/// Reconstruction metrics of a trained autoencoder over a manifest split:
/// command accuracy, parameter accuracy at eta, mean chamfer distance of the
/// rebuilt solids, and the invalid ratio of the reconstructions.
pub fn evaluate_recon(
    config: &PipelineConfig,
    manifest_path: &Path,
    csr_ckpt: &Path,
    split: &str,
    out_dir: &Path,
) -> Result<Vec<MetricReport>, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let model = load_csr(csr_ckpt)?;
    let data = load_split_matrices(&manifest, dir, split, model.config.n)?;
    let truth: Vec<SeqMatrix> = data.iter().map(|(_, m)| m.clone()).collect();

    let mut preds = Vec::with_capacity(truth.len());
    for chunk in truth.chunks(64) {
        let z = model.encode_frozen(chunk).map_err(|e| CliError::Train(e.to_string()))?;
        preds.extend(model.greedy_decode(&z).map_err(|e| CliError::Train(e.to_string()))?);
    }

    let eta = config.eval_eta;
    let mu_cmd = cmd_accuracy(&preds, &truth).map_err(|e| CliError::Metric(e.to_string()))?;
    let mu_param =
        param_accuracy(&preds, &truth, eta).map_err(|e| CliError::Metric(e.to_string()))?;

    // Chamfer over pairs whose reconstruction builds a solid; failures count
    // into the invalid ratio.
    let recon_seqs: Vec<CadSequence> = preds
        .iter()
        .map(|m| decode_sequence(m))
        .collect::<Result<_, _>>()
        .map_err(CliError::Lang)?;
    let truth_seqs: Vec<CadSequence> = truth
        .iter()
        .map(|m| decode_sequence(m))
        .collect::<Result<_, _>>()
        .map_err(CliError::Lang)?;
    let mut chamfers = Vec::new();
    for (i, (gt, rc)) in truth_seqs.iter().zip(&recon_seqs).enumerate() {
        let seed = config.seed.wrapping_add(i as u64);
        let (Some(a), Some(b)) = (
            cloud_of(gt, config.eval_points, seed, config.eval_resolution),
            cloud_of(rc, config.eval_points, seed.wrapping_add(1), config.eval_resolution),
        ) else {
            continue;
        };
        chamfers.push(chamfer(&a, &b).map_err(|e| CliError::Metric(e.to_string()))?);
    }
    let mu_cd = if chamfers.is_empty() {
        f64::NAN
    } else {
        chamfers.iter().sum::<f64>() / chamfers.len() as f64
    };
    let ir =
        invalid_ratio(&recon_seqs, config.eval_resolution / 2).map_err(|e| CliError::Metric(e.to_string()))?;

    let protocol = |r: MetricReport| -> MetricReport {
        r.with("split", split)
            .with("set_size", truth.len())
            .with("eta", eta)
            .with("n_points", config.eval_points)
            .with("resolution", config.eval_resolution)
            .with("seed", config.seed)
    };
    let reports = vec![
        protocol(MetricReport::single("mu_cmd", mu_cmd)),
        protocol(MetricReport::single("mu_param", mu_param)),
        protocol(MetricReport::single("mu_cd", mu_cd)),
        protocol(MetricReport::single("ir", ir)),
    ];
    let provenance = Provenance {
        command: format!("evaluate-recon --split {split}"),
        seed: config.seed,
        config_digest: config.digest(),
    };
    write_reports(out_dir, "recon", &reports, &provenance)?;
    Ok(reports)
}

/// Load every program JSON in a directory (sorted for determinism).
pub fn load_program_dir(dir: &Path) -> Result<Vec<CadSequence>, CliError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(from_json(&std::fs::read_to_string(&p)?)?);
    }
    Ok(out)
}

/// Generative metrics of a set of generated programs against a reference
/// split: COV, MMD, JSD over subsampled sets with repeats, plus the Fréchet
/// distance between the latent fits of the two program sets.
pub fn evaluate_gen(
    config: &PipelineConfig,
    manifest_path: &Path,
    generated_dir: &Path,
    csr_ckpt: &Path,
    split: &str,
    out_dir: &Path,
) -> Result<Vec<MetricReport>, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let model = load_csr(csr_ckpt)?;
    let ref_data = load_split_matrices(&manifest, dir, split, model.config.n)?;
    let gen_seqs = load_program_dir(generated_dir)?;
    if gen_seqs.is_empty() {
        return Err(CliError::Metric("no generated programs found".to_string()));
    }

    // Surface clouds; invalid generated programs contribute to IR only.
    let ref_seqs: Vec<CadSequence> = ref_data
        .iter()
        .map(|(_, m)| decode_sequence(m))
        .collect::<Result<_, _>>()
        .map_err(CliError::Lang)?;
    let ref_clouds: Vec<Vec<[f64; 3]>> = ref_seqs
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            cloud_of(s, config.eval_points, config.seed.wrapping_add(i as u64), config.eval_resolution)
        })
        .collect();
    let gen_clouds: Vec<Vec<[f64; 3]>> = gen_seqs
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            cloud_of(
                s,
                config.eval_points,
                config.seed.wrapping_add(0x9e3779b9).wrapping_add(i as u64),
                config.eval_resolution,
            )
        })
        .collect();
    if ref_clouds.is_empty() || gen_clouds.is_empty() {
        return Err(CliError::Metric("no usable shapes to compare".to_string()));
    }
    let ir = 1.0 - gen_clouds.len() as f64 / gen_seqs.len() as f64;

    let ref_size = config.eval_reference_size.min(ref_clouds.len());
    let gen_size = config.eval_generated_size.min(gen_clouds.len());
    let mut covs = Vec::new();
    let mut mmds = Vec::new();
    let mut jsds = Vec::new();
    for rep in 0..config.eval_repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(rep as u64));
        let ref_idx = index_sample(&mut rng, ref_clouds.len(), ref_size).into_vec();
        let gen_idx = index_sample(&mut rng, gen_clouds.len(), gen_size).into_vec();
        let refs: Vec<_> = ref_idx.iter().map(|&i| ref_clouds[i].clone()).collect();
        let gens: Vec<_> = gen_idx.iter().map(|&i| gen_clouds[i].clone()).collect();
        let matrix = pairwise_chamfer(&refs, &gens).map_err(|e| CliError::Metric(e.to_string()))?;
        covs.push(cov_from_matrix(&matrix));
        mmds.push(mmd_from_matrix(&matrix));
        jsds.push(
            jsd(&refs, &gens, config.eval_jsd_grid).map_err(|e| CliError::Metric(e.to_string()))?,
        );
    }

    // Latent Fréchet distance over the full program sets.
    let encode_all = |seqs: &[CadSequence]| -> Result<Vec<Vec<f32>>, CliError> {
        let mut mats = Vec::new();
        for s in seqs {
            let mut s = s.clone();
            s.padded_len = model.config.n;
            mats.push(gencad_core::lang::encode_sequence(&s)?);
        }
        let mut rows = Vec::with_capacity(mats.len());
        for chunk in mats.chunks(64) {
            let z = model.encode_frozen(chunk).map_err(|e| CliError::Train(e.to_string()))?;
            for r in 0..chunk.len() {
                rows.push(z.row(r).to_vec());
            }
        }
        Ok(rows)
    };
    let ref_latents = encode_all(&ref_seqs)?;
    let gen_latents = encode_all(&gen_seqs)?;
    let fid_result = fid(&ref_latents, &gen_latents).map_err(|e| CliError::Metric(e.to_string()))?;
    if fid_result.clipped_eigenvalues > 0 {
        eprintln!(
            "warning: clipped {} negative eigenvalues in the covariance square root",
            fid_result.clipped_eigenvalues
        );
    }

    let protocol = |r: MetricReport| -> MetricReport {
        r.with("split", split)
            .with("reference_size", ref_size)
            .with("generated_size", gen_size)
            .with("generated_total", gen_seqs.len())
            .with("n_points", config.eval_points)
            .with("jsd_grid", config.eval_jsd_grid)
            .with("repeats", config.eval_repeats)
            .with("seed", config.seed)
    };
    let reports = vec![
        protocol(MetricReport::repeated("cov", covs)),
        protocol(MetricReport::repeated("mmd", mmds)),
        protocol(MetricReport::repeated("jsd", jsds)),
        protocol(MetricReport::single("fid_latent", fid_result.value)),
        protocol(MetricReport::single("ir", ir)),
    ];
    let provenance = Provenance {
        command: format!("evaluate-gen --split {split}"),
        seed: config.seed,
        config_digest: config.digest(),
    };
    write_reports(out_dir, "gen", &reports, &provenance)?;
    Ok(reports)
}
