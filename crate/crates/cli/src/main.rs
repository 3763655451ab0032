use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gencad_cli::config::{PipelineConfig, CONFIG_TEMPLATE};
use gencad_cli::ops;

/// Image-conditional CAD program pipeline: synthesize a corpus, render it,
/// train the three stages, generate programs from images, evaluate, and
/// retrieve. GENCAD_SEED overrides the config seed.
#[derive(Parser)]
#[command(name = "gencad", version, about)]
struct Cli {
    /// Pipeline config file (omit for built-in desk-scale defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the documented default config to stdout or a file.
    InitConfig {
        /// Destination path (stdout when omitted).
        out: Option<PathBuf>,
    },
    /// Sample a synthetic corpus and write sequences + manifest.
    SynthDataset {
        /// Output dataset directory.
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
    },
    /// Render scale variants (images + sketches) for a dataset.
    RenderDataset {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
    },
    /// Train the sequence autoencoder.
    TrainCsr {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        out: PathBuf,
        #[arg(long, default_value = "checkpoints/csr_log.jsonl")]
        log: PathBuf,
    },
    /// Train the contrastive CAD-image model (requires a CSR checkpoint).
    TrainCcip {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long, default_value = "checkpoints/ccip.gckp")]
        out: PathBuf,
        #[arg(long, default_value = "checkpoints/ccip_log.jsonl")]
        log: PathBuf,
        /// Train against sketches instead of renders.
        #[arg(long)]
        sketches: bool,
    },
    /// Train the diffusion prior (requires CSR, and CCIP when conditional).
    TrainCdp {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long)]
        ccip: Option<PathBuf>,
        #[arg(long, default_value = "checkpoints/cdp.gckp")]
        out: PathBuf,
        #[arg(long, default_value = "checkpoints/cdp_log.jsonl")]
        log: PathBuf,
    },
    /// Generate programs from images through the trained stack.
    Generate {
        /// Query image files (PGM).
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long, default_value = "checkpoints/ccip.gckp")]
        ccip: PathBuf,
        #[arg(long, default_value = "checkpoints/cdp.gckp")]
        cdp: PathBuf,
        #[arg(long, default_value_t = 1)]
        n_per_image: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "generated")]
        out: PathBuf,
    },
    /// Reconstruction metrics of a trained autoencoder over a split.
    EvaluateRecon {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Generative set metrics of generated programs against a split.
    EvaluateGen {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        /// Directory of generated program JSON files.
        #[arg(long, default_value = "generated/programs")]
        generated: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Image-based retrieval: ranked table for one image, or the batch
    /// protocol table.
    Retrieve {
        #[arg(long, default_value = "dataset/manifest.json")]
        manifest: PathBuf,
        #[arg(long, default_value = "checkpoints/csr.gckp")]
        csr: PathBuf,
        #[arg(long, default_value = "checkpoints/ccip.gckp")]
        ccip: PathBuf,
        /// Corpus split to index (train|val|test|all).
        #[arg(long, default_value = "all")]
        split: String,
        /// Persisted index path (rebuilt when absent).
        #[arg(long, default_value = "checkpoints/index.gcix")]
        index: PathBuf,
        /// Query image; prints a ranked table.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Run the batch accuracy protocol instead.
        #[arg(long)]
        protocol: bool,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    Ok(cfg.with_env_seed())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli.config)?;

    match cli.command {
        Command::InitConfig { out } => match out {
            Some(path) => {
                std::fs::write(&path, CONFIG_TEMPLATE)?;
                println!("wrote {}", path.display());
            }
            None => print!("{CONFIG_TEMPLATE}"),
        },
        Command::SynthDataset { out } => {
            std::fs::create_dir_all(&out)?;
            let manifest = ops::data::synth_dataset(&config, &out)?;
            let total: usize = manifest.splits.values().map(|v| v.len()).sum();
            for (split, entries) in &manifest.splits {
                println!("{split}: {} models", entries.len());
            }
            println!("synthesized {total} models into {}", out.display());
        }
        Command::RenderDataset { manifest } => {
            let m = ops::data::render_dataset(&config, &manifest)?;
            let variants: usize = m.all_entries().map(|e| e.variants.len()).sum();
            println!("rendered {variants} variants ({} drops logged)", m.drops.len());
        }
        Command::TrainCsr { manifest, out, log } => {
            ensure_parent(&out)?;
            ensure_parent(&log)?;
            let summary = ops::trainops::train_csr_cmd(&config, &manifest, &out, &log)?;
            println!(
                "train-csr: {} steps, cmd_acc {:.4}, param_acc {:.4}{}",
                summary.steps,
                summary.cmd_acc,
                summary.param_acc,
                if summary.reached_target { " (target reached)" } else { "" }
            );
        }
        Command::TrainCcip { manifest, csr, out, log, sketches } => {
            ensure_parent(&out)?;
            ensure_parent(&log)?;
            let summary =
                ops::trainops::train_ccip_cmd(&config, &manifest, &csr, &out, &log, sketches)?;
            println!(
                "train-ccip: {} steps over {} pairs, top1 {:.4}, loss {:.4}{}",
                summary.steps,
                summary.pairs,
                summary.top1,
                summary.loss,
                if summary.reached_target { " (target reached)" } else { "" }
            );
        }
        Command::TrainCdp { manifest, csr, ccip, out, log } => {
            ensure_parent(&out)?;
            ensure_parent(&log)?;
            let summary = ops::trainops::train_cdp_cmd(
                &config,
                &manifest,
                &csr,
                ccip.as_deref(),
                &out,
                &log,
            )?;
            println!(
                "train-cdp: {} steps, mean tail loss {:.5}, conditional={}",
                summary.steps, summary.final_loss, summary.conditional
            );
        }
        Command::Generate { images, csr, ccip, cdp, n_per_image, seed, out } => {
            let paths = ops::genops::GeneratorPaths { csr: &csr, ccip: &ccip, cdp: &cdp };
            let report =
                ops::genops::generate_cmd(&config, &images, &paths, n_per_image, seed, &out)?;
            println!(
                "generated {} programs, invalid ratio {:.3}",
                report.outputs.len(),
                report.invalid_ratio
            );
        }
        Command::EvaluateRecon { manifest, csr, split, out } => {
            let reports = ops::evalops::evaluate_recon(&config, &manifest, &csr, &split, &out)?;
            for r in &reports {
                println!("{}: {:.6}", r.name, r.value);
            }
        }
        Command::EvaluateGen { manifest, generated, csr, split, out } => {
            let reports =
                ops::evalops::evaluate_gen(&config, &manifest, &generated, &csr, &split, &out)?;
            for r in &reports {
                match r.std_dev {
                    Some(s) => println!("{}: {:.6} ± {:.6}", r.name, r.value, s),
                    None => println!("{}: {:.6}", r.name, r.value),
                }
            }
        }
        Command::Retrieve { manifest, csr, ccip, split, index, image, top_k, protocol, out } => {
            if protocol {
                let reports = ops::retrieveops::retrieve_protocol(
                    &config, &manifest, &csr, &ccip, &split, &out,
                )?;
                for r in &reports {
                    println!(
                        "{}: {:.2}% ± {:.2}",
                        r.name,
                        100.0 * r.value,
                        100.0 * r.std_dev.unwrap_or(0.0)
                    );
                }
            } else {
                let Some(image) = image else {
                    bail!("retrieve needs --image <path> or --protocol");
                };
                ensure_parent(&index)?;
                let idx = if index.exists() {
                    let mut r = std::io::BufReader::new(std::fs::File::open(&index)?);
                    gencad_models::retrieval::EmbeddingIndex::read_gcix(&mut r)
                        .map_err(|e| anyhow::anyhow!("{e}"))?
                } else {
                    ops::retrieveops::build_index_cmd(&config, &manifest, &csr, &split, &index)?
                };
                let hits = ops::retrieveops::retrieve_image(&idx, &ccip, &image, top_k)?;
                println!("{:<6} {:<16} similarity", "rank", "model");
                for h in &hits {
                    println!("{:<6} {:<16} {:.4}", h.rank, h.model_id, h.similarity);
                }
            }
        }
    }
    Ok(())
}

fn ensure_parent(path: &PathBuf) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}
