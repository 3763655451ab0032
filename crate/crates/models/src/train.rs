//! Training loops for the three stages, shared by the CLI and the
//! acceptance runs: minibatching, warmup, clipping, plateau scheduling,
//! early stopping on target metrics, and line-oriented logging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gencad_core::lang::SeqMatrix;
use gencad_core::metrics::recon::{cmd_accuracy, param_accuracy};
use gencad_nn::layers::Mode;
use gencad_nn::optim::{clip_grad_norm, scale_grads, warmup_lr, zero_grads, Adam, ReduceOnPlateau};
use gencad_nn::tensor::Tensor;

use crate::ccip::{ccip_loss, in_batch_top1, CcipModel};
use crate::cdp::{CdpModel, DeterministicPrior};
use crate::csr::CsrModel;
use crate::ModelError;

/// One log line per optimizer step (or evaluation).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct CsrTrainOptions {
    pub lr: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub eval_every: u64,
    pub target_cmd_acc: f64,
    pub target_param_acc: f64,
    pub eta: u8,
    pub seed: u64,
}

impl Default for CsrTrainOptions {
    fn default() -> Self {
        CsrTrainOptions {
            lr: 1e-3,
            warmup_steps: 200,
            max_steps: 5000,
            batch_size: 64,
            clip_norm: 1.0,
            eval_every: 100,
            target_cmd_acc: 0.99,
            target_param_acc: 0.95,
            eta: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsrTrainResult {
    pub log: Vec<LogRecord>,
    pub steps: u64,
    pub cmd_acc: f64,
    pub param_acc: f64,
    pub reached_target: bool,
}

/// Reconstruction accuracy of the model over a sequence set.
pub fn csr_reconstruction_accuracy(
    model: &CsrModel<f32>,
    mats: &[SeqMatrix],
    eta: u8,
) -> Result<(f64, f64), ModelError> {
    let mut preds = Vec::with_capacity(mats.len());
    for chunk in mats.chunks(64) {
        let z = model.encode_frozen(chunk)?;
        preds.extend(model.greedy_decode(&z)?);
    }
    let cmd = cmd_accuracy(&preds, mats).map_err(|e| ModelError::Dim(e.to_string()))?;
    let par = param_accuracy(&preds, mats, eta).map_err(|e| ModelError::Dim(e.to_string()))?;
    Ok((cmd, par))
}

/// Train the autoencoder on a set of encoded sequences, stopping early when
/// the target reconstruction accuracies are reached.
pub fn train_csr(
    model: &mut CsrModel<f32>,
    mats: &[SeqMatrix],
    opts: &CsrTrainOptions,
) -> Result<CsrTrainResult, ModelError> {
    let mut opt = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..mats.len()).collect();
    let mut log = Vec::new();
    let mut step = 0u64;
    let mut cursor = mats.len();
    let (mut cmd, mut par) = (0.0, 0.0);
    let mut reached = false;

    while step < opts.max_steps {
        if cursor + opts.batch_size > mats.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<SeqMatrix> =
            order[cursor..(cursor + opts.batch_size).min(mats.len())]
                .iter()
                .map(|&i| mats[i].clone())
                .collect();
        cursor += opts.batch_size;

        zero_grads(model);
        let loss = model.loss_and_backward(&batch, Mode::Train, true)?;
        clip_grad_norm(model, opts.clip_norm);
        opt.lr = warmup_lr(opts.lr, step, opts.warmup_steps);
        opt.step(model);
        step += 1;
        log.push(LogRecord { step, loss, lr: opt.lr });

        if step % opts.eval_every == 0 || step == opts.max_steps {
            let (c, p) = csr_reconstruction_accuracy(model, mats, opts.eta)?;
            cmd = c;
            par = p;
            if cmd >= opts.target_cmd_acc && par >= opts.target_param_acc {
                reached = true;
                break;
            }
        }
    }
    if !reached {
        let (c, p) = csr_reconstruction_accuracy(model, mats, opts.eta)?;
        cmd = c;
        par = p;
        reached = cmd >= opts.target_cmd_acc && par >= opts.target_param_acc;
    }
    Ok(CsrTrainResult { log, steps: step, cmd_acc: cmd, param_acc: par, reached_target: reached })
}

#[derive(Debug, Clone)]
pub struct CcipTrainOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_patience: usize,
    pub max_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub target_top1: f64,
    pub target_loss: f64,
    pub seed: u64,
}

impl Default for CcipTrainOptions {
    fn default() -> Self {
        CcipTrainOptions {
            lr: 1e-3,
            weight_decay: 1e-4,
            plateau_patience: 10,
            max_steps: 2000,
            batch_size: 32,
            eval_every: 25,
            target_top1: 1.0,
            target_loss: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CcipTrainResult {
    pub log: Vec<LogRecord>,
    pub steps: u64,
    pub top1: f64,
    pub loss: f64,
    pub reached_target: bool,
}

/// Slice image rows out of an `[N, 1, S, S]` tensor.
fn image_batch(images: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let shape = images.shape();
    let (s1, s2) = (shape[2], shape[3]);
    let stride = shape[1] * s1 * s2;
    let mut out = Tensor::zeros(&[idx.len(), shape[1], s1, s2]);
    for (r, &i) in idx.iter().enumerate() {
        out.data_mut()[r * stride..(r + 1) * stride]
            .copy_from_slice(&images.data()[i * stride..(i + 1) * stride]);
    }
    out
}

fn latent_batch(latents: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let d = latents.cols();
    let mut out = Tensor::zeros(&[idx.len(), d]);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(latents.row(i));
    }
    out
}

/// Train the image encoder against precomputed frozen CAD latents.
pub fn train_ccip(
    model: &mut CcipModel<f32>,
    mats: &[SeqMatrix],
    images: &Tensor<f32>,
    opts: &CcipTrainOptions,
) -> Result<CcipTrainResult, ModelError> {
    let n = mats.len();
    if images.shape()[0] != n {
        return Err(ModelError::Dim(format!("{n} sequences vs {} images", images.shape()[0])));
    }
    // The CAD encoder is frozen: encode once.
    let mut cad_latents = Tensor::zeros(&[n, model.cad_encoder.config.d_z]);
    for (chunk_start, chunk) in mats.chunks(64).enumerate().map(|(i, c)| (i * 64, c)) {
        let z = model.cad_encoder.encode_frozen(chunk)?;
        for r in 0..chunk.len() {
            cad_latents.row_mut(chunk_start + r).copy_from_slice(z.row(r));
        }
    }

    let mut opt = Adam::adamw(opts.lr, opts.weight_decay);
    let mut sched = ReduceOnPlateau::new(opts.lr, opts.plateau_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut step = 0u64;
    let mut cursor = n;
    let (mut top1, mut cur_loss) = (0.0, f64::INFINITY);
    let mut reached = false;
    let temperature = model.temperature;

    while step < opts.max_steps {
        if cursor + opts.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + opts.batch_size).min(n)];
        cursor += opts.batch_size;
        let img_in = image_batch(images, idx);
        let cad_z = latent_batch(&cad_latents, idx);

        zero_grads(model);
        let img_z = model.image_encoder.forward(&img_in, Mode::Train);
        let (loss, dimg) = ccip_loss(&cad_z, &img_z, temperature)?;
        model.image_encoder.backward(&dimg);
        opt.step(model);
        step += 1;
        opt.lr = sched.observe(loss);
        log.push(LogRecord { step, loss, lr: opt.lr });

        if step % opts.eval_every == 0 || step == opts.max_steps {
            let (t1, l) = ccip_eval(model, &cad_latents, images)?;
            top1 = t1;
            cur_loss = l;
            if top1 >= opts.target_top1 && cur_loss <= opts.target_loss {
                reached = true;
                break;
            }
        }
    }
    if !reached {
        let (t1, l) = ccip_eval(model, &cad_latents, images)?;
        top1 = t1;
        cur_loss = l;
        reached = top1 >= opts.target_top1 && cur_loss <= opts.target_loss;
    }
    Ok(CcipTrainResult { log, steps: step, top1, loss: cur_loss, reached_target: reached })
}

fn ccip_eval(
    model: &CcipModel<f32>,
    cad_latents: &Tensor<f32>,
    images: &Tensor<f32>,
) -> Result<(f64, f64), ModelError> {
    let n = images.shape()[0];
    let all: Vec<usize> = (0..n).collect();
    let mut img_latents = Tensor::zeros(&[n, cad_latents.cols()]);
    for chunk in all.chunks(16) {
        let batch = image_batch(images, chunk);
        let z = model.image_encoder.forward_frozen(&batch);
        for (r, &i) in chunk.iter().enumerate() {
            img_latents.row_mut(i).copy_from_slice(z.row(r));
        }
    }
    let top1 = in_batch_top1(cad_latents, &img_latents);
    let (loss, _) = ccip_loss(cad_latents, &img_latents, model.temperature)?;
    Ok((top1, loss))
}

/// Encode all images with the frozen encoder.
pub fn encode_images_frozen(
    model: &CcipModel<f32>,
    images: &Tensor<f32>,
) -> Tensor<f32> {
    let n = images.shape()[0];
    let d = model.image_encoder.config.d_z;
    let all: Vec<usize> = (0..n).collect();
    let mut out = Tensor::zeros(&[n, d]);
    for chunk in all.chunks(16) {
        let batch = image_batch(images, chunk);
        let z = model.image_encoder.forward_frozen(&batch);
        for (r, &i) in chunk.iter().enumerate() {
            out.row_mut(i).copy_from_slice(z.row(r));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct CdpTrainOptions {
    pub lr: f64,
    pub max_steps: u64,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Micro-batches per optimizer step.
    pub accumulate: usize,
    pub seed: u64,
}

impl Default for CdpTrainOptions {
    fn default() -> Self {
        CdpTrainOptions {
            lr: 1e-3,
            max_steps: 4000,
            batch_size: 64,
            clip_norm: 1.0,
            accumulate: 2,
            seed: 0,
        }
    }
}

/// Train the diffusion prior on latents (optionally conditioned).
pub fn train_cdp(
    model: &mut CdpModel<f32>,
    z0: &Tensor<f32>,
    cond: Option<&Tensor<f32>>,
    opts: &CdpTrainOptions,
) -> Result<Vec<LogRecord>, ModelError> {
    let n = z0.rows();
    let mut opt = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut cursor = n;
    let mut micro = 0usize;
    zero_grads(model);
    for step in 1..=opts.max_steps {
        if cursor + opts.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + opts.batch_size).min(n)];
        cursor += opts.batch_size;
        let zb = latent_batch(z0, idx);
        let cb = cond.map(|c| latent_batch(c, idx));
        let loss = model.train_step(&zb, cb.as_ref(), &mut rng)?;
        micro += 1;
        if micro == opts.accumulate {
            scale_grads(model, 1.0 / opts.accumulate as f64);
            clip_grad_norm(model, opts.clip_norm);
            opt.step(model);
            zero_grads(model);
            micro = 0;
        }
        log.push(LogRecord { step, loss, lr: opt.lr });
    }
    Ok(log)
}

/// Train the deterministic prior with MSE on paired latents.
pub fn train_prior(
    model: &mut DeterministicPrior<f32>,
    z_image: &Tensor<f32>,
    z_cad: &Tensor<f32>,
    lr: f64,
    steps: u64,
    batch_size: usize,
    seed: u64,
) -> Vec<LogRecord> {
    let n = z_image.rows();
    let mut opt = Adam::new(lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut cursor = n;
    for step in 1..=steps {
        if cursor + batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + batch_size).min(n)];
        cursor += batch_size;
        zero_grads(model);
        let loss = model.train_step(&latent_batch(z_image, idx), &latent_batch(z_cad, idx));
        opt.step(model);
        log.push(LogRecord { step, loss, lr });
    }
    log
}
