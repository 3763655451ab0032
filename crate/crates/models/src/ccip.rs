//! Contrastive CAD-image pretraining: a residual conv image encoder
//! projected into the CAD latent space, trained with the temperature-scaled
//! cross entropy over in-batch pairs while the CAD encoder stays frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gencad_core::scalar::Real;
use gencad_nn::conv::{AvgPool2d, BatchNorm2d, Conv2d};
use gencad_nn::layers::{Dropout, Linear, Mode, Relu};
use gencad_nn::tensor::{Param, Params, Tensor};

use crate::csr::CsrModel;
use crate::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CcipConfig {
    pub d_z: usize,
    /// Stage widths of the residual encoder.
    pub widths: [usize; 4],
    pub blocks_per_stage: usize,
    pub dropout: f64,
    /// Fixed similarity temperature.
    pub temperature: f64,
    pub input_size: usize,
    pub seed: u64,
}

impl CcipConfig {
    pub fn paper_scale() -> Self {
        CcipConfig {
            d_z: 256,
            widths: [64, 128, 256, 512],
            blocks_per_stage: 2,
            dropout: 0.1,
            temperature: 0.07,
            input_size: 256,
            seed: 0,
        }
    }

    /// Paper widths divided by 8.
    pub fn desk_scale() -> Self {
        CcipConfig { d_z: 64, widths: [8, 16, 32, 64], ..CcipConfig::paper_scale() }
    }
}

/// Residual basic block with dropout between the first norm and activation.
struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    drop: Dropout<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    down: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu2: Relu<T>,
}

impl<T: Real> BasicBlock<T> {
    fn new(in_c: usize, out_c: usize, stride: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let down = if stride != 1 || in_c != out_c {
            Some((Conv2d::new(in_c, out_c, 1, stride, 0, rng), BatchNorm2d::new(out_c)))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(out_c),
            drop: Dropout::new(dropout, rng),
            relu1: Relu::new(),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_c),
            down,
            relu2: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let h = self.conv1.forward(x);
        let h = self.bn1.forward(&h, mode);
        let h = self.drop.forward(&h, mode);
        let h = self.relu1.forward(&h);
        let h = self.conv2.forward(&h);
        let mut h = self.bn2.forward(&h, mode);
        let skip = match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x);
                bn.forward(&s, mode)
            }
            None => x.clone(),
        };
        h.add_assign(&skip);
        self.relu2.forward(&h)
    }

    fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward_frozen(x);
        let h = self.bn1.forward_frozen(&h);
        let h = self.relu1.forward_frozen(&h);
        let h = self.conv2.forward_frozen(&h);
        let mut h = self.bn2.forward_frozen(&h);
        let skip = match &self.down {
            Some((conv, bn)) => bn.forward_frozen(&conv.forward_frozen(x)),
            None => x.clone(),
        };
        h.add_assign(&skip);
        self.relu2.forward_frozen(&h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dh = self.relu2.backward(dy);
        // dh flows into both the main branch and the skip.
        let dmain = self.bn2.backward(&dh);
        let dmain = self.conv2.backward(&dmain);
        let dmain = self.relu1.backward(&dmain);
        let dmain = self.drop.backward(&dmain);
        let dmain = self.bn1.backward(&dmain);
        let mut dx = self.conv1.backward(&dmain);
        match &mut self.down {
            Some((conv, bn)) => {
                let ds = bn.backward(&dh);
                dx.add_assign(&conv.backward(&ds));
            }
            None => dx.add_assign(&dh),
        }
        dx
    }
}

impl<T: Real> Params<T> for BasicBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.bn1.visit_params(&format!("{prefix}.bn1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.bn2.visit_params(&format!("{prefix}.bn2"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_params(&format!("{prefix}.down_conv"), f);
            bn.visit_params(&format!("{prefix}.down_bn"), f);
        }
    }
}

/// Residual conv encoder: 7x7/2 stem, pooled /2, four stages at increasing
/// width (stride 2 from the second on), flattened and projected to d_z.
pub struct ImageEncoder<T> {
    pub config: CcipConfig,
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu<T>,
    stem_pool: AvgPool2d,
    blocks: Vec<BasicBlock<T>>,
    pub proj: Linear<T>,
}

impl<T: Real> ImageEncoder<T> {
    pub fn new(config: CcipConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(101));
        let w = config.widths;
        let stem_conv = Conv2d::new(1, w[0], 7, 2, 3, &mut rng);
        let mut blocks = Vec::new();
        let mut in_c = w[0];
        for (stage, &out_c) in w.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(in_c, out_c, stride, config.dropout, &mut rng));
                in_c = out_c;
            }
        }
        // 256 input: stem /2 -> pool /2 -> stages /1,/2,/2,/2 leaves 8x8.
        let feat = config.input_size / 32;
        let proj = Linear::new(w[3] * feat * feat, config.d_z, &mut rng);
        ImageEncoder {
            config,
            stem_conv,
            stem_bn: BatchNorm2d::new(w[0]),
            stem_relu: Relu::new(),
            stem_pool: AvgPool2d::new(3, 2, 1),
            blocks,
            proj,
        }
    }

    /// `[B, 1, S, S]` image batch to `[B, d_z]` latents.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let b = x.shape()[0];
        let h = self.stem_conv.forward(x);
        let h = self.stem_bn.forward(&h, mode);
        let h = self.stem_relu.forward(&h);
        let mut h = self.stem_pool.forward(&h);
        for blk in &mut self.blocks {
            h = blk.forward(&h, mode);
        }
        let flat = h.reshaped(&[b, self.proj.in_dim]);
        self.proj.forward(&flat)
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let b = x.shape()[0];
        let h = self.stem_conv.forward_frozen(x);
        let h = self.stem_bn.forward_frozen(&h);
        let h = self.stem_relu.forward_frozen(&h);
        let mut h = self.stem_pool.apply(&h);
        for blk in &self.blocks {
            h = blk.forward_frozen(&h);
        }
        let flat = h.reshaped(&[b, self.proj.in_dim]);
        self.proj.forward_frozen(&flat)
    }

    pub fn backward(&mut self, dlatent: &Tensor<T>) -> Tensor<T> {
        let dflat = self.proj.backward(dlatent);
        let b = dflat.shape()[0];
        let w3 = self.config.widths[3];
        let feat = self.config.input_size / 32;
        let mut dh = dflat.reshaped(&[b, w3, feat, feat]);
        for blk in self.blocks.iter_mut().rev() {
            dh = blk.backward(&dh);
        }
        let dh = self.stem_pool.backward(&dh);
        let dh = self.stem_relu.backward(&dh);
        let dh = self.stem_bn.backward(&dh);
        self.stem_conv.backward(&dh)
    }
}

impl<T: Real> Params<T> for ImageEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem_conv.visit_params(&format!("{prefix}.stem_conv"), f);
        self.stem_bn.visit_params(&format!("{prefix}.stem_bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{i}"), f);
        }
        self.proj.visit_params(&format!("{prefix}.proj"), f);
    }
}

/// The contrastive model: a trainable image encoder next to a frozen CAD
/// encoder. Parameter visits cover the image side only, so optimizers and
/// checkpoints can never touch the frozen half.
pub struct CcipModel<T> {
    pub image_encoder: ImageEncoder<T>,
    pub cad_encoder: CsrModel<T>,
    pub temperature: f64,
}

impl<T: Real> CcipModel<T> {
    pub fn new(config: CcipConfig, cad_encoder: CsrModel<T>) -> Result<Self, ModelError> {
        if cad_encoder.config.d_z != config.d_z {
            return Err(ModelError::Dim(format!(
                "CAD encoder d_z {} != image d_z {}",
                cad_encoder.config.d_z, config.d_z
            )));
        }
        let temperature = config.temperature;
        Ok(CcipModel { image_encoder: ImageEncoder::new(config), cad_encoder, temperature })
    }
}

impl<T: Real> Params<T> for CcipModel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.image_encoder.visit_params(&format!("{prefix}.image_encoder"), f);
    }
}

/// Row-normalize to unit L2 norm; returns the norms.
pub fn l2_normalize_rows<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt().max(1e-12);
        for v in out.row_mut(r) {
            *v = T::of(v.f64() / n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// The normalized temperature-scaled cross entropy over the 2B-view
/// construction: views alternate (cad_k, image_k); each anchor's positive is
/// its pair, every other view is a negative. Returns the loss and its
/// gradient with respect to the (unnormalized) image latents; the CAD side
/// is treated as frozen.
pub fn ccip_loss<T: Real>(
    cad_latents: &Tensor<T>,
    image_latents: &Tensor<T>,
    temperature: f64,
) -> Result<(f64, Tensor<T>), ModelError> {
    let b = cad_latents.rows();
    if b < 2 {
        return Err(ModelError::BatchTooSmall { need: 2, got: b });
    }
    if image_latents.rows() != b || image_latents.cols() != cad_latents.cols() {
        return Err(ModelError::Dim(format!(
            "latents {:?} vs {:?}",
            cad_latents.shape(),
            image_latents.shape()
        )));
    }
    let d = cad_latents.cols();
    let (cad_n, _) = l2_normalize_rows(cad_latents);
    let (img_n, img_norms) = l2_normalize_rows(image_latents);

    // Stack views: v[2k] = cad_k, v[2k+1] = img_k.
    let m = 2 * b;
    let mut views = vec![0.0f64; m * d];
    for k in 0..b {
        for c in 0..d {
            views[(2 * k) * d + c] = cad_n.row(k)[c].f64();
            views[(2 * k + 1) * d + c] = img_n.row(k)[c].f64();
        }
    }

    // Similarity matrix and per-anchor softmax over the other 2B-1 views.
    let mut sims = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mut s = 0.0;
            for c in 0..d {
                s += views[i * d + c] * views[j * d + c];
            }
            sims[i * m + j] = s / temperature;
        }
    }

    let mut loss = 0.0f64;
    let mut dsim = vec![0.0f64; m * m];
    let inv_m = 1.0 / m as f64;
    for a in 0..m {
        let pos = if a % 2 == 0 { a + 1 } else { a - 1 };
        let mut max = f64::NEG_INFINITY;
        for j in 0..m {
            if j != a {
                max = max.max(sims[a * m + j]);
            }
        }
        let mut denom = 0.0f64;
        for j in 0..m {
            if j != a {
                denom += (sims[a * m + j] - max).exp();
            }
        }
        let log_p = sims[a * m + pos] - max - denom.ln();
        loss -= inv_m * log_p;
        for j in 0..m {
            if j == a {
                continue;
            }
            let p = (sims[a * m + j] - max).exp() / denom;
            dsim[a * m + j] = inv_m * (p - if j == pos { 1.0 } else { 0.0 }) / temperature;
        }
    }

    // dV = (dS + dS^T) V, image rows only.
    let mut dimg_n = vec![0.0f64; b * d];
    for k in 0..b {
        let i = 2 * k + 1;
        for j in 0..m {
            let w = dsim[i * m + j] + dsim[j * m + i];
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                dimg_n[k * d + c] += w * views[j * d + c];
            }
        }
    }

    // Through the normalization: d/dx of x/|x| is (I - nn^T)/|x|.
    let mut dimg = Tensor::zeros(image_latents.shape());
    for k in 0..b {
        let nrow: Vec<f64> = img_n.row(k).iter().map(|v| v.f64()).collect();
        let g = &dimg_n[k * d..(k + 1) * d];
        let dot: f64 = nrow.iter().zip(g).map(|(n, g)| n * g).sum();
        for c in 0..d {
            dimg.row_mut(k)[c] = T::of((g[c] - nrow[c] * dot) / img_norms[k]);
        }
    }
    Ok((loss, dimg))
}

/// Fraction of in-batch queries whose own CAD latent has the highest cosine
/// similarity (the in-batch top-1 retrieval accuracy).
pub fn in_batch_top1<T: Real>(cad_latents: &Tensor<T>, image_latents: &Tensor<T>) -> f64 {
    let b = cad_latents.rows();
    let (cad_n, _) = l2_normalize_rows(cad_latents);
    let (img_n, _) = l2_normalize_rows(image_latents);
    let mut hits = 0usize;
    for q in 0..b {
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..b {
            let sim: f64 =
                img_n.row(q).iter().zip(cad_n.row(j)).map(|(a, c)| a.f64() * c.f64()).sum();
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        if best == q {
            hits += 1;
        }
    }
    hits as f64 / b as f64
}
