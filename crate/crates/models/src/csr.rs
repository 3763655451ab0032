//! Command-sequence autoencoder: causal transformer encoder pooled into one
//! latent per sequence, and a constant-query causal decoder emitting 6-way
//! type logits and 16 independent 256-way parameter logits per position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gencad_core::lang::{CommandType, SeqMatrix, MASK_LEVEL, PARAM_SLOTS, VOCAB_SIZE};
use gencad_core::scalar::Real;
use gencad_nn::attention::pe_table;
use gencad_nn::layers::{Embedding, Linear, Mode, Tanh};
use gencad_nn::loss::cross_entropy_weighted;
use gencad_nn::tensor::{Param, Params, Tensor};
use gencad_nn::TransformerLayer;

use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Autoencoder hyperparameters. `paper_scale` carries the full-size values;
/// `desk_scale` is what the bundled runs use.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsrConfig {
    pub d_z: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab: usize,
    pub param_slots: usize,
    pub levels: usize,
    pub n: usize,
    pub slot_embed_dim: usize,
    /// Relative weight of the parameter loss against the type loss.
    pub beta: f64,
    pub seed: u64,
}

impl CsrConfig {
    pub fn paper_scale() -> Self {
        CsrConfig {
            d_z: 256,
            enc_layers: 4,
            dec_layers: 4,
            heads: 8,
            ffn_dim: 512,
            dropout: 0.1,
            vocab: VOCAB_SIZE,
            param_slots: PARAM_SLOTS,
            levels: 256,
            n: 60,
            slot_embed_dim: 32,
            beta: 2.0,
            seed: 0,
        }
    }

    pub fn desk_scale() -> Self {
        CsrConfig {
            d_z: 64,
            enc_layers: 2,
            dec_layers: 2,
            heads: 8,
            ffn_dim: 512,
            dropout: 0.1,
            vocab: VOCAB_SIZE,
            param_slots: PARAM_SLOTS,
            levels: 256,
            n: 60,
            slot_embed_dim: 8,
            beta: 2.0,
            seed: 0,
        }
    }
}

/// Decoder logits for a batch.
pub struct DecodeOut<T> {
    /// `[B*N, vocab]`
    pub type_logits: Tensor<T>,
    /// `[B*N*slots, levels]`
    pub param_logits: Tensor<T>,
    pub batch: usize,
}

pub struct CsrModel<T> {
    pub config: CsrConfig,
    type_embed: Embedding<T>,
    slot_embeds: Vec<Embedding<T>>,
    param_proj: Linear<T>,
    pe: Tensor<T>,
    enc_layers: Vec<TransformerLayer<T>>,
    latent_proj: Linear<T>,
    latent_tanh: Tanh<T>,
    const_queries: Param<T>,
    z_proj: Linear<T>,
    dec_layers: Vec<TransformerLayer<T>>,
    type_head: Linear<T>,
    param_head: Linear<T>,
    // backward bookkeeping
    enc_cache: Option<EncCache>,
    dec_cache: Option<DecCache>,
}

struct EncCache {
    lengths: Vec<usize>,
    batch: usize,
}

struct DecCache {
    batch: usize,
}

impl<T: Real> CsrModel<T> {
    pub fn new(config: CsrConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_z;
        let type_embed = Embedding::new(config.vocab, d, &mut rng);
        let slot_embeds = (0..config.param_slots)
            .map(|_| Embedding::new(config.levels, config.slot_embed_dim, &mut rng))
            .collect();
        let param_proj = Linear::new(config.param_slots * config.slot_embed_dim, d, &mut rng);
        let pe = pe_table(config.n, d);
        let enc_layers = (0..config.enc_layers)
            .map(|_| TransformerLayer::new(d, config.heads, config.ffn_dim, config.dropout, &mut rng))
            .collect();
        let latent_proj = Linear::new(d, d, &mut rng);
        let const_queries = Param::new(gencad_nn::layers::init_uniform(&[config.n, d], d, &mut rng));
        let z_proj = Linear::new(d, d, &mut rng);
        let dec_layers = (0..config.dec_layers)
            .map(|_| TransformerLayer::new(d, config.heads, config.ffn_dim, config.dropout, &mut rng))
            .collect();
        let type_head = Linear::new(d, config.vocab, &mut rng);
        let param_head = Linear::new(d, config.param_slots * config.levels, &mut rng);
        CsrModel {
            config,
            type_embed,
            slot_embeds,
            param_proj,
            pe,
            enc_layers,
            latent_proj,
            latent_tanh: Tanh::new(),
            const_queries,
            z_proj,
            dec_layers,
            type_head,
            param_head,
            enc_cache: None,
            dec_cache: None,
        }
    }

    fn check_n(&self, mats: &[SeqMatrix]) -> Result<(), ModelError> {
        for m in mats {
            if m.padded_len() != self.config.n {
                return Err(ModelError::Dim(format!(
                    "sequence padded to {}, model expects N = {}",
                    m.padded_len(),
                    self.config.n
                )));
            }
        }
        Ok(())
    }

    fn gather_indices(&self, mats: &[SeqMatrix]) -> (Vec<usize>, Vec<Vec<usize>>, Vec<usize>) {
        let n = self.config.n;
        let mut type_idx = Vec::with_capacity(mats.len() * n);
        let mut slot_idx: Vec<Vec<usize>> = vec![Vec::with_capacity(mats.len() * n); PARAM_SLOTS];
        let mut lengths = Vec::with_capacity(mats.len());
        for m in mats {
            lengths.push(m.content_len().min(n));
            for i in 0..n {
                type_idx.push(m.type_code(i) as usize);
                for (s, slots) in slot_idx.iter_mut().enumerate() {
                    slots.push(m.level(i, s) as usize);
                }
            }
        }
        (type_idx, slot_idx, lengths)
    }

    /// Position-wise embeddings `[B, N, d]` (training path, caches held).
    fn embed(&mut self, mats: &[SeqMatrix]) -> (Tensor<T>, Vec<usize>) {
        let (type_idx, slot_idx, lengths) = self.gather_indices(mats);
        let b = mats.len();
        let (n, d, sd) = (self.config.n, self.config.d_z, self.config.slot_embed_dim);
        let te = self.type_embed.forward(&type_idx);
        let mut concat = Tensor::zeros(&[b * n, PARAM_SLOTS * sd]);
        for (s, idx) in slot_idx.iter().enumerate() {
            let se = self.slot_embeds[s].forward(idx);
            for r in 0..b * n {
                concat.row_mut(r)[s * sd..(s + 1) * sd].copy_from_slice(se.row(r));
            }
        }
        let pe_mixed = self.param_proj.forward(&concat);
        let mut x = te;
        x.add_assign(&pe_mixed);
        for r in 0..b * n {
            let pos = r % n;
            let pe_row = self.pe.row(pos).to_vec();
            for (v, pv) in x.row_mut(r).iter_mut().zip(pe_row) {
                *v = *v + pv;
            }
        }
        (x.reshaped(&[b, n, d]), lengths)
    }

    fn embed_frozen(&self, mats: &[SeqMatrix]) -> (Tensor<T>, Vec<usize>) {
        let (type_idx, slot_idx, lengths) = self.gather_indices(mats);
        let b = mats.len();
        let (n, d, sd) = (self.config.n, self.config.d_z, self.config.slot_embed_dim);
        let te = self.type_embed.forward_frozen(&type_idx);
        let mut concat = Tensor::zeros(&[b * n, PARAM_SLOTS * sd]);
        for (s, idx) in slot_idx.iter().enumerate() {
            let se = self.slot_embeds[s].forward_frozen(idx);
            for r in 0..b * n {
                concat.row_mut(r)[s * sd..(s + 1) * sd].copy_from_slice(se.row(r));
            }
        }
        let pe_mixed = self.param_proj.forward_frozen(&concat);
        let mut x = te;
        x.add_assign(&pe_mixed);
        for r in 0..b * n {
            let pos = r % n;
            for (v, &pv) in x.row_mut(r).iter_mut().zip(self.pe.row(pos)) {
                *v = *v + pv;
            }
        }
        (x.reshaped(&[b, n, d]), lengths)
    }

    fn pool(x: &Tensor<T>, lengths: &[usize], n: usize, d: usize) -> Tensor<T> {
        let b = lengths.len();
        let mut pooled = Tensor::zeros(&[b, d]);
        for (bi, &len) in lengths.iter().enumerate() {
            let len = len.max(1);
            let inv = T::of(1.0 / len as f64);
            for i in 0..len {
                let row = &x.data()[(bi * n + i) * d..(bi * n + i + 1) * d];
                for (p, &v) in pooled.row_mut(bi).iter_mut().zip(row) {
                    *p = *p + v * inv;
                }
            }
        }
        pooled
    }

    /// Encode sequences into latents `z` in `(-1, 1)^{d_z}` (training path).
    pub fn encode(&mut self, mats: &[SeqMatrix], mode: Mode) -> Result<Tensor<T>, ModelError> {
        self.check_n(mats)?;
        let (mut x, lengths) = self.embed(mats);
        for layer in &mut self.enc_layers {
            x = layer.forward(&x, true, mode);
        }
        let (n, d) = (self.config.n, self.config.d_z);
        let pooled = Self::pool(&x, &lengths, n, d);
        let z = self.latent_proj.forward(&pooled);
        let z = self.latent_tanh.forward(&z);
        self.enc_cache = Some(EncCache { lengths, batch: mats.len() });
        Ok(z)
    }

    /// Frozen encode: no caches, eval mode, parameters untouched.
    pub fn encode_frozen(&self, mats: &[SeqMatrix]) -> Result<Tensor<T>, ModelError> {
        self.check_n(mats)?;
        let (mut x, lengths) = self.embed_frozen(mats);
        for layer in &self.enc_layers {
            x = layer_forward_frozen(layer, &x, true);
        }
        let (n, d) = (self.config.n, self.config.d_z);
        let pooled = Self::pool(&x, &lengths, n, d);
        let mut z = self.latent_proj.forward_frozen(&pooled);
        for v in z.data_mut() {
            *v = v.tanh();
        }
        Ok(z)
    }

    /// Backward through the encoder given `dz`.
    pub fn encode_backward(&mut self, dz: &Tensor<T>) {
        let cache = self.enc_cache.take().expect("encode_backward before encode");
        let (n, d) = (self.config.n, self.config.d_z);
        let dz = self.latent_tanh.backward(dz);
        let dpooled = self.latent_proj.backward(&dz);
        // Mean-pool backward.
        let mut dx = Tensor::zeros(&[cache.batch, n, d]);
        for (bi, &len) in cache.lengths.iter().enumerate() {
            let len = len.max(1);
            let inv = T::of(1.0 / len as f64);
            for i in 0..len {
                let off = (bi * n + i) * d;
                for (c, &g) in dx.data_mut()[off..off + d].iter_mut().zip(dpooled.row(bi)) {
                    *c = *c + g * inv;
                }
            }
        }
        let mut grad = dx;
        for layer in self.enc_layers.iter_mut().rev() {
            grad = layer.backward(&grad);
        }
        self.embed_backward(&grad, cache.batch);
    }

    fn embed_backward(&mut self, dx: &Tensor<T>, b: usize) {
        let (n, d, sd) = (self.config.n, self.config.d_z, self.config.slot_embed_dim);
        let flat = dx.clone().reshaped(&[b * n, d]);
        self.type_embed.backward(&flat);
        let dconcat = self.param_proj.backward(&flat);
        for (s, emb) in self.slot_embeds.iter_mut().enumerate() {
            let mut dslot = Tensor::zeros(&[b * n, sd]);
            for r in 0..b * n {
                dslot.row_mut(r).copy_from_slice(&dconcat.row(r)[s * sd..(s + 1) * sd]);
            }
            emb.backward(&dslot);
        }
    }

    fn queries(&self, z: &Tensor<T>, zp: &Tensor<T>) -> Tensor<T> {
        let b = z.rows();
        let (n, d) = (self.config.n, self.config.d_z);
        let mut q = Tensor::zeros(&[b, n, d]);
        for bi in 0..b {
            for i in 0..n {
                let off = (bi * n + i) * d;
                let cq = self.const_queries.value.row(i);
                let pe = self.pe.row(i);
                let zr = zp.row(bi);
                let out = &mut q.data_mut()[off..off + d];
                for c in 0..d {
                    out[c] = cq[c] + pe[c] + zr[c];
                }
            }
        }
        q
    }

    /// Decode latents into per-position logits (training path).
    pub fn decode(&mut self, z: &Tensor<T>, mode: Mode) -> Result<DecodeOut<T>, ModelError> {
        if z.cols() != self.config.d_z {
            return Err(ModelError::Dim(format!(
                "latent dim {} != d_z {}",
                z.cols(),
                self.config.d_z
            )));
        }
        let b = z.rows();
        let (n, d) = (self.config.n, self.config.d_z);
        let zp = self.z_proj.forward(z);
        let mut x = self.queries(z, &zp);
        for layer in &mut self.dec_layers {
            x = layer.forward(&x, true, mode);
        }
        let flat = x.reshaped(&[b * n, d]);
        let type_logits = self.type_head.forward(&flat);
        let param_logits = self
            .param_head
            .forward(&flat)
            .reshaped(&[b * n * self.config.param_slots, self.config.levels]);
        self.dec_cache = Some(DecCache { batch: b });
        Ok(DecodeOut { type_logits, param_logits, batch: b })
    }

    /// Frozen decode for generation.
    pub fn decode_frozen(&self, z: &Tensor<T>) -> Result<DecodeOut<T>, ModelError> {
        if z.cols() != self.config.d_z {
            return Err(ModelError::Dim(format!(
                "latent dim {} != d_z {}",
                z.cols(),
                self.config.d_z
            )));
        }
        let b = z.rows();
        let (n, d) = (self.config.n, self.config.d_z);
        let zp = self.z_proj.forward_frozen(z);
        let mut x = self.queries(z, &zp);
        for layer in &self.dec_layers {
            x = layer_forward_frozen(layer, &x, true);
        }
        let flat = x.reshaped(&[b * n, d]);
        let type_logits = self.type_head.forward_frozen(&flat);
        let param_logits = self
            .param_head
            .forward_frozen(&flat)
            .reshaped(&[b * n * self.config.param_slots, self.config.levels]);
        Ok(DecodeOut { type_logits, param_logits, batch: b })
    }

    /// Backward through the decoder; returns `dz`.
    pub fn decode_backward(&mut self, dtype: &Tensor<T>, dparam: &Tensor<T>) -> Tensor<T> {
        let cache = self.dec_cache.take().expect("decode_backward before decode");
        let b = cache.batch;
        let (n, d) = (self.config.n, self.config.d_z);
        let dflat_type = self.type_head.backward(dtype);
        let dparam_flat = dparam.clone().reshaped(&[b * n, self.config.param_slots * self.config.levels]);
        let dflat_param = self.param_head.backward(&dparam_flat);
        let mut grad = dflat_type;
        grad.add_assign(&dflat_param);
        let mut grad = grad.reshaped(&[b, n, d]);
        for layer in self.dec_layers.iter_mut().rev() {
            grad = layer.backward(&grad);
        }
        // Split into const-query grads and z-projection grads.
        let mut dzp = Tensor::zeros(&[b, d]);
        for bi in 0..b {
            for i in 0..n {
                let off = (bi * n + i) * d;
                let g = &grad.data()[off..off + d];
                for c in 0..d {
                    self.const_queries.grad.add_at(i * d + c, g[c]);
                    dzp.add_at(bi * d + c, g[c]);
                }
            }
        }
        self.z_proj.backward(&dzp)
    }

    /// Combined loss per the weighted type/parameter cross entropy; returns
    /// the scalar loss and backpropagates into the decoder and encoder when
    /// `train` is set.
    pub fn loss_and_backward(
        &mut self,
        mats: &[SeqMatrix],
        mode: Mode,
        train: bool,
    ) -> Result<f64, ModelError> {
        let z = self.encode(mats, mode)?;
        let out = self.decode(&z, mode)?;
        let (loss, dtype, dparam) = csr_loss(&out, mats, self.config.beta)?;
        if train {
            let dz = self.decode_backward(&dtype, &dparam);
            self.encode_backward(&dz);
        } else {
            self.enc_cache = None;
            self.dec_cache = None;
        }
        Ok(loss)
    }

    /// Greedy argmax reconstruction: predicted rows are shifted one position
    /// (the decoder predicts the command after each query index), so the
    /// start-of-loop row is prepended to form the full program matrix.
    pub fn greedy_decode(&self, z: &Tensor<T>) -> Result<Vec<SeqMatrix>, ModelError> {
        let out = self.decode_frozen(z)?;
        let b = out.batch;
        let n = self.config.n;
        let mut result = Vec::with_capacity(b);
        for bi in 0..b {
            let mut rows = Vec::with_capacity(n);
            let mut sol_row = [MASK_LEVEL; 1 + PARAM_SLOTS];
            sol_row[0] = CommandType::Sol.code();
            rows.push(sol_row);
            for i in 0..n - 1 {
                let r = bi * n + i;
                let trow = out.type_logits.row(r);
                let ty_code = argmax(trow) as u8;
                let mut row = [MASK_LEVEL; 1 + PARAM_SLOTS];
                row[0] = ty_code;
                if let Ok(ty) = CommandType::from_code(ty_code) {
                    for slot in ty.layout().active_slots() {
                        let prow = out.param_logits.row(r * PARAM_SLOTS + slot);
                        let lvl = match ty.layout().kind(slot) {
                            gencad_core::lang::SlotKind::Discrete { cardinality } => {
                                argmax(&prow[..cardinality as usize]) as u8
                            }
                            _ => argmax(prow) as u8,
                        };
                        row[1 + slot] = lvl;
                    }
                }
                rows.push(row);
            }
            result.push(SeqMatrix::from_rows(rows));
        }
        Ok(result)
    }
}

/// Shift a target matrix left by one (the decoder predicts the next row);
/// the final position targets EOS.
pub fn shifted_targets(mat: &SeqMatrix) -> (Vec<usize>, Vec<[u8; PARAM_SLOTS]>, Vec<u8>) {
    let n = mat.padded_len();
    let mut types = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for i in 0..n {
        if i + 1 < n {
            types.push(mat.type_code(i + 1) as usize);
            let mut row = [0u8; PARAM_SLOTS];
            for (s, r) in row.iter_mut().enumerate() {
                *r = mat.level(i + 1, s);
            }
            levels.push(row);
            codes.push(mat.type_code(i + 1));
        } else {
            types.push(CommandType::Eos.code() as usize);
            levels.push([MASK_LEVEL; PARAM_SLOTS]);
            codes.push(CommandType::Eos.code());
        }
    }
    (types, levels, codes)
}

/// The combined reconstruction loss: mean over the batch of
/// `sum_positions CE(type) + beta * sum_positions sum_active CE(level)`.
/// Returns `(loss, dtype_logits, dparam_logits)`.
pub fn csr_loss<T: Real>(
    out: &DecodeOut<T>,
    mats: &[SeqMatrix],
    beta: f64,
) -> Result<(f64, Tensor<T>, Tensor<T>), ModelError> {
    let b = out.batch;
    if b != mats.len() {
        return Err(ModelError::Dim(format!("{b} logit groups vs {} targets", mats.len())));
    }
    let n = mats[0].padded_len();
    let inv_b = 1.0 / b as f64;

    let mut type_targets = Vec::with_capacity(b * n);
    let mut param_targets = Vec::with_capacity(b * n * PARAM_SLOTS);
    let mut param_weights = Vec::with_capacity(b * n * PARAM_SLOTS);
    for mat in mats {
        let (types, levels, codes) = shifted_targets(mat);
        for i in 0..n {
            type_targets.push(types[i]);
            let ty = CommandType::from_code(codes[i])?;
            let layout = ty.layout();
            for s in 0..PARAM_SLOTS {
                // Masked slots carry the reserved level; excluded from loss.
                param_targets.push(levels[i][s] as usize);
                param_weights.push(if layout.is_active(s) { beta * inv_b } else { 0.0 });
            }
        }
    }
    let type_weights = vec![inv_b; b * n];
    let (type_loss, dtype) = cross_entropy_weighted(&out.type_logits, &type_targets, &type_weights);
    let (param_loss, dparam) =
        cross_entropy_weighted(&out.param_logits, &param_targets, &param_weights);
    Ok((type_loss + param_loss, dtype, dparam))
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode forward through a transformer layer without touching caches.
/// Dropout is identity in eval mode, so this only needs the layer's frozen
/// sublayer paths.
fn layer_forward_frozen<T: Real>(layer: &TransformerLayer<T>, x: &Tensor<T>, causal: bool) -> Tensor<T> {
    layer.forward_frozen(x, causal)
}

impl<T: Real> Params<T> for CsrModel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.type_embed.visit_params(&format!("{prefix}.type_embed"), f);
        for (i, e) in self.slot_embeds.iter_mut().enumerate() {
            e.visit_params(&format!("{prefix}.slot_embed{i}"), f);
        }
        self.param_proj.visit_params(&format!("{prefix}.param_proj"), f);
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.enc{i}"), f);
        }
        self.latent_proj.visit_params(&format!("{prefix}.latent_proj"), f);
        f(&format!("{prefix}.const_queries"), &mut self.const_queries);
        self.z_proj.visit_params(&format!("{prefix}.z_proj"), f);
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.dec{i}"), f);
        }
        self.type_head.visit_params(&format!("{prefix}.type_head"), f);
        self.param_head.visit_params(&format!("{prefix}.param_head"), f);
    }
}

/// Visitor over only the encoder-side parameters (what CCIP freezes).
pub struct EncoderParamsView<'a, T>(pub &'a mut CsrModel<T>);

impl<T: Real> Params<T> for EncoderParamsView<'_, T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.0.type_embed.visit_params(&format!("{prefix}.type_embed"), f);
        for (i, e) in self.0.slot_embeds.iter_mut().enumerate() {
            e.visit_params(&format!("{prefix}.slot_embed{i}"), f);
        }
        self.0.param_proj.visit_params(&format!("{prefix}.param_proj"), f);
        for (i, l) in self.0.enc_layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.enc{i}"), f);
        }
        self.0.latent_proj.visit_params(&format!("{prefix}.latent_proj"), f);
    }
}
