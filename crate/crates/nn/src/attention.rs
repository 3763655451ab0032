//! Multi-head self-attention, sinusoidal positions, and the post-norm
//! transformer layer built from them.

use rand_chacha::ChaCha8Rng;

use gencad_core::scalar::Real;

use crate::layers::{softmax_slice, Dropout, LayerNorm, Linear, Mode, Relu};
use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::tensor::{Param, Params, Tensor};

/// Sinusoidal positional encoding: `pe[2i] = sin(pos / 10000^(2i/d))`,
/// `pe[2i+1] = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe<T: Real>(pos: usize, dim: usize) -> Vec<T> {
    let mut pe = vec![T::zero(); dim];
    let mut i = 0;
    while 2 * i < dim {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = pos as f64 * freq;
        pe[2 * i] = T::of(angle.sin());
        if 2 * i + 1 < dim {
            pe[2 * i + 1] = T::of(angle.cos());
        }
        i += 1;
    }
    pe
}

/// Positional encoding table for all positions below `n`.
pub fn pe_table<T: Real>(n: usize, dim: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[n, dim]);
    for p in 0..n {
        t.row_mut(p).copy_from_slice(&sinusoidal_pe(p, dim));
    }
    t
}

/// Multi-head scaled dot-product self-attention with optional causal mask.
pub struct MultiHeadAttention<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
    pub d_model: usize,
    cache: Option<AttnCache<T>>,
}

struct AttnCache<T> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Vec<Tensor<T>>, // per (batch, head): [N, N]
    batch: usize,
    seq: usize,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(d_model: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert_eq!(d_model % heads, 0, "model dim {d_model} not divisible by {heads} heads");
        MultiHeadAttention {
            wq: Linear::new(d_model, d_model, rng),
            wk: Linear::new(d_model, d_model, rng),
            wv: Linear::new(d_model, d_model, rng),
            wo: Linear::new(d_model, d_model, rng),
            heads,
            d_model,
            cache: None,
        }
    }

    fn head_slice(src: &Tensor<T>, b: usize, seq: usize, h: usize, dk: usize, d: usize) -> Tensor<T> {
        let mut out = Tensor::zeros(&[seq, dk]);
        for i in 0..seq {
            let row = &src.data()[(b * seq + i) * d + h * dk..(b * seq + i) * d + (h + 1) * dk];
            out.row_mut(i).copy_from_slice(row);
        }
        out
    }

    fn head_scatter(dst: &mut Tensor<T>, src: &Tensor<T>, b: usize, seq: usize, h: usize, dk: usize, d: usize) {
        for i in 0..seq {
            let dst_off = (b * seq + i) * d + h * dk;
            let s = src.row(i);
            let dd = &mut dst.data_mut()[dst_off..dst_off + dk];
            for (a, &v) in dd.iter_mut().zip(s) {
                *a = *a + v;
            }
        }
    }

    /// Self-attention over `x: [B, N, d]`.
    pub fn forward(&mut self, x: &Tensor<T>, causal: bool) -> Tensor<T> {
        let (batch, seq) = match *x.shape() {
            [b, n, d] => {
                assert_eq!(d, self.d_model);
                (b, n)
            }
            _ => panic!("attention expects [B, N, d], got {:?}", x.shape()),
        };
        let d = self.d_model;
        let dk = d / self.heads;
        let scale = T::of(1.0 / (dk as f64).sqrt());

        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);

        let mut ctx = Tensor::zeros(&[batch, seq, d]);
        let mut attn_maps = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for h in 0..self.heads {
                let qh = Self::head_slice(&q, b, seq, h, dk, d);
                let kh = Self::head_slice(&k, b, seq, h, dk, d);
                let vh = Self::head_slice(&v, b, seq, h, dk, d);
                // scores = q k^T / sqrt(dk)
                let mut scores = Tensor::zeros(&[seq, seq]);
                matmul_nt_acc(scores.data_mut(), qh.data(), kh.data(), seq, dk, seq);
                scores.scale(scale);
                for i in 0..seq {
                    let row = scores.row_mut(i);
                    if causal {
                        for rv in row.iter_mut().skip(i + 1) {
                            *rv = T::neg_infinity();
                        }
                    }
                    softmax_slice(&mut row[..seq]);
                }
                // ctx_h = attn v
                let mut ctx_h = Tensor::zeros(&[seq, dk]);
                matmul_acc(ctx_h.data_mut(), scores.data(), vh.data(), seq, seq, dk);
                Self::head_scatter(&mut ctx, &ctx_h, b, seq, h, dk, d);
                attn_maps.push(scores);
            }
        }
        let y = self.wo.forward(&ctx);
        self.cache = Some(AttnCache { q, k, v, attn: attn_maps, batch, seq });
        y
    }

    /// Cache-free eval forward for frozen models.
    pub fn forward_frozen(&self, x: &Tensor<T>, causal: bool) -> Tensor<T> {
        let (batch, seq) = match *x.shape() {
            [b, n, d] => {
                assert_eq!(d, self.d_model);
                (b, n)
            }
            _ => panic!("attention expects [B, N, d], got {:?}", x.shape()),
        };
        let d = self.d_model;
        let dk = d / self.heads;
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let q = self.wq.forward_frozen(x);
        let k = self.wk.forward_frozen(x);
        let v = self.wv.forward_frozen(x);
        let mut ctx = Tensor::zeros(&[batch, seq, d]);
        for b in 0..batch {
            for h in 0..self.heads {
                let qh = Self::head_slice(&q, b, seq, h, dk, d);
                let kh = Self::head_slice(&k, b, seq, h, dk, d);
                let vh = Self::head_slice(&v, b, seq, h, dk, d);
                let mut scores = Tensor::zeros(&[seq, seq]);
                matmul_nt_acc(scores.data_mut(), qh.data(), kh.data(), seq, dk, seq);
                scores.scale(scale);
                for i in 0..seq {
                    let row = scores.row_mut(i);
                    if causal {
                        for rv in row.iter_mut().skip(i + 1) {
                            *rv = T::neg_infinity();
                        }
                    }
                    softmax_slice(&mut row[..seq]);
                }
                let mut ctx_h = Tensor::zeros(&[seq, dk]);
                matmul_acc(ctx_h.data_mut(), scores.data(), vh.data(), seq, seq, dk);
                Self::head_scatter(&mut ctx, &ctx_h, b, seq, h, dk, d);
            }
        }
        self.wo.forward_frozen(&ctx)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("backward before forward");
        let (batch, seq) = (cache.batch, cache.seq);
        let d = self.d_model;
        let dk = d / self.heads;
        let scale = T::of(1.0 / (dk as f64).sqrt());

        let dctx = self.wo.backward(dy);
        let mut dq = Tensor::zeros(&[batch, seq, d]);
        let mut dk_t = Tensor::zeros(&[batch, seq, d]);
        let mut dv = Tensor::zeros(&[batch, seq, d]);

        for b in 0..batch {
            for h in 0..self.heads {
                let attn = &cache.attn[b * self.heads + h];
                let qh = Self::head_slice(&cache.q, b, seq, h, dk, d);
                let kh = Self::head_slice(&cache.k, b, seq, h, dk, d);
                let vh = Self::head_slice(&cache.v, b, seq, h, dk, d);
                let dctx_h = Self::head_slice(&dctx, b, seq, h, dk, d);

                // dV_h = attn^T dctx_h
                let mut dvh = Tensor::zeros(&[seq, dk]);
                matmul_tn_acc(dvh.data_mut(), attn.data(), dctx_h.data(), seq, seq, dk);
                // dattn = dctx_h v^T
                let mut dattn = Tensor::zeros(&[seq, seq]);
                matmul_nt_acc(dattn.data_mut(), dctx_h.data(), vh.data(), seq, dk, seq);
                // softmax backward: ds = attn * (dattn - rowsum(dattn * attn))
                let mut ds = Tensor::zeros(&[seq, seq]);
                for i in 0..seq {
                    let arow = attn.row(i);
                    let drow = dattn.row(i);
                    let mut dot = T::zero();
                    for (a, g) in arow.iter().zip(drow) {
                        dot = dot + *a * *g;
                    }
                    for (j, out) in ds.row_mut(i).iter_mut().enumerate() {
                        *out = arow[j] * (drow[j] - dot) * scale;
                    }
                }
                // dQ_h = ds K, dK_h = ds^T Q
                let mut dqh = Tensor::zeros(&[seq, dk]);
                matmul_acc(dqh.data_mut(), ds.data(), kh.data(), seq, seq, dk);
                let mut dkh = Tensor::zeros(&[seq, dk]);
                matmul_tn_acc(dkh.data_mut(), ds.data(), qh.data(), seq, seq, dk);

                Self::head_scatter(&mut dq, &dqh, b, seq, h, dk, d);
                Self::head_scatter(&mut dk_t, &dkh, b, seq, h, dk, d);
                Self::head_scatter(&mut dv, &dvh, b, seq, h, dk, d);
            }
        }

        let mut dx = self.wq.backward(&dq);
        dx.add_assign(&self.wk.backward(&dk_t));
        dx.add_assign(&self.wv.backward(&dv));
        dx
    }
}

impl<T: Real> Params<T> for MultiHeadAttention<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.wq.visit_params(&format!("{prefix}.wq"), f);
        self.wk.visit_params(&format!("{prefix}.wk"), f);
        self.wv.visit_params(&format!("{prefix}.wv"), f);
        self.wo.visit_params(&format!("{prefix}.wo"), f);
    }
}

/// Two-layer position-wise feed-forward block.
pub struct FeedForward<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    relu: Relu<T>,
}

impl<T: Real> FeedForward<T> {
    pub fn new(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward { fc1: Linear::new(d_model, d_ff, rng), fc2: Linear::new(d_ff, d_model, rng), relu: Relu::new() }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.fc1.forward(x);
        let h = self.relu.forward(&h);
        self.fc2.forward(&h)
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.fc1.forward_frozen(x);
        let h = self.relu.forward_frozen(&h);
        self.fc2.forward_frozen(&h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dh = self.fc2.backward(dy);
        let dh = self.relu.backward(&dh);
        self.fc1.backward(&dh)
    }
}

impl<T: Real> Params<T> for FeedForward<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
    }
}

/// Post-norm transformer layer:
/// `x = LN1(x + Drop(MHA(x))); x = LN2(x + Drop(FFN(x)))`.
pub struct TransformerLayer<T> {
    pub attn: MultiHeadAttention<T>,
    pub ffn: FeedForward<T>,
    pub ln1: LayerNorm<T>,
    pub ln2: LayerNorm<T>,
    drop1: Dropout<T>,
    drop2: Dropout<T>,
}

impl<T: Real> TransformerLayer<T> {
    pub fn new(d_model: usize, heads: usize, d_ff: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        TransformerLayer {
            attn: MultiHeadAttention::new(d_model, heads, rng),
            ffn: FeedForward::new(d_model, d_ff, rng),
            ln1: LayerNorm::new(d_model),
            ln2: LayerNorm::new(d_model),
            drop1: Dropout::new(dropout, rng),
            drop2: Dropout::new(dropout, rng),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, causal: bool, mode: Mode) -> Tensor<T> {
        let a = self.attn.forward(x, causal);
        let a = self.drop1.forward(&a, mode);
        let mut r = x.clone();
        r.add_assign(&a);
        let h = self.ln1.forward(&r);

        let f = self.ffn.forward(&h);
        let f = self.drop2.forward(&f, mode);
        let mut r2 = h.clone();
        r2.add_assign(&f);
        self.ln2.forward(&r2)
    }

    /// Cache-free eval forward (dropout is identity in eval mode).
    pub fn forward_frozen(&self, x: &Tensor<T>, causal: bool) -> Tensor<T> {
        let a = self.attn.forward_frozen(x, causal);
        let mut r = x.clone();
        r.add_assign(&a);
        let h = self.ln1.forward_frozen(&r);
        let f = self.ffn.forward_frozen(&h);
        let mut r2 = h.clone();
        r2.add_assign(&f);
        self.ln2.forward_frozen(&r2)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dr2 = self.ln2.backward(dy);
        let df = self.drop2.backward(&dr2);
        let mut dh = self.ffn.backward(&df);
        dh.add_assign(&dr2); // residual branch

        let dr = self.ln1.backward(&dh);
        let da = self.drop1.backward(&dr);
        let mut dx = self.attn.backward(&da);
        dx.add_assign(&dr); // residual branch
        dx
    }
}

impl<T: Real> Params<T> for TransformerLayer<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.attn.visit_params(&format!("{prefix}.attn"), f);
        self.ffn.visit_params(&format!("{prefix}.ffn"), f);
        self.ln1.visit_params(&format!("{prefix}.ln1"), f);
        self.ln2.visit_params(&format!("{prefix}.ln2"), f);
    }
}
