//! Core layers with explicit forward/backward passes. Each layer caches
//! what its backward needs; backward accumulates parameter gradients and
//! returns the input gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use gencad_core::scalar::Real;

use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::tensor::{Param, Params, Tensor};

/// Train / eval switch: dropout and batch norm behave differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform Kaiming-style init on [-bound, bound] with bound = sqrt(1/fan_in).
pub fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::of((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Fully connected layer, `y = x W + b`, with `W` stored `[in, out]`.
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
    cache_x: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::new(init_uniform(&[in_dim, out_dim], in_dim, rng)),
            b: Param::new(Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
            cache_x: None,
        }
    }

    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.cols(), self.in_dim, "linear expects {} cols, got {}", self.in_dim, x.cols());
        let rows = x.rows();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim;
        let mut y = Tensor::zeros(&shape);
        matmul_acc(y.data_mut(), x.data(), self.w.value.data(), rows, self.in_dim, self.out_dim);
        let b = self.b.value.data();
        for r in 0..rows {
            for (yv, &bv) in y.row_mut(r).iter_mut().zip(b) {
                *yv = *yv + bv;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.apply(x);
        self.cache_x = Some(x.clone());
        y
    }

    /// Inference path that skips the cache (frozen encoders, sampling).
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache_x.as_ref().expect("backward before forward");
        let rows = x.rows();
        // dW += x^T dy
        matmul_tn_acc(
            self.w.grad.data_mut(),
            x.data(),
            dy.data(),
            self.in_dim,
            rows,
            self.out_dim,
        );
        // db += column sums of dy
        for r in 0..rows {
            for (gb, &d) in self.b.grad.data_mut().iter_mut().zip(dy.row(r)) {
                *gb = *gb + d;
            }
        }
        // dx = dy W^T
        let mut dx = Tensor::zeros(x.shape());
        matmul_nt_acc(dx.data_mut(), dy.data(), self.w.value.data(), rows, self.out_dim, self.in_dim);
        dx
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Embedding lookup over integer indices.
pub struct Embedding<T> {
    pub table: Param<T>,
    pub vocab: usize,
    pub dim: usize,
    cache_idx: Vec<usize>,
}

impl<T: Real> Embedding<T> {
    pub fn new(vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding { table: Param::new(init_uniform(&[vocab, dim], dim, rng)), vocab, dim, cache_idx: Vec::new() }
    }

    fn apply(&self, idx: &[usize]) -> Tensor<T> {
        let mut out = Tensor::zeros(&[idx.len(), self.dim]);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < self.vocab, "index {i} out of vocab {}", self.vocab);
            out.row_mut(r).copy_from_slice(self.table.value.row(i));
        }
        out
    }

    pub fn forward(&mut self, idx: &[usize]) -> Tensor<T> {
        let y = self.apply(idx);
        self.cache_idx = idx.to_vec();
        y
    }

    pub fn forward_frozen(&self, idx: &[usize]) -> Tensor<T> {
        self.apply(idx)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) {
        for (r, &i) in self.cache_idx.iter().enumerate() {
            let grad_row = dy.row(r);
            let c = self.dim;
            let g = &mut self.table.grad.data_mut()[i * c..(i + 1) * c];
            for (gv, &d) in g.iter_mut().zip(grad_row) {
                *gv = *gv + d;
            }
        }
    }
}

impl<T: Real> Params<T> for Embedding<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.table"), &mut self.table);
    }
}

/// Layer normalization over the last dimension.
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub dim: usize,
    eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>, // xhat, inv_std per row
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Tensor::scalar_filled(&[dim], T::one())),
            beta: Param::new(Tensor::zeros(&[dim])),
            dim,
            eps: 1e-5,
            cache: None,
        }
    }

    fn stats(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let d = self.dim;
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_stds = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / T::of(d as f64);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(d as f64);
            let inv_std = T::one() / (var + T::of(self.eps)).sqrt();
            for (h, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        (xhat, inv_stds)
    }

    fn scale_shift(&self, xhat: &Tensor<T>) -> Tensor<T> {
        let mut y = xhat.clone();
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for r in 0..y.rows() {
            for ((yv, &gv), &bv) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *yv = *yv * gv + bv;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv) = self.stats(x);
        let y = self.scale_shift(&xhat);
        self.cache = Some((xhat, inv));
        y
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let (xhat, _) = self.stats(x);
        self.scale_shift(&xhat)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_stds) = self.cache.take().expect("backward before forward");
        let d = self.dim;
        let dn = T::of(d as f64);
        let mut dx = Tensor::zeros(dy.shape());
        let g: Vec<T> = self.gamma.value.data().to_vec();
        let ggrad = self.gamma.grad.data_mut();
        let bgrad = self.beta.grad.data_mut();
        for r in 0..dy.rows() {
            let dyr = dy.row(r);
            let xh = xhat.row(r);
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for i in 0..d {
                ggrad[i] = ggrad[i] + dyr[i] * xh[i];
                bgrad[i] = bgrad[i] + dyr[i];
                let dxh = dyr[i] * g[i];
                sum_dxhat = sum_dxhat + dxh;
                sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh[i];
            }
            let inv = inv_stds[r];
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                dx.row_mut(r)[i] =
                    inv * (dxh - sum_dxhat / dn - xh[i] * sum_dxhat_xhat / dn);
            }
        }
        dx
    }
}

impl<T: Real> Params<T> for LayerNorm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Inverted dropout; identity in eval mode.
pub struct Dropout<T> {
    pub p: f64,
    rng: ChaCha8Rng,
    cache_mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64, rng: &mut ChaCha8Rng) -> Self {
        use rand::SeedableRng;
        Dropout { p, rng: ChaCha8Rng::seed_from_u64(rng.random()), cache_mask: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Eval || self.p <= 0.0 {
            self.cache_mask = None;
            return x.clone();
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.cache_mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        match &self.cache_mask {
            None => dy.clone(),
            Some(mask) => {
                let mut dx = dy.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                    *v = *v * m;
                }
                dx
            }
        }
    }
}

/// Elementwise tanh.
#[derive(Default)]
pub struct Tanh<T> {
    cache_y: Option<Tensor<T>>,
}

impl<T: Real> Tanh<T> {
    pub fn new() -> Self {
        Tanh { cache_y: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        for v in y.data_mut() {
            *v = v.tanh();
        }
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let y = self.cache_y.as_ref().expect("backward before forward");
        let mut dx = dy.clone();
        for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
            *d = *d * (T::one() - yv * yv);
        }
        dx
    }
}

/// Elementwise ReLU.
#[derive(Default)]
pub struct Relu<T> {
    cache_x: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Relu { cache_x: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        for v in y.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        for v in y.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache_x.as_ref().expect("backward before forward");
        let mut dx = dy.clone();
        for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
            if xv < T::zero() {
                *d = T::zero();
            }
        }
        dx
    }
}

/// In-place row softmax.
pub fn softmax_rows<T: Real>(x: &mut Tensor<T>) {
    let cols = x.cols();
    for r in 0..x.rows() {
        softmax_slice(&mut x.row_mut(r)[..cols]);
    }
}

/// In-place softmax over a slice.
pub fn softmax_slice<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_of_constant_vector_is_uniform() {
        let mut t = Tensor::from_vec(&[1, 5], vec![3.0f64; 5]);
        softmax_rows(&mut t);
        for &v in t.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_var() {
        let mut ln = LayerNorm::<f64>::new(8);
        let x = Tensor::from_vec(&[3, 8], (0..24).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect());
        let y = ln.forward(&x);
        for r in 0..3 {
            let row = y.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scales_in_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut drop = Dropout::<f64>::new(0.5, &mut rng);
        let x = Tensor::from_vec(&[1, 1000], vec![1.0; 1000]);
        assert_eq!(drop.forward(&x, Mode::Eval), x);
        let y = drop.forward(&x, Mode::Train);
        let mean: f64 = y.data().iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.15, "inverted dropout keeps the mean, got {mean}");
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 / 1000.0 - 0.5).abs() < 0.1);
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        lin.w.value = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        lin.b.value = Tensor::from_vec(&[2], vec![0.5, -0.5]);
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]);
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[9.5, 11.5]);
    }

    #[test]
    fn embedding_backward_scatters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut emb = Embedding::<f64>::new(4, 2, &mut rng);
        emb.forward(&[1, 1, 3]);
        let dy = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 2.0, 0.0, 0.0, 5.0]);
        emb.backward(&dy);
        assert_eq!(emb.table.grad.row(1), &[3.0, 0.0]);
        assert_eq!(emb.table.grad.row(3), &[0.0, 5.0]);
        assert_eq!(emb.table.grad.row(0), &[0.0, 0.0]);
    }
}
