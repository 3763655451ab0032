//! Convolutional layers for the image encoder: conv2d (via im2col),
//! batch norm with running statistics, and average pooling.

use rand_chacha::ChaCha8Rng;

use gencad_core::scalar::Real;

use crate::layers::{init_uniform, Mode};
use crate::linalg::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::tensor::{Param, Params, Tensor};

/// 2D convolution over `[B, C, H, W]`, weights `[out_c, in_c * k * k]`.
pub struct Conv2d<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache<T>>,
}

struct ConvCache<T> {
    cols: Vec<Tensor<T>>, // per batch item: [in_c*k*k, oh*ow]
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            w: Param::new(init_uniform(&[out_c, fan_in], fan_in, rng)),
            b: Param::new(Tensor::zeros(&[out_c])),
            in_c,
            out_c,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let patch = self.in_c * self.k * self.k;
        let mut col = Tensor::zeros(&[patch, oh * ow]);
        let data = col.data_mut();
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let prow = (c * self.k * self.k + ky * self.k + kx) * (oh * ow);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = iy as usize * w;
                        let dst_row = prow + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            data[dst_row + ox] = plane[src_row + ix as usize];
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &Tensor<T>, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_c * h * w];
        let data = dcol.data();
        for c in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let prow = (c * self.k * self.k + ky * self.k + kx) * (oh * ow);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = c * h * w + iy as usize * w;
                        let src_row = prow + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[dst_row + ix as usize] =
                                dx[dst_row + ix as usize] + data[src_row + ox];
                        }
                    }
                }
            }
        }
        dx
    }

    fn apply(&self, x: &Tensor<T>, cache: Option<&mut Vec<Tensor<T>>>) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("conv2d expects [B,C,H,W]") };
        assert_eq!(c, self.in_c);
        let (oh, ow) = self.out_size(h, w);
        let mut y = Tensor::zeros(&[b, self.out_c, oh, ow]);
        let patch = self.in_c * self.k * self.k;
        let mut cols = cache;
        for bi in 0..b {
            let col = self.im2col(&x.data()[bi * c * h * w..(bi + 1) * c * h * w], h, w, oh, ow);
            let out = &mut y.data_mut()[bi * self.out_c * oh * ow..(bi + 1) * self.out_c * oh * ow];
            matmul_acc(out, self.w.value.data(), col.data(), self.out_c, patch, oh * ow);
            for oc in 0..self.out_c {
                let bias = self.b.value.data()[oc];
                for v in &mut out[oc * oh * ow..(oc + 1) * oh * ow] {
                    *v = *v + bias;
                }
            }
            if let Some(cols) = cols.as_mut() {
                cols.push(col);
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("conv2d expects [B,C,H,W]") };
        let (oh, ow) = self.out_size(h, w);
        let mut cols = Vec::with_capacity(b);
        let y = self.apply(x, Some(&mut cols));
        self.cache = Some(ConvCache { cols, in_shape: [b, c, h, w], out_hw: (oh, ow) });
        y
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x, None)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("backward before forward");
        let [b, c, h, w] = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let patch = self.in_c * self.k * self.k;
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        for bi in 0..b {
            let dyb = &dy.data()[bi * self.out_c * oh * ow..(bi + 1) * self.out_c * oh * ow];
            // dW += dy_b * col^T
            matmul_nt_acc(
                self.w.grad.data_mut(),
                dyb,
                cache.cols[bi].data(),
                self.out_c,
                oh * ow,
                patch,
            );
            // db += per-channel sums
            for oc in 0..self.out_c {
                let mut s = T::zero();
                for &v in &dyb[oc * oh * ow..(oc + 1) * oh * ow] {
                    s = s + v;
                }
                self.b.grad.add_at(oc, s);
            }
            // dcol = W^T dy_b, then scatter back.
            let mut dcol = Tensor::zeros(&[patch, oh * ow]);
            matmul_tn_acc(dcol.data_mut(), self.w.value.data(), dyb, patch, self.out_c, oh * ow);
            let dxb = self.col2im(&dcol, h, w, oh, ow);
            dx.data_mut()[bi * c * h * w..(bi + 1) * c * h * w].copy_from_slice(&dxb);
        }
        dx
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Batch normalization over `[B, C, H, W]`, statistics per channel.
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub channels: usize,
    pub momentum: f64,
    eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>, // xhat, inv_std per channel
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::scalar_filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::scalar_filled(&[channels], T::one()),
            channels,
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("batch norm expects [B,C,H,W]") };
        assert_eq!(c, self.channels);
        let plane = h * w;
        let count = (b * plane) as f64;
        let mut y = Tensor::zeros(x.shape());

        if mode == Mode::Eval {
            for bi in 0..b {
                for ci in 0..c {
                    let mean = self.running_mean.data()[ci];
                    let inv = T::one() / (self.running_var.data()[ci] + T::of(self.eps)).sqrt();
                    let g = self.gamma.value.data()[ci];
                    let be = self.beta.value.data()[ci];
                    let off = (bi * c + ci) * plane;
                    for i in 0..plane {
                        y.data_mut()[off + i] = (x.data()[off + i] - mean) * inv * g + be;
                    }
                }
            }
            self.cache = None;
            return y;
        }

        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_stds = Vec::with_capacity(c);
        for ci in 0..c {
            let mut mean = T::zero();
            for bi in 0..b {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    mean = mean + x.data()[off + i];
                }
            }
            mean = mean / T::of(count);
            let mut var = T::zero();
            for bi in 0..b {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    let d = x.data()[off + i] - mean;
                    var = var + d * d;
                }
            }
            var = var / T::of(count);
            let inv = T::one() / (var + T::of(self.eps)).sqrt();
            inv_stds.push(inv);

            let m = T::of(self.momentum);
            let rm = self.running_mean.data()[ci] * (T::one() - m) + mean * m;
            self.running_mean.data_mut()[ci] = rm;
            let rv = self.running_var.data()[ci] * (T::one() - m) + var * m;
            self.running_var.data_mut()[ci] = rv;

            let g = self.gamma.value.data()[ci];
            let be = self.beta.value.data()[ci];
            for bi in 0..b {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    let xh = (x.data()[off + i] - mean) * inv;
                    xhat.data_mut()[off + i] = xh;
                    y.data_mut()[off + i] = xh * g + be;
                }
            }
        }
        self.cache = Some((xhat, inv_stds));
        y
    }

    pub fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("batch norm expects [B,C,H,W]") };
        let plane = h * w;
        let mut y = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ci in 0..c {
                let mean = self.running_mean.data()[ci];
                let inv = T::one() / (self.running_var.data()[ci] + T::of(self.eps)).sqrt();
                let g = self.gamma.value.data()[ci];
                let be = self.beta.value.data()[ci];
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    y.data_mut()[off + i] = (x.data()[off + i] - mean) * inv * g + be;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_stds) = self.cache.take().expect("backward require train-mode forward");
        let &[b, c, h, w] = dy.shape() else { panic!("batch norm expects [B,C,H,W]") };
        let plane = h * w;
        let count = T::of((b * plane) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ci in 0..c {
            let g = self.gamma.value.data()[ci];
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for bi in 0..b {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    let d = dy.data()[off + i];
                    sum_dy = sum_dy + d;
                    sum_dy_xhat = sum_dy_xhat + d * xhat.data()[off + i];
                }
            }
            self.gamma.grad.add_at(ci, sum_dy_xhat);
            self.beta.grad.add_at(ci, sum_dy);
            let inv = inv_stds[ci];
            for bi in 0..b {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    let d = dy.data()[off + i];
                    let xh = xhat.data()[off + i];
                    dx.data_mut()[off + i] =
                        g * inv * (d - sum_dy / count - xh * sum_dy_xhat / count);
                }
            }
        }
        dx
    }
}

impl<T: Real> Params<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Average pooling over `[B, C, H, W]`.
pub struct AvgPool2d {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    in_shape: [usize; 4],
}

impl AvgPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        AvgPool2d { k, stride, pad, in_shape: [0; 4] }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("avg pool expects [B,C,H,W]") };
        self.in_shape = [b, c, h, w];
        self.apply(x)
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        let &[b, c, h, w] = x.shape() else { panic!("avg pool expects [B,C,H,W]") };
        let (oh, ow) = self.out_size(h, w);
        let norm = T::of(1.0 / (self.k * self.k) as f64);
        let mut y = Tensor::zeros(&[b, c, oh, ow]);
        for bc in 0..b * c {
            let plane = &x.data()[bc * h * w..(bc + 1) * h * w];
            let out = &mut y.data_mut()[bc * oh * ow..(bc + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc = acc + plane[iy as usize * w + ix as usize];
                        }
                    }
                    out[oy * ow + ox] = acc * norm;
                }
            }
        }
        y
    }

    pub fn backward<T: Real>(&self, dy: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w] = self.in_shape;
        let (oh, ow) = self.out_size(h, w);
        let norm = T::of(1.0 / (self.k * self.k) as f64);
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        for bc in 0..b * c {
            let dplane = &mut dx.data_mut()[bc * h * w..(bc + 1) * h * w];
            let dout = &dy.data()[bc * oh * ow..(bc + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dout[oy * ow + ox] * norm;
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            dplane[i] = dplane[i] + g;
                        }
                    }
                }
            }
        }
        dx
    }
}
