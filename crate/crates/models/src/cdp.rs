//! Latent denoising diffusion prior over CAD latents, optionally
//! conditioned on an image latent, plus the deterministic ResNet-MLP prior
//! baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gencad_core::scalar::Real;
use gencad_nn::attention::sinusoidal_pe;
use gencad_nn::layers::{Dropout, LayerNorm, Linear, Mode, Relu};
use gencad_nn::loss::mse;
use gencad_nn::tensor::{Param, Params, Tensor};

use crate::ModelError;

/// What the denoiser predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictTarget {
    /// Standard noise prediction.
    Epsilon,
    /// Direct clean-latent prediction.
    Z0,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CdpConfig {
    pub d_z: usize,
    pub width: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub predict: PredictTarget,
    /// Whether an image-latent condition is expected (a learned null
    /// embedding stands in when absent, so both paths share code).
    pub conditional: bool,
    pub seed: u64,
}

impl CdpConfig {
    pub fn paper_scale() -> Self {
        CdpConfig {
            d_z: 256,
            width: 2048,
            blocks: 10,
            dropout: 0.1,
            timesteps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
            predict: PredictTarget::Epsilon,
            conditional: true,
            seed: 0,
        }
    }

    pub fn desk_scale() -> Self {
        CdpConfig { d_z: 64, width: 128, ..CdpConfig::paper_scale() }
    }
}

/// Precomputed linear beta schedule and its cumulative products.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        NoiseSchedule { betas, alphas, alpha_bars }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Cumulative product at 1-based timestep `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

/// One residual MLP block: `x + fc2(drop(relu(fc1(norm(x)))))`.
struct MlpResBlock<T> {
    ln: LayerNorm<T>,
    fc1: Linear<T>,
    relu: Relu<T>,
    drop: Dropout<T>,
    fc2: Linear<T>,
}

impl<T: Real> MlpResBlock<T> {
    fn new(width: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        MlpResBlock {
            ln: LayerNorm::new(width),
            fc1: Linear::new(width, width, rng),
            relu: Relu::new(),
            drop: Dropout::new(dropout, rng),
            fc2: Linear::new(width, width, rng),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let h = self.ln.forward(x);
        let h = self.fc1.forward(&h);
        let h = self.relu.forward(&h);
        let h = self.drop.forward(&h, mode);
        let mut h = self.fc2.forward(&h);
        h.add_assign(x);
        h
    }

    fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.ln.forward_frozen(x);
        let h = self.fc1.forward_frozen(&h);
        let h = self.relu.forward_frozen(&h);
        let mut h = self.fc2.forward_frozen(&h);
        h.add_assign(x);
        h
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dh = self.fc2.backward(dy);
        let dh = self.drop.backward(&dh);
        let dh = self.relu.backward(&dh);
        let dh = self.fc1.backward(&dh);
        let mut dx = self.ln.backward(&dh);
        dx.add_assign(dy);
        dx
    }
}

impl<T: Real> Params<T> for MlpResBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ln.visit_params(&format!("{prefix}.ln"), f);
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
    }
}

/// Stack of residual MLP blocks between an input projection and a
/// normalized linear head.
struct MlpResNet<T> {
    in_proj: Linear<T>,
    blocks: Vec<MlpResBlock<T>>,
    out_ln: LayerNorm<T>,
    head: Linear<T>,
}

impl<T: Real> MlpResNet<T> {
    fn new(d_in: usize, d_out: usize, width: usize, blocks: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        MlpResNet {
            in_proj: Linear::new(d_in, width, rng),
            blocks: (0..blocks).map(|_| MlpResBlock::new(width, dropout, rng)).collect(),
            out_ln: LayerNorm::new(width),
            head: Linear::new(width, d_out, rng),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut h = self.in_proj.forward(x);
        for b in &mut self.blocks {
            h = b.forward(&h, mode);
        }
        let h = self.out_ln.forward(&h);
        self.head.forward(&h)
    }

    fn forward_frozen(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = self.in_proj.forward_frozen(x);
        for b in &self.blocks {
            h = b.forward_frozen(&h);
        }
        let h = self.out_ln.forward_frozen(&h);
        self.head.forward_frozen(&h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let dh = self.head.backward(dy);
        let mut dh = self.out_ln.backward(&dh);
        for b in self.blocks.iter_mut().rev() {
            dh = b.backward(&dh);
        }
        self.in_proj.backward(&dh)
    }
}

impl<T: Real> Params<T> for MlpResNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.in_proj.visit_params(&format!("{prefix}.in_proj"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{i}"), f);
        }
        self.out_ln.visit_params(&format!("{prefix}.out_ln"), f);
        self.head.visit_params(&format!("{prefix}.head"), f);
    }
}

/// The diffusion prior: denoiser over `concat(z_t, condition, t_embedding)`.
pub struct CdpModel<T> {
    pub config: CdpConfig,
    pub schedule: NoiseSchedule,
    net: MlpResNet<T>,
    null_cond: Param<T>,
}

impl<T: Real> CdpModel<T> {
    pub fn new(config: CdpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(202));
        let schedule = NoiseSchedule::linear(config.timesteps, config.beta_start, config.beta_end);
        let net = MlpResNet::new(
            3 * config.d_z,
            config.d_z,
            config.width,
            config.blocks,
            config.dropout,
            &mut rng,
        );
        let null_cond = Param::new(Tensor::zeros(&[config.d_z]));
        CdpModel { config, schedule, net, null_cond }
    }

    /// Forward-process sample `z_t = sqrt(a_bar_t) z0 + sqrt(1 - a_bar_t) eps`.
    pub fn q_sample(&self, z0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        if t < 1 || t > self.schedule.len() {
            return Err(ModelError::BadTimestep { t, max: self.schedule.len() });
        }
        let ab = self.schedule.alpha_bar(t);
        let (ca, cb) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
        let mut out = z0.clone();
        for (o, &e) in out.data_mut().iter_mut().zip(eps.data()) {
            *o = ca * *o + cb * e;
        }
        Ok(out)
    }

    fn net_input(&self, z_t: &Tensor<T>, cond: Option<&Tensor<T>>, ts: &[usize]) -> Tensor<T> {
        let b = z_t.rows();
        let d = self.config.d_z;
        let mut x = Tensor::zeros(&[b, 3 * d]);
        for r in 0..b {
            let row = x.row_mut(r);
            row[..d].copy_from_slice(z_t.row(r));
            match cond {
                Some(c) => row[d..2 * d].copy_from_slice(c.row(r)),
                None => row[d..2 * d].copy_from_slice(self.null_cond.value.data()),
            }
            let temb: Vec<T> = sinusoidal_pe(ts[r], d);
            row[2 * d..].copy_from_slice(&temb);
        }
        x
    }

    /// One training step: uniform random timesteps, Gaussian noise, MSE on
    /// the prediction target; gradients accumulate into the denoiser (and the
    /// null embedding when unconditioned). Returns the loss.
    pub fn train_step(
        &mut self,
        z0: &Tensor<T>,
        cond: Option<&Tensor<T>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        let b = z0.rows();
        let d = self.config.d_z;
        let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=self.schedule.len())).collect();
        let eps = gaussian(&[b, d], rng);
        // Per-row q_sample at row-specific timesteps.
        let mut z_t = z0.clone();
        for r in 0..b {
            let ab = self.schedule.alpha_bar(ts[r]);
            let (ca, cb) = (T::of(ab.sqrt()), T::of((1.0 - ab).sqrt()));
            for (c, (zv, ev)) in z_t.row_mut(r).iter_mut().zip(eps.row(r)).enumerate() {
                let _ = c;
                *zv = ca * *zv + cb * *ev;
            }
        }
        let x = self.net_input(&z_t, cond, &ts);
        let pred = self.net.forward(&x, Mode::Train);
        let target = match self.config.predict {
            PredictTarget::Epsilon => &eps,
            PredictTarget::Z0 => z0,
        };
        let (loss, dpred) = mse(&pred, target);
        let dx = self.net.backward(&dpred);
        if cond.is_none() {
            // The null embedding column receives the summed gradient.
            for r in 0..b {
                for c in 0..d {
                    self.null_cond.grad.add_at(c, dx.row(r)[d + c]);
                }
            }
        }
        Ok(loss)
    }

    /// Evaluate the denoiser without caching (sampling path).
    fn predict_frozen(&self, z_t: &Tensor<T>, cond: Option<&Tensor<T>>, t: usize) -> Tensor<T> {
        let ts = vec![t; z_t.rows()];
        let x = self.net_input(z_t, cond, &ts);
        self.net.forward_frozen(&x)
    }

    /// Denoiser forward at a fixed timestep, training path (caches held so
    /// [`Self::denoise_backward`] can follow).
    pub fn denoise(
        &mut self,
        z_t: &Tensor<T>,
        cond: Option<&Tensor<T>>,
        t: usize,
    ) -> Result<Tensor<T>, ModelError> {
        if t < 1 || t > self.schedule.len() {
            return Err(ModelError::BadTimestep { t, max: self.schedule.len() });
        }
        let ts = vec![t; z_t.rows()];
        let x = self.net_input(z_t, cond, &ts);
        Ok(self.net.forward(&x, Mode::Train))
    }

    /// Backward through the denoiser after [`Self::denoise`].
    pub fn denoise_backward(&mut self, dpred: &Tensor<T>) -> Tensor<T> {
        self.net.backward(dpred)
    }

    /// Cache-free denoiser evaluation at a fixed timestep.
    pub fn denoise_frozen(
        &self,
        z_t: &Tensor<T>,
        cond: Option<&Tensor<T>>,
        t: usize,
    ) -> Result<Tensor<T>, ModelError> {
        if t < 1 || t > self.schedule.len() {
            return Err(ModelError::BadTimestep { t, max: self.schedule.len() });
        }
        Ok(self.predict_frozen(z_t, cond, t))
    }

    /// Ancestral DDPM sampling of `n` latents; deterministic in the seed.
    pub fn sample(&self, n: usize, cond: Option<&Tensor<T>>, seed: u64) -> Result<Tensor<T>, ModelError> {
        if let Some(c) = cond {
            if c.rows() != n || c.cols() != self.config.d_z {
                return Err(ModelError::Dim(format!(
                    "condition {:?} does not match {n} x {}",
                    c.shape(),
                    self.config.d_z
                )));
            }
        }
        let d = self.config.d_z;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = gaussian(&[n, d], &mut rng);
        for t in (1..=self.schedule.len()).rev() {
            let pred = self.predict_frozen(&z, cond, t);
            let ab = self.schedule.alpha_bar(t);
            let alpha = self.schedule.alphas[t - 1];
            let beta = self.schedule.betas[t - 1];
            let ab_prev = if t > 1 { self.schedule.alpha_bar(t - 1) } else { 1.0 };
            match self.config.predict {
                PredictTarget::Epsilon => {
                    let c1 = T::of(1.0 / alpha.sqrt());
                    let c2 = T::of(beta / (1.0 - ab).sqrt());
                    for (zv, &e) in z.data_mut().iter_mut().zip(pred.data()) {
                        *zv = c1 * (*zv - c2 * e);
                    }
                }
                PredictTarget::Z0 => {
                    // Posterior mean from the predicted clean latent.
                    let ca = T::of(ab_prev.sqrt() * beta / (1.0 - ab));
                    let cb = T::of(alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab));
                    for (zv, &z0) in z.data_mut().iter_mut().zip(pred.data()) {
                        *zv = ca * z0 + cb * *zv;
                    }
                }
            }
            if t > 1 {
                let sigma = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
                let noise = gaussian::<T>(&[n, d], &mut rng);
                let s = T::of(sigma);
                for (zv, &nv) in z.data_mut().iter_mut().zip(noise.data()) {
                    *zv = *zv + s * nv;
                }
            }
        }
        Ok(z)
    }
}

impl<T: Real> Params<T> for CdpModel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.net.visit_params(&format!("{prefix}.net"), f);
        f(&format!("{prefix}.null_cond"), &mut self.null_cond);
    }
}

/// Deterministic prior baseline: a ResNet-MLP mapping image latents
/// directly to CAD latents, trained with MSE.
pub struct DeterministicPrior<T> {
    pub d_z: usize,
    net: MlpResNet<T>,
}

impl<T: Real> DeterministicPrior<T> {
    pub fn new(d_z: usize, width: usize, blocks: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(303));
        DeterministicPrior { d_z, net: MlpResNet::new(d_z, d_z, width, blocks, dropout, &mut rng) }
    }

    pub fn predict(&self, z_image: &Tensor<T>) -> Tensor<T> {
        self.net.forward_frozen(z_image)
    }

    /// MSE training step toward paired CAD latents; returns the loss.
    pub fn train_step(&mut self, z_image: &Tensor<T>, z_cad: &Tensor<T>) -> f64 {
        let pred = self.net.forward(z_image, Mode::Train);
        let (loss, dpred) = mse(&pred, z_cad);
        self.net.backward(&dpred);
        loss
    }
}

impl<T: Real> Params<T> for DeterministicPrior<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.net.visit_params(&format!("{prefix}.net"), f);
    }
}

/// Standard-normal tensor via Box-Muller, deterministic in the rng state.
pub fn gaussian<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        data.push(T::of(r * c));
        if data.len() < n {
            data.push(T::of(r * s));
        }
    }
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_sample_with_zero_noise_scales_by_sqrt_alpha_bar() {
        let cfg = CdpConfig { d_z: 4, width: 16, blocks: 1, ..CdpConfig::desk_scale() };
        let model = CdpModel::<f64>::new(cfg);
        let z0 = Tensor::from_vec(&[1, 4], vec![1.0, -1.0, 0.5, 2.0]);
        let eps = Tensor::zeros(&[1, 4]);
        let t = 100;
        let zt = model.q_sample(&z0, t, &eps).unwrap();
        let want = model.schedule.alpha_bar(t).sqrt();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            assert!((a - b * want).abs() < 1e-12);
        }
    }

    #[test]
    fn final_alpha_bar_is_small() {
        let s = NoiseSchedule::linear(500, 1e-4, 0.02);
        assert!(s.alpha_bar(500) < 0.01, "alpha_bar(T) = {}", s.alpha_bar(500));
        // Strictly decreasing.
        for t in 2..=500 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn timestep_bounds_are_enforced() {
        let cfg = CdpConfig { d_z: 2, width: 8, blocks: 1, timesteps: 10, ..CdpConfig::desk_scale() };
        let model = CdpModel::<f64>::new(cfg);
        let z = Tensor::zeros(&[1, 2]);
        assert!(model.q_sample(&z, 0, &z).is_err());
        assert!(model.q_sample(&z, 11, &z).is_err());
        assert!(model.q_sample(&z, 10, &z).is_ok());
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let cfg = CdpConfig { d_z: 4, width: 16, blocks: 2, timesteps: 20, dropout: 0.0, ..CdpConfig::desk_scale() };
        let model = CdpModel::<f32>::new(cfg);
        let a = model.sample(3, None, 7).unwrap();
        let b = model.sample(3, None, 7).unwrap();
        assert_eq!(a, b);
        let c = model.sample(3, None, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn marginal_matches_stepwise_chain() {
        // q(z_t | z0) must equal the composition of stepwise corruptions:
        // simulate the chain z_k = sqrt(alpha_k) z_{k-1} + sqrt(beta_k) e_k
        // for a scalar z0 and compare mean/var against the closed form.
        let s = NoiseSchedule::linear(50, 1e-4, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z0 = 0.8f64;
        let t = 25;
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut z = z0;
            for k in 1..=t {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                let e = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                z = s.alphas[k - 1].sqrt() * z + s.betas[k - 1].sqrt() * e;
            }
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let want_mean = s.alpha_bar(t).sqrt() * z0;
        let want_var = 1.0 - s.alpha_bar(t);
        assert!((mean - want_mean).abs() / want_mean.abs() < 0.02, "{mean} vs {want_mean}");
        assert!((var - want_var).abs() / want_var < 0.02, "{var} vs {want_var}");
    }

    #[test]
    fn deterministic_prior_is_deterministic() {
        let prior = DeterministicPrior::<f32>::new(8, 16, 2, 0.0, 5);
        let x = Tensor::from_vec(&[2, 8], (0..16).map(|i| i as f32 * 0.1).collect());
        assert_eq!(prior.predict(&x), prior.predict(&x));
        assert_eq!(prior.predict(&x).shape(), &[2, 8]);
    }
}
