//! Optimizers and schedulers: Adam with optional decoupled weight decay,
//! global-norm gradient clipping, linear warmup, reduce-on-plateau.

use std::collections::HashMap;

use gencad_core::scalar::Real;

use crate::tensor::Params;

/// Adam / AdamW. With `decoupled = false` and `weight_decay > 0` the decay
/// joins the gradient (classic L2); with `decoupled = true` it is applied
/// directly to the weights (AdamW).
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled: bool,
    pub step_count: u64,
    state: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
            step_count: 0,
            state: HashMap::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Adam { weight_decay, decoupled: true, ..Adam::new(lr) }
    }

    /// One update over every parameter of the model.
    pub fn step<M: Params<T>>(&mut self, model: &mut M) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let lr = self.lr;
        let eps = T::of(self.eps);
        let wd = self.weight_decay;
        let decoupled = self.decoupled;
        let state = &mut self.state;
        model.visit_params("model", &mut |name, p| {
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]));
            let values = p.value.data_mut();
            let grads = p.grad.data();
            for i in 0..values.len() {
                let mut g = grads[i];
                if wd > 0.0 && !decoupled {
                    g = g + T::of(wd) * values[i];
                }
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i].f64() / bc1;
                let vhat = v[i].f64() / bc2;
                let mut update = lr * mhat / (vhat.sqrt() + eps.f64());
                if wd > 0.0 && decoupled {
                    update += lr * wd * values[i].f64();
                }
                values[i] = values[i] - T::of(update);
            }
        });
    }
}

/// Zero every gradient.
pub fn zero_grads<T: Real, M: Params<T>>(model: &mut M) {
    model.visit_params("model", &mut |_, p| p.zero_grad());
}

/// Multiply every gradient by `k` (gradient accumulation averaging).
pub fn scale_grads<T: Real, M: Params<T>>(model: &mut M, k: f64) {
    model.visit_params("model", &mut |_, p| p.grad.scale(T::of(k)));
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Real, M: Params<T>>(model: &mut M) -> f64 {
    let mut sq = 0.0f64;
    model.visit_params("model", &mut |_, p| {
        for &g in p.grad.data() {
            sq += g.f64() * g.f64();
        }
    });
    sq.sqrt()
}

/// Clip gradients to a maximum global norm; returns the pre-clip norm.
pub fn clip_grad_norm<T: Real, M: Params<T>>(model: &mut M, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if norm > max_norm && norm > 0.0 {
        let k = T::of(max_norm / norm);
        model.visit_params("model", &mut |_, p| p.grad.scale(k));
    }
    norm
}

/// Linear warmup from zero to `base_lr` over `warmup_steps`.
pub fn warmup_lr(base_lr: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base_lr
    } else {
        base_lr * (step + 1) as f64 / warmup_steps as f64
    }
}

/// Halve the learning rate after `patience` observations without
/// improvement.
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, patience: usize) -> Self {
        ReduceOnPlateau { lr, factor: 0.5, patience, min_lr: 1e-8, best: f64::INFINITY, bad: 0 }
    }

    /// Observe a validation metric (lower is better); returns the lr to use.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad = 0;
            }
        }
        self.lr
    }
}
