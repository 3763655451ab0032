//! Losses. Each returns the loss value together with the gradient w.r.t.
//! the logits/input, computed in one pass.

use gencad_core::scalar::Real;

use crate::layers::softmax_slice;
use crate::tensor::Tensor;

/// Cross entropy summed over rows. `logits: [M, K]`, one target class per
/// row. Returns `(sum loss, dlogits)`.
pub fn cross_entropy_sum<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> (f64, Tensor<T>) {
    let weights = vec![1.0f64; targets.len()];
    cross_entropy_weighted(logits, targets, &weights)
}

/// Weighted cross entropy: per-row weights (0 disables a row). Loss is the
/// weighted sum over rows.
pub fn cross_entropy_weighted<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &[f64],
) -> (f64, Tensor<T>) {
    let k = logits.cols();
    let m = logits.rows();
    assert_eq!(m, targets.len(), "logit rows {m} vs {} targets", targets.len());
    assert_eq!(m, weights.len());
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    for r in 0..m {
        if weights[r] == 0.0 {
            continue;
        }
        let t = targets[r];
        assert!(t < k, "target {t} out of {k} classes");
        let mut p: Vec<T> = logits.row(r).to_vec();
        softmax_slice(&mut p);
        let w = weights[r];
        loss -= w * p[t].f64().max(1e-300).ln();
        let drow = dlogits.row_mut(r);
        for (j, d) in drow.iter_mut().enumerate() {
            let indicator = if j == t { T::one() } else { T::zero() };
            *d = (p[j] - indicator) * T::of(w);
        }
    }
    (loss, dlogits)
}

/// Mean squared error between two equal-shape tensors. Returns
/// `(loss, dloss/da)`.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(a.shape(), b.shape());
    let n = a.len() as f64;
    let mut grad = Tensor::zeros(a.shape());
    let mut loss = 0.0f64;
    for ((g, &av), &bv) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let diff = av.f64() - bv.f64();
        loss += diff * diff / n;
        *g = T::of(2.0 * diff / n);
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_over_six_classes_give_ln6() {
        let logits = Tensor::from_vec(&[1, 6], vec![0.25f64; 6]);
        let (loss, _) = cross_entropy_sum(&logits, &[2]);
        assert!((loss - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero_loss() {
        let mut v = vec![0.0f64; 6];
        v[3] = 50.0;
        let logits = Tensor::from_vec(&[1, 6], v);
        let (loss, _) = cross_entropy_sum(&logits, &[3]);
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0f64, 0.0, 0.0]);
        let (_, d) = cross_entropy_sum(&logits, &[1]);
        let third = 1.0 / 3.0;
        assert!((d.data()[0] - third).abs() < 1e-12);
        assert!((d.data()[1] - (third - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_rows_are_skipped() {
        let logits = Tensor::from_vec(&[2, 4], vec![1.0f64; 8]);
        let (loss, d) = cross_entropy_weighted(&logits, &[0, 1], &[0.0, 1.0]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(d.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let (loss, grad) = mse(&a, &a);
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }
}
