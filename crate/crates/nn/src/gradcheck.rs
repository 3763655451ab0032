//! Finite-difference verification of analytic gradients.


use crate::tensor::{Param, Params};

/// Check every parameter gradient of `model` against central differences.
///
/// The caller must already have run forward + backward so that analytic
/// gradients sit in the parameter `grad` buffers; `loss_fn` recomputes the
/// loss (forward only) for perturbed parameters. Returns the worst relative
/// error and the entry it came from.
pub fn finite_diff_check<M, F>(model: &mut M, mut loss_fn: F, eps: f64) -> (f64, String)
where
    M: Params<f64>,
    F: FnMut(&mut M) -> f64,
{
    // Snapshot names, sizes and analytic grads.
    let mut entries: Vec<(String, usize, Vec<f64>)> = Vec::new();
    model.visit_params("model", &mut |name, p| {
        entries.push((name.to_string(), p.value.len(), p.grad.data().to_vec()));
    });

    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for (name, len, analytic) in entries {
        for i in 0..len {
            poke(model, &name, i, eps);
            let plus = loss_fn(model);
            poke(model, &name, i, -2.0 * eps);
            let minus = loss_fn(model);
            poke(model, &name, i, eps); // restore
            let numeric = (plus - minus) / (2.0 * eps);
            let ana = analytic[i];
            // The floor absorbs central-difference roundoff (~1e-11 for
            // unit-scale losses at eps = 1e-5) on true-zero gradients.
            let rel = (numeric - ana).abs() / (numeric.abs() + ana.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!("{name}[{i}] analytic {ana} numeric {numeric}");
            }
        }
    }
    (worst, worst_at)
}

fn poke<M: Params<f64>>(model: &mut M, target: &str, index: usize, delta: f64) {
    model.visit_params("model", &mut |name, p: &mut Param<f64>| {
        if name == target {
            p.value.add_at(index, delta);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;
    use crate::loss::mse;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Tiny {
        lin: Linear<f64>,
    }

    impl Params<f64> for Tiny {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            self.lin.visit_params(&format!("{prefix}.lin"), f);
        }
    }

    #[test]
    fn linear_layer_passes_below_1e7() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Tiny { lin: Linear::new(3, 2, &mut rng) };
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.4]);
        let target = Tensor::from_vec(&[2, 2], vec![0.5, -0.5, 0.25, 0.75]);

        let y = model.lin.forward(&x);
        let (_, dy) = mse(&y, &target);
        model.lin.backward(&dy);

        let (err, at) = finite_diff_check(
            &mut model,
            |m| {
                let y = m.lin.forward_frozen(&x);
                mse(&y, &target).0
            },
            1e-5,
        );
        assert!(err < 1e-7, "worst {err} at {at}");
    }
}
