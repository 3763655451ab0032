//! Fréchet distance between Gaussian fits of two embedding sets:
//! `||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`.
//!
//! The matrix square root is taken on the symmetrized product
//! `Sa^(1/2) Sb Sa^(1/2)` via a cyclic Jacobi eigendecomposition; negative
//! eigenvalues (numerical noise) are clipped at zero and counted.

use super::MetricError;
use crate::scalar::Real;

/// Dense symmetric d x d matrix stored row-major.
#[derive(Debug, Clone)]
pub struct SymMat {
    pub d: usize,
    pub a: Vec<f64>,
}

impl SymMat {
    pub fn zeros(d: usize) -> Self {
        SymMat { d, a: vec![0.0; d * d] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.d + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.at(i, i)).sum()
    }

    pub fn matmul(&self, o: &SymMat) -> SymMat {
        let d = self.d;
        let mut out = SymMat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let aik = self.at(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.a[i * d + j] += aik * o.at(k, j);
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and the orthogonal matrix of eigenvectors (columns).
pub fn jacobi_eigen(mat: &SymMat, tol: f64) -> (Vec<f64>, SymMat) {
    let d = mat.d;
    let mut a = mat.clone();
    let mut v = SymMat::zeros(d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    let frob: f64 = mat.a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a.at(i, j).powi(2);
            }
        }
        if off.sqrt() <= tol * frob {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.at(p, q);
                if apq.abs() <= tol * frob * 1e-3 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..d {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..d {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..d).map(|i| a.at(i, i)).collect(), v)
}

/// PSD matrix square root via eigendecomposition; negative eigenvalues are
/// clipped at zero. Returns the root and the number of clipped eigenvalues.
pub fn sqrtm_psd(mat: &SymMat, tol: f64) -> (SymMat, usize) {
    let d = mat.d;
    let (eig, v) = jacobi_eigen(mat, tol);
    let mut clipped = 0usize;
    let roots: Vec<f64> = eig
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clipped += 1;
                0.0
            } else {
                l.sqrt()
            }
        })
        .collect();
    // V diag(roots) V^T
    let mut out = SymMat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for (k, &r) in roots.iter().enumerate() {
                acc += v.at(i, k) * r * v.at(j, k);
            }
            out.set(i, j, acc);
        }
    }
    (out, clipped)
}

fn mean_cov<T: Real>(rows: &[Vec<T>]) -> (Vec<f64>, SymMat) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0f64; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.f64() / n as f64;
        }
    }
    let mut cov = SymMat::zeros(d);
    for row in rows {
        for i in 0..d {
            let di = row[i].f64() - mean[i];
            for j in i..d {
                let dj = row[j].f64() - mean[j];
                cov.a[i * d + j] += di * dj / (n as f64 - 1.0);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov.a[i * d + j] = cov.at(j, i);
        }
    }
    (mean, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidResult {
    pub value: f64,
    /// Eigenvalues clipped at zero inside the matrix square root.
    pub clipped_eigenvalues: usize,
}

const JACOBI_TOL: f64 = 1e-10;

/// Fréchet distance between the Gaussian fits of two embedding sets
/// (rows are samples). Covariances use the 1/(n-1) normalization.
pub fn fid<T: Real>(set_a: &[Vec<T>], set_b: &[Vec<T>]) -> Result<FidResult, MetricError> {
    if set_a.len() < 2 || set_b.len() < 2 {
        return Err(MetricError::TooFewSamples { need: 2, got: set_a.len().min(set_b.len()) });
    }
    let d = set_a[0].len();
    if set_b[0].len() != d {
        return Err(MetricError::LengthMismatch(d, set_b[0].len()));
    }
    let (mu_a, cov_a) = mean_cov(set_a);
    let (mu_b, cov_b) = mean_cov(set_b);

    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(a, b)| (a - b).powi(2)).sum();

    // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), symmetric PSD.
    let (root_a, clip1) = sqrtm_psd(&cov_a, JACOBI_TOL);
    let inner = root_a.matmul(&cov_b).matmul(&root_a);
    // Re-symmetrize against round-off before the second root.
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym.set(i, j, 0.5 * (inner.at(i, j) + inner.at(j, i)));
        }
    }
    let (eig, _) = jacobi_eigen(&sym, JACOBI_TOL);
    let mut clipped = clip1;
    let tr_root: f64 = eig
        .iter()
        .map(|&l| {
            if l < 0.0 {
                clipped += 1;
                0.0
            } else {
                l.sqrt()
            }
        })
        .sum();

    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    Ok(FidResult { value, clipped_eigenvalues: clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sqrt_of_diagonal_matrix() {
        let mut m = SymMat::zeros(2);
        m.set(0, 0, 4.0);
        m.set(1, 1, 9.0);
        let (root, clipped) = sqrtm_psd(&m, 1e-10);
        assert_eq!(clipped, 0);
        assert!((root.at(0, 0) - 2.0).abs() < 1e-9);
        assert!((root.at(1, 1) - 3.0).abs() < 1e-9);
        assert!(root.at(0, 1).abs() < 1e-9);
    }

    #[test]
    fn jacobi_diagonalizes_a_random_symmetric_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let mut m = SymMat::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = rng.random::<f64>() - 0.5;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let (eig, v) = jacobi_eigen(&m, 1e-12);
        // Reconstruct and compare.
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for (k, &l) in eig.iter().enumerate() {
                    acc += v.at(i, k) * l * v.at(j, k);
                }
                assert!((acc - m.at(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_sets_have_near_zero_fid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set: Vec<Vec<f64>> =
            (0..200).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
        let r = fid(&set, &set).unwrap();
        assert!(r.value.abs() < 1e-6, "fid {}", r.value);
    }

    #[test]
    fn shifted_unit_gaussians_have_fid_one() {
        // N(0,1) vs N(1,1) in 1-D: closed form (1-0)^2 + (1+1-2) = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let normal = |rng: &mut ChaCha8Rng| {
            // Box-Muller.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let a: Vec<Vec<f64>> = (0..100_000).map(|_| vec![normal(&mut rng)]).collect();
        let b: Vec<Vec<f64>> = (0..100_000).map(|_| vec![normal(&mut rng) + 1.0]).collect();
        let r = fid(&a, &b).unwrap();
        assert!((r.value - 1.0).abs() < 0.05, "fid {}", r.value);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let a = vec![vec![0.0f64; 3]];
        assert!(fid(&a, &a).is_err());
    }
}
