//! Point-cloud set metrics: coverage, minimum matching distance, and
//! Jensen-Shannon divergence of the point marginals.

use super::chamfer::chamfer;
use super::MetricError;
use crate::scalar::Real;

/// Default JSD histogram resolution per axis.
pub const JSD_GRID: usize = 28;

/// Pairwise chamfer matrix, `|S|` rows by `|G|` columns.
pub fn pairwise_chamfer<T: Real>(
    reference: &[Vec<[T; 3]>],
    generated: &[Vec<[T; 3]>],
) -> Result<Vec<Vec<f64>>, MetricError> {
    if reference.is_empty() || generated.is_empty() {
        return Err(MetricError::Empty("shape set"));
    }
    reference
        .iter()
        .map(|y| generated.iter().map(|x| chamfer(x, y)).collect())
        .collect()
}

/// Fraction of reference shapes matched as a nearest neighbor of at least
/// one generated shape.
pub fn cov_from_matrix(d: &[Vec<f64>]) -> f64 {
    let n_ref = d.len();
    let n_gen = d[0].len();
    let mut matched = vec![false; n_ref];
    for x in 0..n_gen {
        let best = (0..n_ref)
            .min_by(|&a, &b| d[a][x].partial_cmp(&d[b][x]).unwrap())
            .unwrap();
        matched[best] = true;
    }
    matched.iter().filter(|&&m| m).count() as f64 / n_ref as f64
}

/// Average over reference shapes of the chamfer distance to their nearest
/// generated shape.
pub fn mmd_from_matrix(d: &[Vec<f64>]) -> f64 {
    let sum: f64 = d
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum();
    sum / d.len() as f64
}

/// COV(S, G) over point-cloud sets.
pub fn cov<T: Real>(
    reference: &[Vec<[T; 3]>],
    generated: &[Vec<[T; 3]>],
) -> Result<f64, MetricError> {
    Ok(cov_from_matrix(&pairwise_chamfer(reference, generated)?))
}

/// MMD(S, G) over point-cloud sets.
pub fn mmd<T: Real>(
    reference: &[Vec<[T; 3]>],
    generated: &[Vec<[T; 3]>],
) -> Result<f64, MetricError> {
    Ok(mmd_from_matrix(&pairwise_chamfer(reference, generated)?))
}

fn marginal<T: Real>(set: &[Vec<[T; 3]>], grid: usize) -> Vec<f64> {
    let mut hist = vec![0.0f64; grid * grid * grid];
    let mut total = 0.0f64;
    for cloud in set {
        for p in cloud {
            let bin = |v: T| -> usize {
                let t = (v.f64().clamp(-1.0, 1.0) + 1.0) / 2.0;
                ((t * grid as f64) as usize).min(grid - 1)
            };
            hist[(bin(p[2]) * grid + bin(p[1])) * grid + bin(p[0])] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        for v in &mut hist {
            *v /= total;
        }
    }
    hist
}

/// Jensen-Shannon divergence between the point marginals of two sets,
/// histogrammed on a `grid`^3 lattice over [-1, 1]^3. Natural log, so the
/// value lies in [0, ln 2].
pub fn jsd<T: Real>(
    set_a: &[Vec<[T; 3]>],
    set_b: &[Vec<[T; 3]>],
    grid: usize,
) -> Result<f64, MetricError> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(MetricError::Empty("shape set"));
    }
    let pa = marginal(set_a, grid);
    let pb = marginal(set_b, grid);
    let kl = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
            .sum()
    };
    let m: Vec<f64> = pa.iter().zip(&pb).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl(&pa, &m) + 0.5 * kl(&pb, &m))
}
