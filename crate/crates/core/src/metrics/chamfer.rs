//! Chamfer distance between point clouds via a k-d tree.

use super::MetricError;
use crate::scalar::Real;

/// Static 3D k-d tree over a point set (median split, leaf size 8).
pub struct KdTree3<T> {
    points: Vec<[T; 3]>,
    nodes: Vec<Node>,
    root: usize,
}

struct Node {
    // Leaf: range into `order`; inner: split plane and children.
    axis: u8,
    split: f64,
    left: usize,
    right: usize,
    start: u32,
    end: u32,
}

const LEAF_SIZE: usize = 8;
const NONE: usize = usize::MAX;

impl<T: Real> KdTree3<T> {
    pub fn build(points: &[[T; 3]]) -> Result<Self, MetricError> {
        if points.is_empty() {
            return Err(MetricError::Empty("point cloud"));
        }
        let mut tree = KdTree3 { points: points.to_vec(), nodes: Vec::new(), root: 0 };
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let root = tree.split(&mut order, 0);
        // `order` now holds the leaf-contiguous permutation; apply it.
        let permuted: Vec<[T; 3]> = order.iter().map(|&i| points[i as usize]).collect();
        tree.points = permuted;
        tree.root = root;
        Ok(tree)
    }

    fn split(&mut self, order: &mut [u32], offset: usize) -> usize {
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node {
                axis: 0,
                split: 0.0,
                left: NONE,
                right: NONE,
                start: offset as u32,
                end: (offset + order.len()) as u32,
            });
            return self.nodes.len() - 1;
        }
        // Widest-extent axis.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in order.iter() {
            let p = &self.points[i as usize];
            for a in 0..3 {
                let v = p[a].f64();
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap()).unwrap();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a as usize][axis]
                .partial_cmp(&self.points[b as usize][axis])
                .unwrap()
        });
        let split = self.points[order[mid] as usize][axis].f64();
        let (left_slice, right_slice) = order.split_at_mut(mid);
        let left = self.split(left_slice, offset);
        let right = self.split(right_slice, offset + mid);
        self.nodes.push(Node { axis: axis as u8, split, left, right, start: 0, end: 0 });
        self.nodes.len() - 1
    }

    /// Squared distance to the nearest neighbor of `q`.
    pub fn nearest_sq(&self, q: &[T; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &[T; 3], best: &mut f64) {
        let n = &self.nodes[node];
        if n.left == NONE {
            for p in &self.points[n.start as usize..n.end as usize] {
                let mut d = 0.0f64;
                for a in 0..3 {
                    let diff = p[a].f64() - q[a].f64();
                    d += diff * diff;
                }
                if d < *best {
                    *best = d;
                }
            }
            return;
        }
        let delta = q[n.axis as usize].f64() - n.split;
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, best);
        if delta * delta < *best {
            self.search(far, q, best);
        }
    }
}

/// Chamfer distance: mean of squared nearest-neighbor distances in both
/// directions,
/// `CD = mean_x min_y ||x-y||^2 + mean_y min_x ||x-y||^2`.
pub fn chamfer<T: Real>(xs: &[[T; 3]], ys: &[[T; 3]]) -> Result<f64, MetricError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(MetricError::Empty("point cloud"));
    }
    let tx = KdTree3::build(xs)?;
    let ty = KdTree3::build(ys)?;
    let x_to_y: f64 = xs.iter().map(|p| ty.nearest_sq(p)).sum::<f64>() / xs.len() as f64;
    let y_to_x: f64 = ys.iter().map(|p| tx.nearest_sq(p)).sum::<f64>() / ys.len() as f64;
    Ok(x_to_y + y_to_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n*m) oracle, independent of the k-d path.
    fn chamfer_brute(xs: &[[f64; 3]], ys: &[[f64; 3]]) -> f64 {
        let min_sq = |p: &[f64; 3], set: &[[f64; 3]]| {
            set.iter()
                .map(|q| {
                    (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        };
        xs.iter().map(|p| min_sq(p, ys)).sum::<f64>() / xs.len() as f64
            + ys.iter().map(|p| min_sq(p, xs)).sum::<f64>() / ys.len() as f64
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| [rng.random::<f64>(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn identical_clouds_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 50);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_singletons() {
        let x = vec![[0.0, 0.0, 0.0]];
        let y = vec![[1.0, 0.0, 0.0]];
        assert!((chamfer(&x, &y).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kd_tree_matches_brute_force_on_100_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(3..60);
            let m = rng.random_range(3..60);
            let x = random_cloud(&mut rng, n);
            let y = random_cloud(&mut rng, m);
            let fast = chamfer(&x, &y).unwrap();
            let slow = chamfer_brute(&x, &y);
            let rel = (fast - slow).abs() / slow.max(1e-300);
            assert!(rel <= 1e-9, "fast {fast} slow {slow}");
        }
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let x: Vec<[f64; 3]> = vec![];
        assert!(chamfer(&x, &[[0.0, 0.0, 0.0]]).is_err());
    }
}
