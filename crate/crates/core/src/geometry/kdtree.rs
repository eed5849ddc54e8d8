//! Static 3-d tree for exact nearest-neighbour queries.

use super::{norm2, sub, Vec3};

const LEAF: usize = 8;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices, permuted so every subtree occupies a contiguous range.
    perm: Vec<usize>,
    /// `(start, end, axis, split, right child)` per node in preorder; `u8::MAX` marks leaves.
    axes: Vec<(usize, usize, u8, f64, usize)>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            axes: Vec::new(),
        };
        if !points.is_empty() {
            let n = points.len();
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.axes.len();
        self.axes.push((start, end, u8::MAX, 0.0, 0));
        if end - start <= LEAF {
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.perm[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let split = self.points[self.perm[mid]][axis];
        self.build(start, mid);
        let right = self.build(mid, end);
        self.axes[id] = (start, end, axis as u8, split, right);
        id
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, id: usize, q: Vec3, best: &mut (usize, f64)) {
        let (start, end, axis, split, right) = self.axes[id];
        if axis == u8::MAX {
            for &i in &self.perm[start..end] {
                let d = norm2(sub(self.points[i], q));
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
            return;
        }
        let left = id + 1;
        let diff = q[axis as usize] - split;
        let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
        self.search(near, q, best);
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn matches_brute_force() {
        let mut rng = CounterRng::new(5);
        let pts: Vec<Vec3> = (0..500).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.uniform(), rng.uniform(), rng.uniform()];
            let (_, d) = tree.nearest(q).unwrap();
            let brute = pts.iter().map(|p| norm2(sub(*p, q))).fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute);
        }
    }
}
