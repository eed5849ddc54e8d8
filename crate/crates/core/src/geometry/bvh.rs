//! Bounding-volume hierarchy over a triangle mesh: nearest-triangle distance
//! and a hierarchical generalized winding number.

use super::{add, cross, dot, norm, norm2, scale, sub, TriMesh, Vec3};

const LEAF_SIZE: usize = 4;
/// Far-field acceptance ratio for the dipole approximation.
const WINDING_BETA: f64 = 2.5;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    start: usize,
    count: usize,
    left: usize,
    area_normal: Vec3,
    center: Vec3,
    radius: f64,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }

    fn dist2(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Closest point to `p` on triangle `(a, b, c)`.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

/// Signed solid angle of triangle `(a, b, c)` seen from `q`.
pub fn solid_angle(q: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let (a, b, c) = (sub(a, q), sub(b, q), sub(c, q));
    let (la, lb, lc) = (norm(a), norm(b), norm(c));
    let det = dot(a, cross(b, c));
    let den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
    2.0 * det.atan2(den)
}

/// Accelerated spatial queries against one mesh.
#[derive(Clone, Debug)]
pub struct MeshQuery {
    mesh: TriMesh,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl MeshQuery {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut order: Vec<usize> = (0..mesh.faces.len()).collect();
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                scale(add(add(a, b), c), 1.0 / 3.0)
            })
            .collect();
        let mut q = MeshQuery {
            mesh: mesh.clone(),
            order: Vec::new(),
            nodes: Vec::new(),
        };
        if !mesh.faces.is_empty() {
            let n = order.len();
            q.build(&mut order, &centroids, 0, n);
        }
        q.order = order;
        q
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    fn summarize(&self, tris: &[usize]) -> Node {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut area_normal = [0.0; 3];
        let mut weighted = [0.0; 3];
        let mut total_area = 0.0;
        for &f in tris {
            let tri = self.mesh.triangle(f);
            for v in tri {
                for k in 0..3 {
                    lo[k] = lo[k].min(v[k]);
                    hi[k] = hi[k].max(v[k]);
                }
            }
            let n = scale(self.mesh.face_cross(f), 0.5);
            let area = norm(n);
            area_normal = add(area_normal, n);
            let centroid = scale(add(add(tri[0], tri[1]), tri[2]), 1.0 / 3.0);
            weighted = add(weighted, scale(centroid, area));
            total_area += area;
        }
        let center = if total_area > 0.0 {
            scale(weighted, 1.0 / total_area)
        } else {
            scale(add(lo, hi), 0.5)
        };
        let mut radius: f64 = 0.0;
        for &f in tris {
            for v in self.mesh.triangle(f) {
                radius = radius.max(norm(sub(v, center)));
            }
        }
        Node {
            lo,
            hi,
            start: 0,
            count: 0,
            left: 0,
            area_normal,
            center,
            radius,
        }
    }

    fn build(&mut self, order: &mut [usize], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let idx = self.nodes.len();
        let mut node = self.summarize(&order[start..end]);
        self.nodes.push(node.clone());
        if end - start <= LEAF_SIZE {
            node.start = start;
            node.count = end - start;
            self.nodes[idx] = node;
            return idx;
        }
        let mut clo = [f64::INFINITY; 3];
        let mut chi = [f64::NEG_INFINITY; 3];
        for &f in &order[start..end] {
            for k in 0..3 {
                clo[k] = clo[k].min(centroids[f][k]);
                chi[k] = chi[k].max(centroids[f][k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (chi[a] - clo[a]).total_cmp(&(chi[b] - clo[b])))
            .unwrap();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        let left = self.build(order, centroids, start, mid);
        let right = self.build(order, centroids, mid, end);
        node.left = left;
        node.start = right;
        node.count = 0;
        self.nodes[idx] = node;
        idx
    }

    fn children(&self, node: &Node) -> (usize, usize) {
        (node.left, node.start)
    }

    /// Closest surface point and its squared distance.
    pub fn closest_point(&self, p: Vec3) -> Option<(Vec3, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (p, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.dist2(p) >= best.1 {
                continue;
            }
            if node.is_leaf() {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(f);
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d = norm2(sub(p, q));
                    if d < best.1 {
                        best = (q, d);
                    }
                }
            } else {
                let (l, r) = self.children(node);
                let (dl, dr) = (self.nodes[l].dist2(p), self.nodes[r].dist2(p));
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }

    pub fn unsigned_distance(&self, p: Vec3) -> f64 {
        self.closest_point(p).map_or(f64::INFINITY, |(_, d)| d.sqrt())
    }

    /// Generalized winding number with far-field dipole approximation.
    pub fn winding_number(&self, q: Vec3) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.is_leaf() {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(f);
                    total += solid_angle(q, a, b, c);
                }
                continue;
            }
            let d = sub(node.center, q);
            let dist = norm(d);
            if dist > WINDING_BETA * node.radius {
                total += dot(node.area_normal, d) / (dist * dist * dist);
            } else {
                let (l, r) = self.children(node);
                stack.push(l);
                stack.push(r);
            }
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Exact winding number by summing every triangle.
    pub fn winding_number_exact(&self, q: Vec3) -> f64 {
        (0..self.mesh.faces.len())
            .map(|f| {
                let [a, b, c] = self.mesh.triangle(f);
                solid_angle(q, a, b, c)
            })
            .sum::<f64>()
            / (4.0 * std::f64::consts::PI)
    }

    /// Nearest-triangle distance, negative where the winding number exceeds 0.5.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let d = self.unsigned_distance(p);
        if self.winding_number(p) > 0.5 {
            -d
        } else {
            d
        }
    }
}

/// Signed distance from `query` to a watertight `mesh`.
pub fn signed_distance(mesh: &TriMesh, query: Vec3) -> f64 {
    MeshQuery::new(mesh).signed_distance(query)
}
