use std::collections::HashMap;

use super::{add, cross, dot, norm, normalize, scale, sub, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        TriMesh { vertices, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal (length is twice the area).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * norm(self.face_cross(f))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed volume by the divergence theorem; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Undirected edges not shared by exactly two faces.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(u32, u32)> = counts.into_iter().filter(|&(_, c)| c != 2).map(|(e, _)| e).collect();
        bad.sort_unstable();
        bad
    }

    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.boundary_edges().is_empty()
    }

    /// Euler characteristic `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for face in &self.faces {
            for k in 0..3 {
                used[face[k] as usize] = true;
                let (a, b) = (face[k], face[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.faces.len() as i64
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let n = self.face_cross(f);
            for &v in face {
                normals[v as usize] = add(normals[v as usize], n);
            }
        }
        normals.into_iter().map(normalize).collect()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn translated(&self, t: Vec3) -> TriMesh {
        self.transformed(|v| add(v, t))
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        self.transformed(|v| scale(v, s))
    }

    /// Concatenates meshes without welding.
    pub fn merged(meshes: &[&TriMesh]) -> TriMesh {
        let mut out = TriMesh::default();
        for m in meshes {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.faces.extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        }
        out
    }

    /// Flips every face.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::geometry::primitives;

    #[test]
    fn cube_measurements() {
        let cube = primitives::box_mesh([0.0; 3], [1.0, 1.0, 1.0]);
        assert!(cube.is_watertight());
        assert!((cube.area() - 24.0).abs() < 1e-12);
        assert!((cube.signed_volume() - 8.0).abs() < 1e-12);
        assert_eq!(cube.euler_characteristic(), 2);
        assert!((cube.flipped().signed_volume() + 8.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_reports_boundary() {
        let mut cube = primitives::box_mesh([0.0; 3], [1.0, 1.0, 1.0]);
        cube.faces.pop();
        assert!(!cube.is_watertight());
        assert_eq!(cube.boundary_edges().len(), 3);
    }
}
