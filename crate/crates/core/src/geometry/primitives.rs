//! Watertight tessellations of simple closed shapes.

use std::collections::HashMap;

use super::{add, normalize, scale, TriMesh, Vec3};

/// Surface of the lattice cube `[0, n]^3` with outward-facing triangles,
/// returned with vertices in `[-1, 1]^3`.
pub fn cube_lattice(n: usize) -> TriMesh {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |c: [usize; 3], vertices: &mut Vec<Vec3>| -> u32 {
        *index.entry(c).or_insert_with(|| {
            vertices.push(c.map(|x| 2.0 * x as f64 / n as f64 - 1.0));
            (vertices.len() - 1) as u32
        })
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0usize, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut c = [0usize; 3];
                        c[axis] = side;
                        c[u] = i + di;
                        c[v] = j + dj;
                        c
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)]
                        .map(|c| vid(c, &mut vertices));
                    if side == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, faces)
}

/// Axis-aligned box.
pub fn box_mesh(center: Vec3, half: Vec3) -> TriMesh {
    subdivided_box(center, half, 1)
}

pub fn subdivided_box(center: Vec3, half: Vec3, n: usize) -> TriMesh {
    cube_lattice(n).transformed(|v| [center[0] + v[0] * half[0], center[1] + v[1] * half[1], center[2] + v[2] * half[2]])
}

/// Ellipsoid with semi-axes `axes` (sphere when all equal), cube-sphere tessellation.
pub fn ellipsoid(center: Vec3, axes: Vec3, n: usize) -> TriMesh {
    cube_lattice(n).transformed(|v| {
        let d = normalize(v);
        [center[0] + axes[0] * d[0], center[1] + axes[1] * d[1], center[2] + axes[2] * d[2]]
    })
}

/// Box with half extents `half` whose edges are rounded with radius `radius`.
pub fn rounded_box(center: Vec3, half: Vec3, radius: f64, n: usize) -> TriMesh {
    let inner = half.map(|h| (h - radius).max(0.0));
    cube_lattice(n).transformed(|v| {
        let q = [v[0] * half[0], v[1] * half[1], v[2] * half[2]];
        let c = [0, 1, 2].map(|k| q[k].clamp(-inner[k], inner[k]));
        let dir = normalize(super::sub(q, c));
        add(center, add(c, scale(dir, radius)))
    })
}

/// Subdivided icosahedron projected onto a sphere.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = normalize(scale(add(vertices[a as usize], vertices[b as usize]), 0.5));
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(vertices.into_iter().map(|v| add(center, scale(v, radius))).collect(), faces)
}
