use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::TRIANGLES;
use super::SdfGrid;
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

/// Corner offsets in the table's numbering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// A lattice edge: lower node index times three plus the axis.
type EdgeKey = usize;

struct Slab {
    triangles: Vec<[EdgeKey; 3]>,
    positions: HashMap<EdgeKey, Vec3>,
}

/// Iso-surface of one grid channel. Vertices are welded on shared lattice
/// edges, so a surface that stays inside the grid comes out closed, and faces
/// wind so their normals point toward values above `iso`. A channel without
/// a crossing gives an empty mesh.
pub fn marching_cubes(grid: &SdfGrid, channel: usize, iso: f64) -> Result<TriMesh> {
    if channel >= grid.channels {
        return Err(Error::Invalid(format!("channel {channel} of a {}-channel grid", grid.channels)));
    }
    let r = grid.resolution;
    let value = |n: [usize; 3]| grid.value(channel, n[0], n[1], n[2]) as f64;
    let slabs: Vec<Slab> = (0..r - 1)
        .into_par_iter()
        .map(|iz| {
            let mut slab = Slab {
                triangles: Vec::new(),
                positions: HashMap::new(),
            };
            for iy in 0..r - 1 {
                for ix in 0..r - 1 {
                    let nodes = CORNERS.map(|c| [ix + c[0], iy + c[1], iz + c[2]]);
                    let vals = nodes.map(value);
                    let case = (0..8).filter(|&k| vals[k] < iso).fold(0usize, |acc, k| acc | 1 << k);
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let mut keys = [0usize; 12];
                    for (e, &[a, b]) in EDGES.iter().enumerate() {
                        if (vals[a] < iso) == (vals[b] < iso) {
                            continue;
                        }
                        // interpolate from the lower node so both owners agree bit for bit
                        let (lo, hi) = if nodes[a] < nodes[b] { (a, b) } else { (b, a) };
                        let axis = (0..3).find(|&k| nodes[lo][k] != nodes[hi][k]).expect("edge spans one axis");
                        let key = grid.node(nodes[lo][0], nodes[lo][1], nodes[lo][2]) * 3 + axis;
                        keys[e] = key;
                        slab.positions.entry(key).or_insert_with(|| {
                            let t = (iso - vals[lo]) / (vals[hi] - vals[lo]);
                            let mut p = grid.point(nodes[lo][0], nodes[lo][1], nodes[lo][2]);
                            p[axis] += t * grid.spacing();
                            p
                        });
                    }
                    for tri in TRIANGLES[case].chunks(3).take_while(|t| t[0] >= 0) {
                        // the table winds toward the low side; reverse it
                        slab.triangles.push([keys[tri[0] as usize], keys[tri[2] as usize], keys[tri[1] as usize]]);
                    }
                }
            }
            slab
        })
        .collect();
    let mut ids: HashMap<EdgeKey, u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    for slab in &slabs {
        for tri in &slab.triangles {
            let face = tri.map(|k| {
                *ids.entry(k).or_insert_with(|| {
                    mesh.vertices.push(slab.positions[&k]);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            mesh.faces.push(face);
        }
    }
    Ok(mesh)
}
