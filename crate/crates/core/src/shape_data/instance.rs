use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{io, norm, scale, sub, TriMesh, Vec3};

#[derive(Clone, Debug)]
pub struct LabeledMesh {
    pub category_id: usize,
    pub mesh: TriMesh,
}

/// `m` labeled watertight meshes in one normalized frame, ordered by category.
#[derive(Clone, Debug)]
pub struct MultiObjectInstance {
    pub instance_id: String,
    pub objects: Vec<LabeledMesh>,
}

impl MultiObjectInstance {
    pub fn m(&self) -> usize {
        self.objects.len()
    }

    pub fn mesh(&self, category: usize) -> &TriMesh {
        &self.objects[category].mesh
    }

    pub fn meshes(&self) -> Vec<TriMesh> {
        self.objects.iter().map(|o| o.mesh.clone()).collect()
    }
}

/// `x -> scale * x + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub offset: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    pub fn apply(&self, x: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| self.scale * x[k] + self.offset[k])
    }

    pub fn invert(&self, y: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| (y[k] - self.offset[k]) / self.scale)
    }
}

/// Validates the category set and maps every object into the unit sphere with
/// one shared similarity. Instances already inside the unit sphere are kept.
pub fn normalize_instance(instance_id: &str, raw: Vec<LabeledMesh>) -> Result<(MultiObjectInstance, Similarity)> {
    let m = raw.len();
    let ids: BTreeSet<usize> = raw.iter().map(|o| o.category_id).collect();
    if ids.len() != m {
        return Err(Error::Categories("duplicate category ids".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&c| c >= m) {
        return Err(Error::Categories(format!("category ids must be 0..{m}, found {bad}")));
    }
    for obj in &raw {
        if obj.mesh.faces.is_empty() || obj.mesh.vertices.is_empty() {
            return Err(Error::EmptyCategory(obj.category_id));
        }
        let edges = obj.mesh.boundary_edges();
        if !edges.is_empty() {
            return Err(Error::NotWatertight {
                category: obj.category_id,
                edges,
            });
        }
    }
    let mut objects = raw;
    objects.sort_by_key(|o| o.category_id);

    let all = || objects.iter().flat_map(|o| o.mesh.vertices.iter().copied());
    let max_radius = all().map(norm).fold(0.0, f64::max);
    let transform = if max_radius <= 1.0 {
        Similarity::identity()
    } else {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in all() {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
        let radius = all().map(|v| norm(sub(v, center))).fold(0.0, f64::max);
        let s = 1.0 / radius;
        Similarity {
            scale: s,
            offset: scale(center, -s),
        }
    };
    let objects = objects
        .into_iter()
        .map(|o| LabeledMesh {
            category_id: o.category_id,
            mesh: o.mesh.transformed(|v| transform.apply(v)),
        })
        .collect();
    Ok((
        MultiObjectInstance {
            instance_id: instance_id.to_string(),
            objects,
        },
        transform,
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestObject {
    pub category_id: usize,
    pub path: PathBuf,
}

/// `{instance_id, objects: [{category_id, path}]}`; relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceManifest {
    pub instance_id: String,
    pub objects: Vec<ManifestObject>,
}

pub fn load_manifest(path: &Path) -> Result<(InstanceManifest, Vec<LabeledMesh>)> {
    let manifest: InstanceManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let meshes = manifest
        .objects
        .iter()
        .map(|o| {
            let p = if o.path.is_absolute() { o.path.clone() } else { base.join(&o.path) };
            Ok(LabeledMesh {
                category_id: o.category_id,
                mesh: io::read_mesh(&p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, meshes))
}
