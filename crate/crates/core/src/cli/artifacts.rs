use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::{read_mesh, write_ply};
use crate::geometry::TriMesh;
use crate::shape_data::{load_manifest, InstanceManifest, LabeledMesh, ManifestObject};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const RUN_MANIFEST: &str = "run.json";

/// Provenance record written beside every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub kernel: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

/// Collects outputs under one root and writes the manifest last.
pub struct Recorder {
    root: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl Recorder {
    /// `out` names a directory unless `file_out` is set, in which case its
    /// parent holds the manifest.
    pub fn new(command: &str, out: &Path, file_out: bool, seed: u64, kernel: &str) -> Result<Self> {
        let root = if file_out {
            out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
        } else {
            out.to_path_buf()
        };
        std::fs::create_dir_all(&root)?;
        Ok(Recorder {
            root,
            started: Instant::now(),
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA,
                version: format!("v{}", env!("CARGO_PKG_VERSION")),
                command: command.to_string(),
                seed,
                kernel: kernel.to_string(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_seconds: 0.0,
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    /// Path under the root, with parent directories created and the output
    /// recorded.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.root.join(rel.as_ref());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.manifest.outputs.push(rel.as_ref().display().to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = self.root.join(RUN_MANIFEST);
        std::fs::write(path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

/// Writes `<dir>/object_<j>.ply` per mesh and a `manifest.json` listing them.
pub fn write_instance_dir(rec: &mut Recorder, dir: &Path, instance_id: &str, meshes: &[LabeledMesh]) -> Result<()> {
    let mut manifest = InstanceManifest {
        instance_id: instance_id.to_string(),
        objects: Vec::new(),
    };
    for o in meshes {
        let name = format!("object_{}.ply", o.category_id);
        write_ply(&o.mesh, None, &rec.output(dir.join(&name))?)?;
        manifest.objects.push(ManifestObject {
            category_id: o.category_id,
            path: PathBuf::from(name),
        });
    }
    std::fs::write(rec.output(dir.join("manifest.json"))?, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Instance directories (`*/manifest.json`) under `root`, sorted by name.
pub fn instance_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Meshes of one instance directory ordered by category id. Empty meshes
/// (written for categories without a surface) load as empty.
pub fn read_instance_dir(dir: &Path) -> Result<(String, Vec<TriMesh>)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)?;
    let manifest: InstanceManifest = serde_json::from_str(&text)?;
    let mut objects = manifest.objects.clone();
    objects.sort_by_key(|o| o.category_id);
    if objects.iter().enumerate().any(|(j, o)| o.category_id != j) {
        return Err(Error::Categories(format!("{}: category ids must be 0..m-1", path.display())));
    }
    let meshes = objects.iter().map(|o| read_mesh(&dir.join(&o.path))).collect::<Result<Vec<_>>>()?;
    Ok((manifest.instance_id, meshes))
}

/// Validated, labelled meshes of an instance manifest file.
pub fn read_instance_manifest(path: &Path) -> Result<(String, Vec<LabeledMesh>)> {
    let (m, meshes) = load_manifest(path)?;
    Ok((m.instance_id, meshes))
}
