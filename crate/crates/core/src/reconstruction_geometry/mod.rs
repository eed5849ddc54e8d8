//! Explicit geometry from trained fields: dense grids, marching cubes,
//! template meshes, template-space correspondence and latent-code editing.

mod correspondence;
mod marching;
mod tables;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{evaluate, template_values, ModelState, EVAL_CHUNK};
use crate::geometry::{TriMesh, Vec3};
use crate::shape_data::LabeledMesh;
use crate::synthetic_scenes::AnalyticScene;

pub use correspondence::{correspond, correspond_points, CorrespondConfig, CorrespondenceMap, TemplateAnnotation};
pub use marching::marching_cubes;

pub const DEFAULT_RESOLUTION: usize = 128;
pub const DEFAULT_BOUNDS: f64 = 1.1;

/// Anything that yields an `n × channels` block of signed distances.
pub trait SdfField: Sync {
    fn channels(&self) -> usize;
    fn eval(&self, points: &[Vec3]) -> Result<Array2<f64>>;
}

/// Final (post-refinement) predictions of one fitted instance.
pub struct InstanceField<'a> {
    pub state: &'a ModelState,
    pub codes: &'a Array2<f64>,
}

impl SdfField for InstanceField<'_> {
    fn channels(&self) -> usize {
        self.state.config.m
    }

    fn eval(&self, points: &[Vec3]) -> Result<Array2<f64>> {
        Ok(evaluate(self.state, self.codes, points, EVAL_CHUNK)?.0)
    }
}

/// The undeformed templates `T_j`, one channel per category.
pub struct TemplateField<'a> {
    pub state: &'a ModelState,
}

impl SdfField for TemplateField<'_> {
    fn channels(&self) -> usize {
        self.state.config.m
    }

    fn eval(&self, points: &[Vec3]) -> Result<Array2<f64>> {
        let m = self.state.config.m;
        let mut out = Array2::zeros((points.len(), m));
        for j in 0..m {
            for (i, v) in template_values(self.state, j, points).into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

impl SdfField for AnalyticScene {
    fn channels(&self) -> usize {
        self.m()
    }

    fn eval(&self, points: &[Vec3]) -> Result<Array2<f64>> {
        let m = self.m();
        let mut out = Array2::zeros((points.len(), m));
        for (i, &p) in points.iter().enumerate() {
            for (j, v) in self.sdf(p).into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

/// Field samples on the lattice `-b + 2b·i/(R-1)` per axis, `x` fastest,
/// channels innermost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    pub resolution: usize,
    pub bounds: f64,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl SdfGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.bounds / (self.resolution - 1) as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.bounds + self.spacing() * i as f64
    }

    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [self.coordinate(ix), self.coordinate(iy), self.coordinate(iz)]
    }

    pub fn node(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution + iy) * self.resolution + ix
    }

    pub fn value(&self, channel: usize, ix: usize, iy: usize, iz: usize) -> f32 {
        self.values[self.node(ix, iy, iz) * self.channels + channel]
    }

    fn lattice_point(resolution: usize, bounds: f64, n: usize) -> Vec3 {
        let h = 2.0 * bounds / (resolution - 1) as f64;
        let (ix, rest) = (n % resolution, n / resolution);
        let (iy, iz) = (rest % resolution, rest / resolution);
        [ix, iy, iz].map(|i| -bounds + h * i as f64)
    }
}

/// Evaluates `field` on the `resolution³` lattice in chunks of `chunk` nodes.
pub fn evaluate_grid(field: &dyn SdfField, resolution: usize, bounds: f64, chunk: usize) -> Result<SdfGrid> {
    if resolution < 2 {
        return Err(Error::Invalid(format!("grid resolution must be at least 2, got {resolution}")));
    }
    if !(bounds >= 1.0) || !bounds.is_finite() {
        return Err(Error::Invalid(format!("grid bounds must be finite and at least 1, got {bounds}")));
    }
    let total = resolution.pow(3);
    let chunk = chunk.max(1);
    let channels = field.channels();
    let blocks = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let nodes = c * chunk..total.min((c + 1) * chunk);
            let pts: Vec<Vec3> = nodes.map(|n| SdfGrid::lattice_point(resolution, bounds, n)).collect();
            field.eval(&pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(total * channels);
    for b in blocks {
        values.extend(b.iter().map(|&v| v as f32));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("field produced non-finite values".into()));
    }
    Ok(SdfGrid {
        resolution,
        bounds,
        channels,
        values,
    })
}

/// One mesh per category from the final field of an instance.
pub fn reconstruct_instance(state: &ModelState, codes: &Array2<f64>, resolution: usize, bounds: f64) -> Result<Vec<LabeledMesh>> {
    let grid = evaluate_grid(&InstanceField { state, codes }, resolution, bounds, EVAL_CHUNK)?;
    (0..grid.channels)
        .map(|j| {
            Ok(LabeledMesh {
                category_id: j,
                mesh: marching_cubes(&grid, j, 0.0)?,
            })
        })
        .collect()
}

/// Zero level sets of the templates, without deformation or refinement.
pub fn extract_templates(state: &ModelState, resolution: usize, bounds: f64) -> Result<Vec<TriMesh>> {
    let grid = evaluate_grid(&TemplateField { state }, resolution, bounds, EVAL_CHUNK)?;
    (0..grid.channels).map(|j| marching_cubes(&grid, j, 0.0)).collect()
}

/// `codes` with `magnitude · direction` added to category `j` only.
pub fn edit_codes(codes: &Array2<f64>, j: usize, direction: &[f64], magnitude: f64) -> Result<Array2<f64>> {
    if j >= codes.nrows() || direction.len() != codes.ncols() {
        return Err(Error::Invalid(format!(
            "edit of category {j} with a {}-vector on {:?} codes",
            direction.len(),
            codes.dim()
        )));
    }
    let mut out = codes.clone();
    for (v, d) in out.row_mut(j).iter_mut().zip(direction) {
        *v += magnitude * d;
    }
    Ok(out)
}

/// `(1 - t) a + t b`, exact at both endpoints.
pub fn interpolate_codes(a: &Array2<f64>, b: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Invalid(format!("code shapes {:?} and {:?} differ", a.dim(), b.dim())));
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    Ok(a * (1.0 - t) + b * t)
}
