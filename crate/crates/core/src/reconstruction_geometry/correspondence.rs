use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{evaluate_grid, marching_cubes, InstanceField, DEFAULT_BOUNDS, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::field::{deform_points, ModelState, EVAL_CHUNK};
use crate::geometry::kdtree::KdTree;
use crate::geometry::Vec3;
use crate::rng::{tags, CounterRng};
use crate::shape_data::sample_mesh_points;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrespondConfig {
    pub resolution: usize,
    pub bounds: f64,
    /// Points sampled on the target's reconstructed surface.
    pub target_samples: usize,
    pub seed: u64,
}

impl Default for CorrespondConfig {
    fn default() -> Self {
        CorrespondConfig {
            resolution: DEFAULT_RESOLUTION,
            bounds: DEFAULT_BOUNDS,
            target_samples: 100_000,
            seed: 0,
        }
    }
}

/// Source points of instance A matched to surface points of instance B
/// through their template-space images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceMap {
    pub category: usize,
    pub source: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub template_source: Vec<Vec3>,
    pub template_target: Vec<Vec3>,
    /// Template-space distance of each match.
    pub distance: Vec<f64>,
}

impl CorrespondenceMap {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sx,sy,sz,tx,ty,tz,qx,qy,qz,distance\n");
        for i in 0..self.len() {
            let [s, t, q] = [self.source[i], self.target[i], self.template_source[i]];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s[0], s[1], s[2], t[0], t[1], t[2], q[0], q[1], q[2], self.distance[i]
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Matches `source` (on A) against an explicit sample of B's surface.
pub fn correspond_points(
    state: &ModelState,
    codes_a: &Array2<f64>,
    codes_b: &Array2<f64>,
    j: usize,
    source: &[Vec3],
    target_surface: &[Vec3],
) -> Result<CorrespondenceMap> {
    if target_surface.is_empty() {
        return Err(Error::Invalid(format!("target surface of category {j} is empty")));
    }
    let (qa, _) = deform_points(state, codes_a, j, source)?;
    let (qb, _) = deform_points(state, codes_b, j, target_surface)?;
    let tree = KdTree::new(&qb);
    let mut map = CorrespondenceMap {
        category: j,
        source: source.to_vec(),
        target: Vec::with_capacity(source.len()),
        template_source: qa.clone(),
        template_target: Vec::with_capacity(source.len()),
        distance: Vec::with_capacity(source.len()),
    };
    for q in qa {
        let (k, d2) = tree.nearest(q).expect("non-empty tree");
        map.target.push(target_surface[k]);
        map.template_target.push(qb[k]);
        map.distance.push(d2.sqrt());
    }
    Ok(map)
}

/// Reconstructs B's category `j`, samples it densely and matches `source`.
pub fn correspond(
    state: &ModelState,
    codes_a: &Array2<f64>,
    codes_b: &Array2<f64>,
    j: usize,
    source: &[Vec3],
    config: &CorrespondConfig,
) -> Result<CorrespondenceMap> {
    if j >= state.config.m {
        return Err(Error::Categories(format!("category {j} out of range")));
    }
    let grid = evaluate_grid(&InstanceField { state, codes: codes_b }, config.resolution, config.bounds, EVAL_CHUNK)?;
    let mesh = marching_cubes(&grid, j, 0.0)?;
    if mesh.is_empty() {
        return Err(Error::Invalid(format!("reconstructed surface of category {j} is empty")));
    }
    let mut rng = CounterRng::stream(config.seed, &[tags::CORRESPOND, j as u64]);
    let target = sample_mesh_points(&mesh, config.target_samples, &mut rng)?;
    correspond_points(state, codes_a, codes_b, j, source, &target)
}

/// Scalar labels painted on template-space points of one category; any
/// instance point takes the label of its template image's nearest neighbour.
#[derive(Clone, Debug)]
pub struct TemplateAnnotation {
    pub category: usize,
    points: Vec<Vec3>,
    labels: Vec<f64>,
    tree: KdTree,
}

impl TemplateAnnotation {
    pub fn new(category: usize, points: Vec<Vec3>, labels: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::Invalid("annotation needs one label per template point".into()));
        }
        let tree = KdTree::new(&points);
        Ok(TemplateAnnotation {
            category,
            points,
            labels,
            tree,
        })
    }

    /// Labels template points with `paint`.
    pub fn paint(category: usize, points: Vec<Vec3>, paint: impl Fn(Vec3) -> f64) -> Result<Self> {
        let labels = points.iter().map(|&p| paint(p)).collect();
        Self::new(category, points, labels)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn label_at(&self, q: Vec3) -> f64 {
        let (k, _) = self.tree.nearest(q).expect("non-empty annotation");
        self.labels[k]
    }

    /// Labels of instance points via their template images.
    pub fn transfer(&self, state: &ModelState, codes: &Array2<f64>, points: &[Vec3]) -> Result<Vec<f64>> {
        let (q, _) = deform_points(state, codes, self.category, points)?;
        Ok(q.into_iter().map(|q| self.label_at(q)).collect())
    }
}
