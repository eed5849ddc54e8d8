//! Reconstruction metrics and their reports.
//!
//! Conventions: Chamfer distance is the symmetric mean of squared
//! nearest-neighbour distances times 1e4; EMD is the mean Euclidean cost of an
//! exact minimum-cost matching between equal-size seeded subsamples times
//! 1e2; intersection volume is the voxel volume occupied by two or more
//! objects times 1e3.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::kdtree::KdTree;
use crate::geometry::{norm, sub, TriMesh, Vec3};
use crate::rng::{tags, CounterRng};
use crate::shape_data::sample_mesh_points;

pub const CD_SCALE: f64 = 1e4;
pub const EMD_SCALE: f64 = 1e2;
pub const IV_SCALE: f64 = 1e3;

fn one_sided(from: &[Vec3], tree: &KdTree) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|&p| tree.nearest(p).expect("non-empty").1).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric squared Chamfer distance, scaled by [`CD_SCALE`].
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("chamfer distance of an empty point set".into()));
    }
    let ab = one_sided(a, &KdTree::new(b));
    let ba = one_sided(b, &KdTree::new(a));
    Ok((ab + ba) * CD_SCALE)
}

/// Minimum-cost perfect matching of a square cost matrix (row-major, `n×n`)
/// by the shortest-augmenting-path Hungarian method. Returns the column of
/// each row and the total cost summed in row order.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * n + cols[i]]).sum();
    (cols, total)
}

/// `k` distinct indices of `0..len` by a partial Fisher-Yates pass; equal
/// lengths and seeds give equal selections.
pub fn subsample_indices(len: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = CounterRng::stream(seed, &[tags::EMD]);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..k.min(len) {
        let j = i + rng.below(len - i);
        idx.swap(i, j);
    }
    idx.truncate(k.min(len));
    idx
}

/// Earth mover's distance between `n_sub`-point subsamples, scaled by
/// [`EMD_SCALE`].
pub fn emd(a: &[Vec3], b: &[Vec3], n_sub: usize, seed: u64) -> Result<f64> {
    if n_sub == 0 || a.len() < n_sub || b.len() < n_sub {
        return Err(Error::Invalid(format!(
            "EMD needs at least {n_sub} points per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sa: Vec<Vec3> = subsample_indices(a.len(), n_sub, seed).into_iter().map(|i| a[i]).collect();
    let sb: Vec<Vec3> = subsample_indices(b.len(), n_sub, seed).into_iter().map(|i| b[i]).collect();
    let cost: Vec<f64> = sa.iter().flat_map(|&p| sb.iter().map(move |&q| norm(sub(p, q)))).collect();
    let (_, total) = assignment(&cost, n_sub);
    Ok(total / n_sub as f64 * EMD_SCALE)
}

/// Cubic voxel lattice over `[-bounds, bounds]³`, sampled at voxel centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub bounds: f64,
}

impl VoxelGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.bounds / self.resolution as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.bounds + (i as f64 + 0.5) * self.spacing()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing().powi(3)
    }
}

/// Sign of an edge function with the query nudged by `(ε, ε²)`, so each
/// point of a shared edge belongs to exactly one of its two triangles.
fn edge_side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let e = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if e != 0.0 {
        e.signum()
    } else if b[1] != a[1] {
        -(b[1] - a[1]).signum()
    } else {
        (b[0] - a[0]).signum()
    }
}

/// Voxel-centre occupancy (`x` fastest) of a closed mesh, from signed
/// crossings of upward rays: the winding number at a centre is the sum of
/// `sign(n_z)` over the surface crossings above it.
pub fn occupancy(mesh: &TriMesh, grid: &VoxelGrid) -> Vec<bool> {
    let r = grid.resolution;
    let h = grid.spacing();
    let mut columns: Vec<Vec<(f64, i32)>> = vec![Vec::new(); r * r];
    let cell = |x: f64| ((x + grid.bounds) / h - 0.5).ceil().max(0.0) as usize;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area == 0.0 {
            continue;
        }
        let s = area.signum();
        let lo = [0, 1].map(|k| cell(a[k].min(b[k]).min(c[k])));
        let hi = [0, 1].map(|k| cell(a[k].max(b[k]).max(c[k])).min(r));
        for iy in lo[1]..hi[1] {
            for ix in lo[0]..hi[0] {
                let p = [grid.center(ix), grid.center(iy)];
                let (a2, b2, c2) = ([a[0], a[1]], [b[0], b[1]], [c[0], c[1]]);
                if edge_side(a2, b2, p) != s || edge_side(b2, c2, p) != s || edge_side(c2, a2, p) != s {
                    continue;
                }
                let wa = ((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / area;
                let wb = ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / area;
                let z = wa * a[2] + wb * b[2] + (1.0 - wa - wb) * c[2];
                columns[iy * r + ix].push((z, s as i32));
            }
        }
    }
    let mut occ = vec![false; r * r * r];
    for (col, hits) in columns.iter_mut().enumerate() {
        if hits.is_empty() {
            continue;
        }
        hits.sort_by(|x, y| x.0.total_cmp(&y.0));
        // sweep downward, accumulating crossings above the current centre
        let mut w = 0;
        let mut k = hits.len();
        for iz in (0..r).rev() {
            let z = grid.center(iz);
            while k > 0 && hits[k - 1].0 > z {
                k -= 1;
                w += hits[k].1;
            }
            occ[iz * r * r + col] = w != 0;
        }
    }
    occ
}

/// Volume where at least two of `meshes` overlap, scaled by [`IV_SCALE`].
pub fn intersection_volume(meshes: &[&TriMesh], grid: &VoxelGrid) -> Result<f64> {
    for (j, m) in meshes.iter().enumerate() {
        if !m.is_empty() && !m.is_watertight() {
            return Err(Error::NotWatertight {
                category: j,
                edges: m.boundary_edges(),
            });
        }
    }
    let occ: Vec<Vec<bool>> = meshes.par_iter().map(|m| occupancy(m, grid)).collect();
    let n = grid.resolution.pow(3);
    let count = (0..n).filter(|&v| occ.iter().filter(|o| o[v]).count() >= 2).count();
    Ok(count as f64 * grid.voxel_volume() * IV_SCALE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Surface points per object for CD and EMD.
    pub n_samples: usize,
    pub n_sub: usize,
    pub voxel_resolution: usize,
    pub voxel_bounds: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_samples: 10_000,
            n_sub: 512,
            voxel_resolution: 256,
            voxel_bounds: 1.1,
            seed: 0,
        }
    }
}

/// One object (`category` set) or one instance (`category` empty, `iv` set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub instance_id: String,
    pub category: Option<usize>,
    pub missing: bool,
    pub cd: f64,
    pub emd: f64,
    pub iv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    /// `all`, `present` or `missing` objects, or `instance`.
    pub split: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Aggregate {
    pub fn of(metric: &str, split: &str, values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 {
            sorted[k / 2]
        } else {
            0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
        };
        Some(Aggregate {
            metric: metric.into(),
            split: split.into(),
            count: values.len(),
            mean,
            std,
            median,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: EvalConfig,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
}

impl MetricReport {
    pub fn new(config: EvalConfig, rows: Vec<MetricRow>) -> Self {
        let aggregates = Self::aggregate(&rows);
        MetricReport { config, rows, aggregates }
    }

    pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
        let objects: Vec<&MetricRow> = rows.iter().filter(|r| r.category.is_some()).collect();
        let mut out = Vec::new();
        for split in ["all", "present", "missing"] {
            let sel: Vec<&&MetricRow> = objects
                .iter()
                .filter(|r| split == "all" || r.missing == (split == "missing"))
                .collect();
            let cd: Vec<f64> = sel.iter().map(|r| r.cd).collect();
            let emd: Vec<f64> = sel.iter().map(|r| r.emd).collect();
            out.extend(Aggregate::of("cd", split, &cd));
            out.extend(Aggregate::of("emd", split, &emd));
        }
        let iv: Vec<f64> = rows.iter().filter_map(|r| r.iv).collect();
        out.extend(Aggregate::of("iv", "instance", &iv));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,category,missing,cd,emd,iv\n");
        for r in &self.rows {
            let cat = r.category.map_or(String::new(), |c| c.to_string());
            let iv = r.iv.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{},{},{},{}\n", r.instance_id, cat, r.missing, r.cd, r.emd, iv));
        }
        out
    }
}

/// Rows for one instance: a CD/EMD row per category on seeded surface
/// samples, plus an instance row holding mean CD/EMD and the IV of the
/// prediction. `missing` flags categories absent from the fitted input.
pub fn evaluate_instance(
    instance_id: &str,
    pred: &[TriMesh],
    gt: &[TriMesh],
    missing: &[usize],
    config: &EvalConfig,
) -> Result<Vec<MetricRow>> {
    if pred.len() != gt.len() {
        return Err(Error::Categories(format!("{} predicted objects for {} ground-truth objects", pred.len(), gt.len())));
    }
    if let Some(&j) = missing.iter().find(|&&j| j >= gt.len()) {
        return Err(Error::Categories(format!("missing category {j} out of range")));
    }
    let mut rows = (0..gt.len())
        .into_par_iter()
        .map(|j| {
            if pred[j].is_empty() {
                return Err(Error::Categories(format!("instance {instance_id}: no prediction for category {j}")));
            }
            let mut rp = CounterRng::stream(config.seed, &[tags::METRIC_SURFACE, 0, j as u64]);
            let mut rg = CounterRng::stream(config.seed, &[tags::METRIC_SURFACE, 1, j as u64]);
            let p = sample_mesh_points(&pred[j], config.n_samples, &mut rp)?;
            let g = sample_mesh_points(&gt[j], config.n_samples, &mut rg)?;
            Ok(MetricRow {
                instance_id: instance_id.to_string(),
                category: Some(j),
                missing: missing.contains(&j),
                cd: chamfer(&p, &g)?,
                emd: emd(&p, &g, config.n_sub, config.seed)?,
                iv: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = VoxelGrid {
        resolution: config.voxel_resolution,
        bounds: config.voxel_bounds,
    };
    let iv = intersection_volume(&pred.iter().collect::<Vec<_>>(), &grid)?;
    let k = rows.len() as f64;
    rows.push(MetricRow {
        instance_id: instance_id.to_string(),
        category: None,
        missing: false,
        cd: rows.iter().map(|r| r.cd).sum::<f64>() / k,
        emd: rows.iter().map(|r| r.emd).sum::<f64>() / k,
        iv: Some(iv),
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use proptest::prelude::*;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = CounterRng::new(seed);
        (0..n).map(|_| [0; 3].map(|_| rng.uniform_range(-1.0, 1.0))).collect()
    }

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let side = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| crate::geometry::norm2(sub(*p, *q))).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        (side(a, b) + side(b, a)) * CD_SCALE
    }

    #[test]
    fn chamfer_fixed_values_and_brute_force() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 20000.0);
        let a = cloud(200, 1);
        let b = cloud(200, 2);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let got = chamfer(&a, &b).unwrap();
        let want = brute_chamfer(&a, &b);
        assert!((got - want).abs() / want < 1e-9);
        assert_eq!(got, chamfer(&b, &a).unwrap());
        assert!(chamfer(&a, &[]).is_err());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn emd_matches_exhaustive_permutations() {
        for seed in 0..20 {
            let a = cloud(4, seed);
            let b = cloud(4, seed + 100);
            let best = permutations(4)
                .iter()
                .map(|p| (0..4).map(|i| norm(sub(a[i], b[p[i]]))).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            // n_sub = len keeps every point; the order is irrelevant to the optimum
            let got = emd(&a, &b, 4, seed).unwrap();
            assert!((got - best / 4.0 * EMD_SCALE).abs() < 1e-9, "{got} vs {}", best / 4.0 * EMD_SCALE);
        }
    }

    #[test]
    fn emd_of_a_translation_is_the_offset() {
        let a = cloud(600, 4);
        let d = 0.05;
        let b: Vec<Vec3> = a.iter().map(|p| [p[0] + d, p[1], p[2]]).collect();
        assert_eq!(emd(&a, &a, 512, 3).unwrap(), 0.0);
        let got = emd(&a, &b, 512, 3).unwrap();
        assert!((got - d * EMD_SCALE).abs() < 1e-9, "{got}");
        assert!(emd(&a[..100], &b, 512, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn assignment_beats_any_given_matching(seed in any::<u64>(), n in 2usize..9) {
            let a = cloud(n, seed);
            let b = cloud(n, seed ^ 0xABCD);
            let cost: Vec<f64> = a.iter().flat_map(|&p| b.iter().map(move |&q| norm(sub(p, q)))).collect();
            let (cols, total) = assignment(&cost, n);
            let mut seen = cols.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let mut rng = CounterRng::new(seed);
            for _ in 0..20 {
                let mut perm: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut perm);
                let c: f64 = (0..n).map(|i| cost[i * n + perm[i]]).sum();
                prop_assert!(total <= c + 1e-12);
            }
        }

        #[test]
        fn chamfer_is_symmetric(seed in any::<u64>()) {
            let a = cloud(50, seed);
            let b = cloud(70, seed.wrapping_add(1));
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        }
    }

    fn lens(r: f64, d: f64) -> f64 {
        std::f64::consts::PI * (4.0 * r + d) * (2.0 * r - d).powi(2) / 12.0
    }

    #[test]
    fn sphere_lens_volume() {
        let a = icosphere([-0.4, 0.0, 0.0], 0.5, 6);
        let b = icosphere([0.4, 0.0, 0.0], 0.5, 6);
        let grid = VoxelGrid {
            resolution: 256,
            bounds: 1.1,
        };
        let iv = intersection_volume(&[&a, &b], &grid).unwrap();
        let exact = lens(0.5, 0.8) * IV_SCALE;
        assert!((iv - exact).abs() / exact < 0.05, "{iv} vs {exact}");
        let coarse = intersection_volume(&[&a, &b], &VoxelGrid { resolution: 128, ..grid }).unwrap();
        assert!((coarse - iv).abs() <= 0.1 * iv);
        let far = icosphere([0.9, 0.0, 0.0], 0.2, 3);
        let near = icosphere([-0.5, 0.0, 0.0], 0.3, 3);
        assert_eq!(intersection_volume(&[&far, &near], &grid).unwrap(), 0.0);
    }

    #[test]
    fn three_sphere_volume_agrees_with_monte_carlo() {
        let centers = [[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0], [0.0, 0.35, 0.1]];
        let r = 0.4;
        let meshes: Vec<TriMesh> = centers.iter().map(|&c| icosphere(c, r, 6)).collect();
        let grid = VoxelGrid {
            resolution: 192,
            bounds: 1.0,
        };
        let iv = intersection_volume(&meshes.iter().collect::<Vec<_>>(), &grid).unwrap() / IV_SCALE;
        // Monte-Carlo estimate of the union of pairwise intersections
        let mut rng = CounterRng::new(77);
        let n = 1_000_000;
        let (lo, hi) = ([-0.65, -0.4, -0.4], [0.65, 0.75, 0.5]);
        let box_vol: f64 = (0..3).map(|k| hi[k] - lo[k]).product();
        let hits = (0..n)
            .filter(|_| {
                let p = [0, 1, 2].map(|k| rng.uniform_range(lo[k], hi[k]));
                centers.iter().filter(|&&c| norm(sub(p, c)) < r).count() >= 2
            })
            .count();
        let frac = hits as f64 / n as f64;
        let mc = frac * box_vol;
        let sigma = box_vol * (frac * (1.0 - frac) / n as f64).sqrt();
        // tessellation shrinks each sphere by under 0.2%; allow for it beside 3σ
        let facet = 0.006 * mc;
        assert!((iv - mc).abs() < 3.0 * sigma + facet, "iv {iv} mc {mc} sigma {sigma}");
    }

    #[test]
    fn iv_grows_with_a_scaled_partner_and_rejects_open_meshes() {
        let grid = VoxelGrid {
            resolution: 96,
            bounds: 1.1,
        };
        let fixed = icosphere([0.3, 0.0, 0.0], 0.4, 4);
        let mut last = 0.0;
        for s in [1.0, 1.1, 1.25, 1.5] {
            let grown = icosphere([-0.3, 0.0, 0.0], 0.35 * s, 4);
            let iv = intersection_volume(&[&fixed, &grown], &grid).unwrap();
            assert!(iv >= last);
            last = iv;
        }
        let mut open = fixed.clone();
        open.faces.pop();
        assert!(matches!(intersection_volume(&[&open, &fixed], &grid), Err(Error::NotWatertight { category: 0, .. })));
    }

    #[test]
    fn occupancy_matches_winding_numbers() {
        let mesh = crate::geometry::primitives::rounded_box([0.1, -0.05, 0.0], [0.4, 0.3, 0.35], 0.1, 6);
        let grid = VoxelGrid {
            resolution: 23,
            bounds: 1.0,
        };
        // 23 cells keep every centre off the box faces
        let occ = occupancy(&mesh, &grid);
        let q = crate::geometry::MeshQuery::new(&mesh);
        for iz in 0..23 {
            for iy in 0..23 {
                for ix in 0..23 {
                    let p = [grid.center(ix), grid.center(iy), grid.center(iz)];
                    assert_eq!(occ[(iz * 23 + iy) * 23 + ix], q.winding_number_exact(p) > 0.5, "{p:?}");
                }
            }
        }
    }

    #[test]
    fn identical_prediction_reports_zero_distances() {
        let gt = vec![icosphere([-0.4, 0.0, 0.0], 0.5, 3), icosphere([0.4, 0.0, 0.0], 0.5, 3)];
        let cfg = EvalConfig {
            n_samples: 600,
            voxel_resolution: 64,
            seed: 5,
            ..Default::default()
        };
        // same mesh on both sides but different sample streams: compare against itself
        let rows = evaluate_instance("x", &gt, &gt, &[1], &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].missing && !rows[0].missing);
        let self_iv = intersection_volume(&[&gt[0], &gt[1]], &VoxelGrid { resolution: 64, bounds: 1.1 }).unwrap();
        assert_eq!(rows[2].iv, Some(self_iv));
        assert!(rows[..2].iter().all(|r| r.cd < 1e2));
        assert!(evaluate_instance("x", &gt[..1], &gt, &[], &cfg).is_err());

        let report = MetricReport::new(cfg.clone(), rows.clone());
        let again = MetricReport::aggregate(&report.rows);
        assert_eq!(report.aggregates, again);
        let all_cd = report.aggregates.iter().find(|a| a.metric == "cd" && a.split == "all").unwrap();
        assert_eq!(all_cd.count, 2);
        assert!((all_cd.mean - (rows[0].cd + rows[1].cd) / 2.0).abs() < 1e-12);
        let parsed: MetricReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(report.to_csv().lines().count(), 4);
    }
}
