//! Seeded toy scenes with exact analytic signed distances.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{norm, primitives, sub, TriMesh, Vec3};
use crate::rng::{tags, CounterRng};
use crate::shape_data::{normalize_instance, LabeledMesh, MultiObjectInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned semi-axes.
    Ellipsoid { center: Vec3, axes: Vec3 },
    /// Outer half extents `half`, edges rounded with `radius`.
    RoundedBox { center: Vec3, half: Vec3, radius: f64 },
    Box { center: Vec3, half: Vec3 },
    /// Disjoint parts forming one object.
    Union(Vec<Shape>),
}

fn box_sdf(q: Vec3, half: Vec3) -> f64 {
    let d = [0, 1, 2].map(|k| q[k].abs() - half[k]);
    let outside = norm(d.map(|v| v.max(0.0)));
    outside + d[0].max(d[1]).max(d[2]).min(0.0)
}

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

/// Bisection for the root of `Σ (n_i / (s + r_i))² = 1`.
fn bisect_root(n: &[f64], r: &[f64], s0: f64, s1: f64) -> f64 {
    let (mut lo, mut hi) = (s0, s1);
    let mut s = lo;
    for _ in 0..2000 {
        s = 0.5 * (lo + hi);
        if s == lo || s == hi {
            break;
        }
        let g: f64 = n.iter().zip(r).map(|(n, r)| (n / (s + r)).powi(2)).sum::<f64>() - 1.0;
        if g > 0.0 {
            lo = s;
        } else if g < 0.0 {
            hi = s;
        } else {
            break;
        }
    }
    s
}

/// Distance from `(y0, y1)`, both nonnegative, to the ellipse with
/// semi-axes `e0 >= e1`.
fn ellipse_distance(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let (z0, z1) = (y0 / e0, y1 / e1);
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let n0 = r0 * z0;
            let hi = if g < 0.0 { 0.0 } else { robust_length(&[n0, z1]) - 1.0 };
            let s = bisect_root(&[n0, z1], &[r0, 1.0], z1 - 1.0, hi);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

/// Unsigned distance to an origin-centred ellipsoid, `e` descending and `y`
/// nonnegative.
fn ellipsoid_distance(e: [f64; 3], y: [f64; 3]) -> f64 {
    let [e0, e1, e2] = e;
    let [y0, y1, y2] = y;
    if y2 > 0.0 {
        if y1 > 0.0 {
            if y0 > 0.0 {
                let z = [y0 / e0, y1 / e1, y2 / e2];
                let g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
                if g == 0.0 {
                    return 0.0;
                }
                let r0 = (e0 / e2).powi(2);
                let r1 = (e1 / e2).powi(2);
                let n = [r0 * z[0], r1 * z[1], z[2]];
                let hi = if g < 0.0 { 0.0 } else { robust_length(&n) - 1.0 };
                let s = bisect_root(&n, &[r0, r1, 1.0], z[2] - 1.0, hi);
                let x = [r0 * y0 / (s + r0), r1 * y1 / (s + r1), y2 / (s + 1.0)];
                norm(sub(x, y))
            } else {
                ellipse_distance(e1, e2, y1, y2)
            }
        } else if y0 > 0.0 {
            ellipse_distance(e0, e2, y0, y2).hypot(y1)
        } else {
            (y2 - e2).abs().hypot(y0).hypot(y1)
        }
    } else {
        let denom0 = e0 * e0 - e2 * e2;
        let denom1 = e1 * e1 - e2 * e2;
        let numer0 = e0 * y0;
        let numer1 = e1 * y1;
        if numer0 < denom0 && numer1 < denom1 && denom0 > 0.0 && denom1 > 0.0 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x = [e0 * xde0, e1 * xde1, e2 * discr.sqrt()];
                return norm(sub(x, [y0, y1, 0.0]));
            }
        }
        ellipse_distance(e0, e1, y0, y1)
    }
}

/// Exact signed distance to an axis-aligned ellipsoid.
pub fn ellipsoid_sdf(center: Vec3, axes: Vec3, p: Vec3) -> f64 {
    let q = sub(p, center);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| axes[b].total_cmp(&axes[a]));
    let e = idx.map(|i| axes[i]);
    let y = idx.map(|i| q[i].abs());
    let d = ellipsoid_distance(e, y);
    let inside = (0..3).map(|k| (q[k] / axes[k]).powi(2)).sum::<f64>() < 1.0;
    if inside {
        -d
    } else {
        d
    }
}

impl Shape {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => norm(sub(p, *center)) - radius,
            Shape::Ellipsoid { center, axes } => ellipsoid_sdf(*center, *axes, p),
            Shape::RoundedBox { center, half, radius } => {
                box_sdf(sub(p, *center), half.map(|h| h - radius)) - radius
            }
            Shape::Box { center, half } => box_sdf(sub(p, *center), *half),
            Shape::Union(parts) => parts.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Watertight tessellation with `resolution` lattice cells per cube edge.
    pub fn mesh(&self, resolution: usize) -> TriMesh {
        match self {
            Shape::Sphere { center, radius } => primitives::ellipsoid(*center, [*radius; 3], resolution),
            Shape::Ellipsoid { center, axes } => primitives::ellipsoid(*center, *axes, resolution),
            Shape::RoundedBox { center, half, radius } => primitives::rounded_box(*center, *half, *radius, resolution),
            Shape::Box { center, half } => primitives::box_mesh(*center, *half),
            Shape::Union(parts) => {
                let meshes: Vec<TriMesh> = parts.iter().map(|s| s.mesh(resolution)).collect();
                TriMesh::merged(&meshes.iter().collect::<Vec<_>>())
            }
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            Shape::Sphere { center, .. }
            | Shape::Ellipsoid { center, .. }
            | Shape::RoundedBox { center, .. }
            | Shape::Box { center, .. } => *center,
            Shape::Union(parts) => {
                let n = parts.len().max(1) as f64;
                parts
                    .iter()
                    .map(|s| s.center())
                    .fold([0.0; 3], |a, c| [a[0] + c[0] / n, a[1] + c[1] / n, a[2] + c[2] / n])
            }
        }
    }
}

/// One object per category, ordered by category id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub instance_id: String,
    pub shapes: Vec<Shape>,
    pub resolution: usize,
}

impl AnalyticScene {
    pub fn m(&self) -> usize {
        self.shapes.len()
    }

    pub fn sdf(&self, p: Vec3) -> Vec<f64> {
        self.shapes.iter().map(|s| s.sdf(p)).collect()
    }

    pub fn meshes(&self) -> Vec<TriMesh> {
        self.shapes.iter().map(|s| s.mesh(self.resolution)).collect()
    }

    pub fn instance(&self) -> Result<MultiObjectInstance> {
        let raw = self
            .meshes()
            .into_iter()
            .enumerate()
            .map(|(category_id, mesh)| LabeledMesh { category_id, mesh })
            .collect();
        Ok(normalize_instance(&self.instance_id, raw)?.0)
    }
}

/// Settings shared by the toy families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub resolution: usize,
    /// Amplitude of the seeded per-instance jitter.
    pub jitter: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig {
            resolution: 48,
            jitter: 0.01,
        }
    }
}

const FILLET: f64 = 0.06;
const SATELLITES: [Vec3; 4] = [[0.0, 0.0, 0.76], [0.0, 0.0, -0.76], [0.0, 0.76, 0.0], [0.0, -0.76, 0.0]];

fn phase(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Categories 0 and 1 are rounded slabs meeting face to face at a plane
/// `x = x_c` (a gap of 0.1 when `contact` is false); further categories are
/// small ellipsoids around them. Sizes and the contact plane vary smoothly
/// with the instance index.
pub fn make_blob_family(n_instances: usize, m: usize, seed: u64, contact: bool, cfg: &FamilyConfig) -> Vec<AnalyticScene> {
    assert!((2..=6).contains(&m), "blob family supports 2..=6 categories");
    (0..n_instances)
        .map(|i| {
            let mut rng = CounterRng::stream(seed, &[tags::SCENE, i as u64]);
            let mut jit = || cfg.jitter * rng.uniform_range(-1.0, 1.0);
            let t = phase(i, n_instances);
            let a0 = 0.17 + 0.06 * t + 0.5 * jit();
            let a1 = 0.23 - 0.05 * t + 0.5 * jit();
            let yz = [0.46 - 0.04 * t + 0.5 * jit(), 0.44 + 0.04 * t + 0.5 * jit()];
            let xc = -0.06 + 0.12 * t + jit();
            let gap = if contact { 0.0 } else { 0.05 };
            let mut shapes = vec![
                Shape::RoundedBox {
                    center: [xc - gap - a0, 0.0, 0.0],
                    half: [a0, yz[0], yz[1]],
                    radius: FILLET,
                },
                Shape::RoundedBox {
                    center: [xc + gap + a1, 0.0, 0.0],
                    half: [a1, yz[0], yz[1]],
                    radius: FILLET,
                },
            ];
            for slot in SATELLITES.iter().take(m - 2) {
                let r = 0.14 + 0.03 * t + jit();
                let axes = [r * 1.2, r, r * 0.9];
                let mut center = *slot;
                center[0] += 0.1 * (t - 0.5) + jit();
                shapes.push(Shape::Ellipsoid { center, axes });
            }
            AnalyticScene {
                instance_id: format!("blob{i:03}"),
                shapes,
                resolution: cfg.resolution,
            }
        })
        .collect()
}

/// Spheres whose radius grows from `radius_range.0` to `radius_range.1` and
/// whose centre translates along `y` with the instance index. Categories sit
/// on the `x` axis, 0.9 apart.
pub fn make_sphere_family(
    n_instances: usize,
    m: usize,
    seed: u64,
    radius_range: (f64, f64),
    cfg: &FamilyConfig,
) -> Vec<AnalyticScene> {
    (0..n_instances)
        .map(|i| {
            let mut rng = CounterRng::stream(seed, &[tags::SCENE, i as u64]);
            let t = phase(i, n_instances);
            let shapes = (0..m)
                .map(|j| {
                    let x = (j as f64 - (m as f64 - 1.0) / 2.0) * 0.9;
                    let radius = radius_range.0 + (radius_range.1 - radius_range.0) * t + cfg.jitter * rng.uniform_range(-0.5, 0.5);
                    let y = 0.1 * (t - 0.5) + cfg.jitter * rng.uniform_range(-1.0, 1.0);
                    Shape::Sphere {
                        center: [x, y, 0.0],
                        radius,
                    }
                })
                .collect();
            AnalyticScene {
                instance_id: format!("sphere{i:03}"),
                shapes,
                resolution: cfg.resolution,
            }
        })
        .collect()
}

/// Two spheres touching at one point `(x_c, y, 0)`, sphere 0 on the `-x`
/// side. Both radii grow with the instance index.
pub fn make_tangent_pair_family(n_instances: usize, seed: u64, radius_range: (f64, f64), cfg: &FamilyConfig) -> Vec<AnalyticScene> {
    (0..n_instances)
        .map(|i| {
            let mut rng = CounterRng::stream(seed, &[tags::SCENE, i as u64]);
            let mut jit = || cfg.jitter * rng.uniform_range(-1.0, 1.0);
            let t = phase(i, n_instances);
            let grow = radius_range.0 + (radius_range.1 - radius_range.0) * t;
            let (r0, r1) = (grow + jit(), grow + jit());
            let xc = 0.1 * (t - 0.5) + jit();
            let y = jit();
            AnalyticScene {
                instance_id: format!("pair{i:03}"),
                shapes: vec![
                    Shape::Sphere {
                        center: [xc - r0, y, 0.0],
                        radius: r0,
                    },
                    Shape::Sphere {
                        center: [xc + r1, y, 0.0],
                        radius: r1,
                    },
                ],
                resolution: cfg.resolution,
            }
        })
        .collect()
}

/// Parameters of one procedural chair, all in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChairParams {
    /// Seat underside height as a fraction of the chair's vertical extent.
    pub seat_height: f64,
    pub half_width: f64,
    pub half_depth: f64,
    pub seat_thickness: f64,
    pub leg_half: f64,
    pub back_thickness: f64,
    pub back_top: f64,
}

const FLOOR: f64 = -0.7;
const EXTENT: f64 = 1.4;

impl ChairParams {
    pub fn sample(seed: u64) -> Self {
        let mut rng = CounterRng::stream(seed, &[tags::SCENE, u64::MAX]);
        ChairParams {
            seat_height: rng.uniform_range(0.3, 0.5),
            half_width: rng.uniform_range(0.28, 0.42),
            half_depth: rng.uniform_range(0.26, 0.4),
            seat_thickness: rng.uniform_range(0.05, 0.09),
            leg_half: rng.uniform_range(0.025, 0.05),
            back_thickness: rng.uniform_range(0.04, 0.07),
            back_top: rng.uniform_range(0.55, 0.7),
        }
    }

    /// Back (0), seat (1), legs (2); parts share faces without overlapping.
    pub fn scene(&self, instance_id: &str) -> AnalyticScene {
        let seat_bottom = FLOOR + self.seat_height * EXTENT;
        let seat_top = seat_bottom + self.seat_thickness;
        let (w, d) = (self.half_width, self.half_depth);
        let seat = Shape::Box {
            center: [0.0, 0.5 * (seat_bottom + seat_top), 0.0],
            half: [w, 0.5 * self.seat_thickness, d],
        };
        let leg_h = 0.5 * (seat_bottom - FLOOR);
        let legs = Shape::Union(
            [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                .iter()
                .map(|&(sx, sz)| Shape::Box {
                    center: [sx * (w - self.leg_half), FLOOR + leg_h, sz * (d - self.leg_half)],
                    half: [self.leg_half, leg_h, self.leg_half],
                })
                .collect(),
        );
        let back_h = 0.5 * (self.back_top - seat_top);
        let back = Shape::Box {
            center: [0.0, seat_top + back_h, -d + 0.5 * self.back_thickness],
            half: [w, back_h, 0.5 * self.back_thickness],
        };
        AnalyticScene {
            instance_id: instance_id.to_string(),
            shapes: vec![back, seat, legs],
            resolution: 1,
        }
    }

    pub fn fingerprint(&self) -> [u64; 7] {
        [
            self.seat_height,
            self.half_width,
            self.half_depth,
            self.seat_thickness,
            self.leg_half,
            self.back_thickness,
            self.back_top,
        ]
        .map(f64::to_bits)
    }
}

pub fn make_chair(seed: u64) -> AnalyticScene {
    ChairParams::sample(seed).scene(&format!("chair{seed}"))
}
