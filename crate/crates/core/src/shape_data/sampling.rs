use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::{ContactPoint, FreeSamples, SampleArchive, SurfaceSamples};
use super::instance::MultiObjectInstance;
use crate::error::{Error, Result};
use crate::geometry::{add, normalize, scale, MeshQuery, TriMesh, Vec3};
use crate::rng::{tags, CounterRng};

/// Points drawn from one sub-stream; keeps output independent of thread count.
const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_surface: usize,
    pub n_free: usize,
    pub bounds: f64,
    pub eps_c: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_surface: 200_000,
            n_free: 250_000,
            bounds: 1.5,
            eps_c: 0.01,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_surface == 0 || self.n_free == 0 {
            return Err(Error::Config("n_surface and n_free must be positive".into()));
        }
        if !(self.eps_c > 0.0 && self.eps_c < self.bounds) {
            return Err(Error::Config(format!("eps_c must lie in (0, bounds), got {}", self.eps_c)));
        }
        Ok(())
    }
}

/// Per-object spatial indices of an instance.
pub struct InstanceQueries {
    queries: Vec<MeshQuery>,
}

impl InstanceQueries {
    pub fn new(instance: &MultiObjectInstance) -> Self {
        InstanceQueries {
            queries: instance.objects.iter().map(|o| MeshQuery::new(&o.mesh)).collect(),
        }
    }

    pub fn from_meshes(meshes: &[TriMesh]) -> Self {
        InstanceQueries {
            queries: meshes.iter().map(MeshQuery::new).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.queries.len()
    }

    pub fn query(&self, j: usize) -> &MeshQuery {
        &self.queries[j]
    }

    pub fn sdf_vector(&self, p: Vec3) -> Vec<f64> {
        self.queries.iter().map(|q| q.signed_distance(p)).collect()
    }
}

/// Splits `total` proportionally to `weights` with largest-remainder rounding;
/// ties go to the lower index.
pub fn allocate_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Area-weighted sampling over the non-degenerate faces of a mesh.
pub struct AreaSampler<'a> {
    mesh: &'a TriMesh,
    normals: Vec<Vec3>,
    faces: Vec<usize>,
    cdf: Vec<f64>,
}

impl<'a> AreaSampler<'a> {
    /// `category` only labels the error for a mesh without area.
    pub fn new(mesh: &'a TriMesh, category: usize) -> Result<Self> {
        let mut faces = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for f in 0..mesh.faces.len() {
            let a = mesh.face_area(f);
            if a > 0.0 {
                acc += a;
                faces.push(f);
                cdf.push(acc);
            }
        }
        if faces.is_empty() {
            return Err(Error::DegenerateMesh(category));
        }
        Ok(AreaSampler {
            mesh,
            normals: mesh.vertex_normals(),
            faces,
            cdf,
        })
    }

    /// Uniform-by-area point with its interpolated unit normal.
    pub fn sample(&self, rng: &mut CounterRng) -> (Vec3, Vec3) {
        let total = *self.cdf.last().unwrap();
        let target = rng.uniform() * total;
        let k = self.cdf.partition_point(|&c| c <= target).min(self.faces.len() - 1);
        let f = self.faces[k];
        let (u, v) = (rng.uniform(), rng.uniform());
        let su = u.sqrt();
        let (w0, w1, w2) = (1.0 - su, su * (1.0 - v), su * v);
        let [a, b, c] = self.mesh.triangle(f);
        let p = add(add(scale(a, w0), scale(b, w1)), scale(c, w2));
        let idx = self.mesh.faces[f].map(|i| i as usize);
        let n = add(
            add(scale(self.normals[idx[0]], w0), scale(self.normals[idx[1]], w1)),
            scale(self.normals[idx[2]], w2),
        );
        let n = if crate::geometry::norm(n) > 1e-12 {
            normalize(n)
        } else {
            normalize(self.mesh.face_cross(f))
        };
        (p, n)
    }
}

/// `n` area-uniform points of `mesh`.
pub fn sample_mesh_points(mesh: &TriMesh, n: usize, rng: &mut CounterRng) -> Result<Vec<Vec3>> {
    let sampler = AreaSampler::new(mesh, 0)?;
    Ok((0..n).map(|_| sampler.sample(rng).0).collect())
}

fn f32x3(v: Vec3) -> [f32; 3] {
    v.map(|x| x as f32)
}

/// Area-proportional surface samples carrying the full sdf vector (zero for
/// the owning category).
pub fn sample_surface(instance: &MultiObjectInstance, queries: &InstanceQueries, config: &SamplingConfig) -> Result<SurfaceSamples> {
    let m = instance.m();
    let samplers = instance
        .objects
        .iter()
        .enumerate()
        .map(|(j, o)| AreaSampler::new(&o.mesh, j))
        .collect::<Result<Vec<_>>>()?;
    let areas: Vec<f64> = instance.objects.iter().map(|o| o.mesh.area()).collect();
    let counts = allocate_counts(&areas, config.n_surface);
    let mut out = SurfaceSamples::default();
    for (j, sampler) in samplers.iter().enumerate() {
        let n = counts[j];
        let chunks: Vec<Vec<(Vec3, Vec3, Vec<f64>)>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = CounterRng::stream(config.seed, &[tags::SURFACE, j as u64, c as u64]);
                let len = CHUNK.min(n - c * CHUNK);
                (0..len)
                    .map(|_| {
                        let (p, nrm) = sampler.sample(&mut rng);
                        let sdf = (0..m)
                            .map(|k| if k == j { 0.0 } else { queries.query(k).signed_distance(p) })
                            .collect();
                        (p, nrm, sdf)
                    })
                    .collect()
            })
            .collect();
        for (p, nrm, sdf) in chunks.into_iter().flatten() {
            out.positions.push(f32x3(p));
            out.normals.push(f32x3(normalize(nrm)));
            out.category.push(j as u16);
            out.sdf.extend(sdf.into_iter().map(|v| v as f32));
        }
    }
    Ok(out)
}

/// Uniform samples in the free-space cube with their sdf vectors.
pub fn sample_free_space(queries: &InstanceQueries, config: &SamplingConfig) -> FreeSamples {
    let n = config.n_free;
    let b = config.bounds;
    let chunks: Vec<Vec<(Vec3, Vec<f64>)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = CounterRng::stream(config.seed, &[tags::FREE, c as u64]);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let p = [0; 3].map(|_| rng.uniform_range(-b, b));
                    (p, queries.sdf_vector(p))
                })
                .collect()
        })
        .collect();
    let mut out = FreeSamples::default();
    for (p, sdf) in chunks.into_iter().flatten() {
        out.positions.push(f32x3(p));
        out.sdf.extend(sdf.into_iter().map(|v| v as f32));
    }
    out
}

/// Free points whose stored sdf is below `eps_c` for at least two categories.
pub fn extract_contact_set(archive: &SampleArchive, eps_c: f64) -> Vec<ContactPoint> {
    (0..archive.n_free())
        .filter_map(|i| {
            let gamma: Vec<u16> = archive
                .free_sdf(i)
                .iter()
                .enumerate()
                .filter(|(_, &s)| (s as f64) < eps_c)
                .map(|(j, _)| j as u16)
                .collect();
            (gamma.len() >= 2).then_some(ContactPoint {
                free_index: i as u64,
                gamma,
            })
        })
        .collect()
}

/// Full preprocessing of one normalized instance.
pub fn build_archive(instance: &MultiObjectInstance, config: &SamplingConfig) -> Result<SampleArchive> {
    config.validate()?;
    let queries = InstanceQueries::new(instance);
    let surface = sample_surface(instance, &queries, config)?;
    let free = sample_free_space(&queries, config);
    let mut archive = SampleArchive {
        m: instance.m(),
        bounds: config.bounds as f32,
        eps_c: config.eps_c as f32,
        seed: config.seed,
        surface,
        free,
        contacts: Vec::new(),
    };
    archive.contacts = extract_contact_set(&archive, config.eps_c);
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot, norm, primitives, sub};
    use crate::shape_data::{normalize_instance, LabeledMesh};
    use proptest::prelude::*;

    fn two_spheres() -> MultiObjectInstance {
        normalize_instance(
            "spheres",
            vec![
                LabeledMesh {
                    category_id: 0,
                    mesh: primitives::icosphere([-0.45, 0.0, 0.0], 0.45, 4),
                },
                LabeledMesh {
                    category_id: 1,
                    mesh: primitives::icosphere([0.45, 0.0, 0.0], 0.45, 4),
                },
            ],
        )
        .unwrap()
        .0
    }

    fn small_config(seed: u64) -> SamplingConfig {
        SamplingConfig {
            n_surface: 3000,
            n_free: 6000,
            eps_c: 0.05,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn largest_remainder_split() {
        assert_eq!(allocate_counts(&[3.0, 1.0], 200_000), vec![150_000, 50_000]);
        assert_eq!(allocate_counts(&[1.0], 200_000), vec![200_000]);
        assert_eq!(allocate_counts(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(allocate_counts(&[1.0, 1.0, 1.0], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn surface_rows_are_consistent() {
        let inst = two_spheres();
        let a = build_archive(&inst, &small_config(3)).unwrap();
        assert_eq!(a.n_surface(), 3000);
        for i in 0..a.n_surface() {
            let j = a.surface.category[i] as usize;
            assert_eq!(a.surface_sdf(i)[j], 0.0);
            let n = a.surface.normals[i].map(|v| v as f64);
            assert!((norm(n) - 1.0).abs() < 1e-6);
            // outward normal on a sphere
            let c = if j == 0 { [-0.45, 0.0, 0.0] } else { [0.45, 0.0, 0.0] };
            let p = a.surface.positions[i].map(|v| v as f64);
            assert!(dot(normalize(sub(p, c)), n) > 0.99);
        }
    }

    #[test]
    fn free_space_stays_in_bounds_and_is_centered() {
        let inst = two_spheres();
        let cfg = SamplingConfig {
            n_free: 40_000,
            ..small_config(5)
        };
        let free = sample_free_space(&InstanceQueries::new(&inst), &cfg);
        for k in 0..3 {
            let mean: f64 = free.positions.iter().map(|p| p[k] as f64).sum::<f64>() / 40_000.0;
            // sd of the mean is 1.5 / sqrt(3 * 40000) ~ 0.0043
            assert!(mean.abs() < 0.02, "axis {k} mean {mean}");
        }
        assert!(free.positions.iter().flatten().all(|v| v.abs() <= 1.5));
    }

    #[test]
    fn free_space_sdf_matches_analytic_spheres() {
        let inst = two_spheres();
        let cfg = SamplingConfig {
            n_free: 1000,
            ..small_config(8)
        };
        let free = sample_free_space(&InstanceQueries::new(&inst), &cfg);
        // subdivision-4 icosphere of radius 0.45 deviates from the sphere by < 2e-3
        for (i, p) in free.positions.iter().enumerate() {
            let p = p.map(|v| v as f64);
            for (j, c) in [[-0.45, 0.0, 0.0], [0.45, 0.0, 0.0]].into_iter().enumerate() {
                let exact = norm(sub(p, c)) - 0.45;
                assert!((free.sdf[i * 2 + j] as f64 - exact).abs() < 2e-3);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let inst = two_spheres();
        let a = build_archive(&inst, &small_config(11)).unwrap();
        let b = build_archive(&inst, &small_config(11)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = build_archive(&inst, &small_config(12)).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn single_free_point_is_reproducible() {
        let inst = two_spheres();
        let cfg = SamplingConfig {
            n_free: 1,
            ..small_config(9)
        };
        let q = InstanceQueries::new(&inst);
        assert_eq!(sample_free_space(&q, &cfg).positions, sample_free_space(&q, &cfg).positions);
    }

    #[test]
    fn tangent_spheres_contacts_match_brute_force() {
        let inst = two_spheres();
        let a = build_archive(&inst, &small_config(4)).unwrap();
        assert!(!a.contacts.is_empty());
        let q = InstanceQueries::new(&inst);
        for c in &a.contacts {
            let p = a.free.positions[c.free_index as usize].map(|v| v as f64);
            for s in q.sdf_vector(p) {
                assert!(s < 0.05 + 1e-6);
            }
        }
        let brute: Vec<u64> = (0..a.n_free())
            .filter(|&i| a.free_sdf(i).iter().filter(|&&s| (s as f64) < 0.05).count() >= 2)
            .map(|i| i as u64)
            .collect();
        assert_eq!(a.contacts.iter().map(|c| c.free_index).collect::<Vec<_>>(), brute);
        assert!(extract_contact_set(&a, 0.0).is_empty());
    }

    #[test]
    fn far_objects_have_no_contacts() {
        let (inst, _) = normalize_instance(
            "far",
            vec![
                LabeledMesh {
                    category_id: 0,
                    mesh: primitives::icosphere([-0.6, 0.0, 0.0], 0.3, 2),
                },
                LabeledMesh {
                    category_id: 1,
                    mesh: primitives::icosphere([0.6, 0.0, 0.0], 0.3, 2),
                },
            ],
        )
        .unwrap();
        let cfg = SamplingConfig {
            eps_c: 0.01,
            ..small_config(1)
        };
        assert!(build_archive(&inst, &cfg).unwrap().contacts.is_empty());
    }

    #[test]
    fn area_proportional_on_two_triangles() {
        // disjoint triangles with area ratio 2:1
        let mesh = TriMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [5.0, 0.0, 0.0],
                [6.0, 0.0, 0.0],
                [5.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let sampler = AreaSampler::new(&mesh, 0).unwrap();
        let mut rng = CounterRng::new(77);
        let n = 100_000;
        let hits = (0..n).filter(|_| sampler.sample(&mut rng).0[0] < 3.0).count() as f64;
        let p = 2.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 3.0 * sigma);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn displaced_surface_samples_have_matching_sign(
            hx in 0.15f64..0.6, hy in 0.15f64..0.6, hz in 0.15f64..0.6, seed in 0u64..1000,
        ) {
            let mesh = primitives::ellipsoid([0.0; 3], [hx, hy, hz], 6);
            let q = MeshQuery::new(&mesh);
            let sampler = AreaSampler::new(&mesh, 0).unwrap();
            let mut rng = CounterRng::new(seed);
            for _ in 0..20 {
                let (p, n) = sampler.sample(&mut rng);
                prop_assert!(q.signed_distance(add(p, scale(n, 1e-3))) > 0.0);
                prop_assert!(q.signed_distance(add(p, scale(n, -1e-3))) < 0.0);
            }
        }

        #[test]
        fn contact_set_equals_brute_force(
            sdf in proptest::collection::vec(-0.2f32..0.2, 3 * 64), eps in 0.001f64..0.1,
        ) {
            let archive = SampleArchive {
                m: 3,
                free: FreeSamples { positions: vec![[0.0; 3]; 64], sdf: sdf.clone() },
                ..Default::default()
            };
            let got = extract_contact_set(&archive, eps);
            let mut want = Vec::new();
            for i in 0..64 {
                let mut gamma = Vec::new();
                for j in 0..3 {
                    if (sdf[i * 3 + j] as f64) < eps {
                        gamma.push(j as u16);
                    }
                }
                if gamma.len() >= 2 {
                    want.push(ContactPoint { free_index: i as u64, gamma });
                }
            }
            prop_assert_eq!(got, want);
        }

        #[test]
        fn archive_round_trip(
            pos in proptest::collection::vec(-1.5f32..1.5, 3 * 10),
            sdf in proptest::collection::vec(-1.0f32..1.0, 2 * 10),
            seed in any::<u64>(),
        ) {
            let positions: Vec<[f32; 3]> = pos.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let mut a = SampleArchive {
                m: 2,
                bounds: 1.5,
                eps_c: 0.01,
                seed,
                surface: SurfaceSamples {
                    positions: positions[..4].to_vec(),
                    normals: vec![[0.0, 0.0, 1.0]; 4],
                    category: vec![0, 1, 1, 0],
                    sdf: sdf[..8].to_vec(),
                },
                free: FreeSamples { positions: positions.clone(), sdf: sdf.clone() },
                contacts: Vec::new(),
            };
            a.contacts = extract_contact_set(&a, 0.3);
            let b = SampleArchive::from_bytes(&a.to_bytes()).unwrap();
            prop_assert!(a.bit_eq(&b));
        }
    }
}
