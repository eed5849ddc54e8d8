//! Acceptance suite. Every criterion is its own test and prints exactly one
//! `criterion N: PASS|FAIL ...` line. Criteria 5 to 7 share one trained toy
//! model; expect the whole target to take the better part of an hour on a
//! single core.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;

use modif::evaluation::{chamfer, emd, evaluate_instance, intersection_volume, EvalConfig, MetricRow, VoxelGrid};
use modif::field::screw::{rotation_matrix, screw_apply};
use modif::field::{checkpoint, model_forward, ForwardOptions, ModelConfig, ModelState};
use modif::geometry::primitives::icosphere;
use modif::geometry::TriMesh;
use modif::objectives::{
    contact_loss, curriculum_sdf_loss, per_object_sdf_loss, total_objective, CentroidPrior, LossBatch, LossWeights,
};
use modif::optimization::{fit_latent, init_codes, recover_missing, train, CodeBank, FitConfig, TrainConfig};
use modif::reconstruction_geometry::{correspond, extract_templates, reconstruct_instance, CorrespondConfig, TemplateAnnotation};
use modif::rng::CounterRng;
use modif::shape_data::{build_archive, normalize_instance, sample_mesh_points, LabeledMesh, MultiObjectInstance, SampleArchive, SamplingConfig};
use modif::synthetic_scenes::{make_blob_family, make_sphere_family, FamilyConfig};
use modif::tape::Tape;

type Vec3 = [f64; 3];

fn report(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn random_points(n: usize, seed: u64, half: f64) -> Vec<Vec3> {
    let mut rng = CounterRng::new(seed);
    (0..n).map(|_| [0; 3].map(|_| rng.uniform_range(-half, half))).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

fn tangent_sphere_archive() -> SampleArchive {
    let objects = vec![
        LabeledMesh {
            category_id: 0,
            mesh: icosphere([-0.4, 0.0, 0.0], 0.4, 3),
        },
        LabeledMesh {
            category_id: 1,
            mesh: icosphere([0.4, 0.0, 0.0], 0.4, 3),
        },
    ];
    let (inst, _) = normalize_instance("pair", objects).unwrap();
    let cfg = SamplingConfig {
        n_surface: 80,
        n_free: 400,
        bounds: 1.0,
        eps_c: 0.3,
        seed: 17,
    };
    build_archive(&inst, &cfg).unwrap()
}

fn objective_total(state: &ModelState, codes: &Array2<f64>, batch: &LossBatch, prior: &CentroidPrior) -> f64 {
    let tape = Tape::new();
    let bound = state.bind(&tape, false);
    let cv: Vec<_> = codes.rows().into_iter().map(|r| tape.constant(r.to_owned().insert_axis(ndarray::Axis(0)))).collect();
    let p = tape.constant(batch.points.clone());
    let out = model_forward(&tape, state, &bound, &cv, p, ForwardOptions::default()).unwrap();
    let obj = total_objective(&tape, &out, &cv, batch, &LossWeights::training(), prior).unwrap();
    tape.scalar_value(obj.total)
}

#[test]
fn criterion_1_objective_gradient_matches_finite_differences() {
    let start = Instant::now();
    let archive = tangent_sphere_archive();
    let surface: Vec<usize> = (0..archive.n_surface()).collect();
    let free: Vec<usize> = (0..archive.n_free()).collect();
    let batch = LossBatch::gather(&archive, &surface, &free, &[]);
    let prior = CentroidPrior::from_archives(&[&archive], 2).unwrap();
    let state = ModelState::init(&ModelConfig::tiny(2), 21).unwrap();
    let mut rng = CounterRng::new(22);
    let codes = Array2::from_shape_fn((2, state.config.code_dim), |_| 0.1 * rng.normal());

    let tape = Tape::new();
    let bound = state.bind(&tape, true);
    let cv: Vec<_> = codes.rows().into_iter().map(|r| tape.constant(r.to_owned().insert_axis(ndarray::Axis(0)))).collect();
    let p = tape.constant(batch.points.clone());
    let out = model_forward(&tape, &state, &bound, &cv, p, ForwardOptions::default()).unwrap();
    let obj = total_objective(&tape, &out, &cv, &batch, &LossWeights::training(), &prior).unwrap();
    assert!(!batch.contacts.is_empty(), "contact term must be exercised");
    let grads = tape.backward(obj.total);

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (ti, r, c) = state.flat_index(rng.below(state.num_parameters()));
        let analytic = grads.get(bound.vars[ti]).map_or(0.0, |g| g[[r, c]]);
        let h = 1e-6;
        let mut plus = state.clone();
        plus.tensors[ti][[r, c]] += h;
        let mut minus = state.clone();
        minus.tensors[ti][[r, c]] -= h;
        let fd = (objective_total(&plus, &codes, &batch, &prior) - objective_total(&minus, &codes, &batch, &prior)) / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    report(1, worst < 1e-2 && secs < 120.0, format!("worst relative error {worst:.2e} over 20 parameters in {secs:.1}s"));
}

// ---------------------------------------------------------------- 2

type M4 = [[f64; 4]; 4];

fn mat_mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Matrix exponential by scaling and squaring around a 30-term Taylor core.
fn expm(a: &M4) -> M4 {
    let norm: f64 = a.iter().flatten().map(|v| v.abs()).sum();
    let k = (norm / 0.05).log2().ceil().max(0.0) as i32;
    let x = a.map(|row| row.map(|v| v / 2f64.powi(k)));
    let mut sum = [[0.0; 4]; 4];
    let mut term = [[0.0; 4]; 4];
    for i in 0..4 {
        sum[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for n in 1..30 {
        term = mat_mul(&term, &x).map(|row| row.map(|v| v / n as f64));
        for i in 0..4 {
            for j in 0..4 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..k {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

fn twist_by_expm(r: Vec3, t: Vec3, p: Vec3) -> Vec3 {
    let xi: M4 = [
        [0.0, -r[2], r[1], t[0]],
        [r[2], 0.0, -r[0], t[1]],
        [-r[1], r[0], 0.0, t[2]],
        [0.0; 4],
    ];
    let e = expm(&xi);
    [0, 1, 2].map(|i| e[i][0] * p[0] + e[i][1] * p[1] + e[i][2] * p[2] + e[i][3])
}

#[test]
fn criterion_2_screw_transform_suite() {
    let mut failures = Vec::new();
    let p = [0.3, -0.7, 1.1];
    if dist2(screw_apply([0.0; 3], [0.0; 3], p), p) > 1e-24 {
        failures.push("identity");
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    if dist2(screw_apply([0.0, 0.0, half_pi], [0.0; 3], [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0]).sqrt() > 1e-12 {
        failures.push("quarter turn");
    }
    // translation along the rotation axis is unaffected by the rotation
    if dist2(screw_apply([0.0, 0.0, half_pi], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]), [0.0, 1.0, 1.0]).sqrt() > 1e-12 {
        failures.push("quarter-turn screw");
    }

    let mut rng = CounterRng::new(202);
    let mut worst_ortho: f64 = 0.0;
    for _ in 0..1000 {
        let r = [0; 3].map(|_| rng.uniform_range(-5.0, 5.0));
        let m = rotation_matrix(r);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                worst_ortho = worst_ortho.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    if worst_ortho > 1e-6 {
        failures.push("orthonormality");
    }

    let mut worst_exp: f64 = 0.0;
    for case in 0..100 {
        let scale = match case % 4 {
            0 => 1e-8,
            1 => 1e-3,
            _ => 3.0,
        };
        let r = [0; 3].map(|_| rng.uniform_range(-scale, scale));
        let t = [0; 3].map(|_| rng.uniform_range(-1.0, 1.0));
        let p = [0; 3].map(|_| rng.uniform_range(-1.0, 1.0));
        let got = screw_apply(r, t, p);
        let want = twist_by_expm(r, t, p);
        for k in 0..3 {
            worst_exp = worst_exp.max((got[k] - want[k]).abs());
        }
    }
    if worst_exp > 1e-7 {
        failures.push("matrix exponential");
    }
    report(
        2,
        failures.is_empty(),
        format!("orthonormality error {worst_ortho:.1e}, expm deviation {worst_exp:.1e} over 100 cases; failed: {failures:?}"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_analytic_sdf_fixed_points() {
    let r = 0.45;
    let mut rng = CounterRng::new(303);
    let (n_s, n_f) = (200, 200);
    let mut points = Array2::zeros((n_s + n_f, 3));
    let mut normals = Array2::zeros((n_s, 3));
    for i in 0..n_s + n_f {
        let d: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = if i < n_s { r } else { rng.uniform_range(0.05, 1.4) };
        for k in 0..3 {
            points[[i, k]] = d[k] / len * radius;
            if i < n_s {
                normals[[i, k]] = d[k] / len;
            }
        }
    }
    let norms: Vec<f64> = points.rows().into_iter().map(|p| p.dot(&p).sqrt()).collect();
    let sdf = Array2::from_shape_fn((n_s + n_f, 1), |(i, _)| norms[i] - r);
    let grad = Array2::from_shape_fn((n_s + n_f, 3), |(i, k)| points[[i, k]] / norms[i]);
    let batch = LossBatch {
        points,
        n_surface: n_s,
        surface_category: vec![0; n_s],
        normals,
        gt: sdf.clone(),
        contacts: Vec::new(),
        missing: Vec::new(),
    };
    let tape = Tape::new();
    let terms = per_object_sdf_loss(&tape, tape.constant(sdf.clone()), tape.constant(grad), &batch, 0, 100.0).unwrap();
    let surface = tape.scalar_value(terms.surface);
    let eikonal = tape.scalar_value(terms.eikonal);
    let normal = tape.scalar_value(terms.normal);

    let zero = tape.constant(Array2::zeros((1, 2)));
    let sigma0 = tape.scalar_value(contact_loss(&tape, zero, &[(0, vec![0, 1])], 100.0));
    let curriculum = tape.scalar_value(curriculum_sdf_loss(&tape, tape.constant(sdf.clone()), &sdf, 0.0, 0.5));

    let pass = surface < 1e-6 && eikonal < 1e-6 && normal < 1e-6 && sigma0 == 0.0 && curriculum == 0.0;
    report(
        3,
        pass,
        format!("surface {surface:.1e}, eikonal {eikonal:.1e}, normal {normal:.1e}, sigma(0) {sigma0}, curriculum {curriculum}"),
    );
}

// ---------------------------------------------------------------- 4

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| x.iter().map(|&p| y.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64;
    (one(a, b) + one(b, a)) * 1e4
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn sphere_lens(r: f64, d: f64) -> f64 {
    std::f64::consts::PI * (4.0 * r + d) * (2.0 * r - d).powi(2) / 12.0
}

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();
    let a = random_points(300, 401, 1.0);
    let b = random_points(420, 402, 0.8);
    let cd_rel = (chamfer(&a, &b).unwrap() - brute_chamfer(&a, &b)).abs() / brute_chamfer(&a, &b);

    let mut emd_worst: f64 = 0.0;
    for seed in 0..20 {
        let x = random_points(4, 410 + seed, 1.0);
        let y = random_points(4, 450 + seed, 1.0);
        let best = permutations(4)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| dist2(x[i], y[j]).sqrt()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let want = best / 4.0 * 1e2;
        emd_worst = emd_worst.max((emd(&x, &y, 4, seed).unwrap() - want).abs() / want);
    }

    let grid = VoxelGrid {
        resolution: 256,
        bounds: 1.1,
    };
    let (r, d) = (0.5, 0.4);
    let s0 = icosphere([-d / 2.0, 0.0, 0.0], r, 5);
    let s1 = icosphere([d / 2.0, 0.0, 0.0], r, 5);
    let lens = intersection_volume(&[&s0, &s1], &grid).unwrap() / 1e3;
    let lens_rel = (lens - sphere_lens(r, d)).abs() / sphere_lens(r, d);

    let centers = [[-0.3, -0.15, 0.0], [0.3, -0.15, 0.05], [0.0, 0.35, -0.05]];
    let radii = [0.45, 0.4, 0.42];
    let spheres: Vec<TriMesh> = centers.iter().zip(radii).map(|(&c, r)| icosphere(c, r, 5)).collect();
    let iv = intersection_volume(&spheres.iter().collect::<Vec<_>>(), &grid).unwrap() / 1e3;
    let mut rng = CounterRng::new(404);
    let n = 400_000;
    let half = 0.9;
    let hits = (0..n)
        .filter(|_| {
            let p = [0; 3].map(|_| rng.uniform_range(-half, half));
            centers.iter().zip(radii).filter(|(c, r)| dist2(p, **c) < r * r).count() >= 2
        })
        .count();
    let box_volume = (2.0 * half).powi(3);
    let frac = hits as f64 / n as f64;
    let mc = frac * box_volume;
    let sigma = (frac * (1.0 - frac) / n as f64).sqrt() * box_volume;
    let mc_dev = (iv - mc).abs() / sigma;

    let secs = start.elapsed().as_secs_f64();
    let pass = cd_rel < 1e-9 && emd_worst < 1e-9 && lens_rel < 0.05 && mc_dev < 3.0 && secs < 300.0;
    report(
        4,
        pass,
        format!(
            "CD rel {cd_rel:.1e}, EMD rel {emd_worst:.1e}, lens rel {lens_rel:.4}, three-sphere IV {iv:.5} vs MC {mc:.5} ({mc_dev:.2} sigma), {secs:.0}s"
        ),
    );
}

// ---------------------------------------------------------------- 5-7

const TOY_SEED: u64 = 1;
const TOY_INSTANCES: usize = 8;
const TOY_EPOCHS: usize = 400;
const RESOLUTION: usize = 128;
const HELD_OUT: [usize; 2] = [5, 9];

fn toy_sampling() -> SamplingConfig {
    SamplingConfig {
        n_surface: 20_000,
        n_free: 250_000,
        seed: TOY_SEED,
        ..Default::default()
    }
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: TOY_EPOCHS,
        batch_instances: 1,
        points_per_instance: 512,
        lr: 2e-4,
        seed: TOY_SEED,
        max_contact_points: 256,
        checkpoint_every: 0,
    }
}

fn toy_fit_config() -> FitConfig {
    FitConfig {
        iterations: 300,
        lr: 1e-2,
        points_per_instance: 512,
        max_contact_points: 256,
        seed: TOY_SEED,
        ..Default::default()
    }
}

fn eval_config() -> EvalConfig {
    EvalConfig {
        seed: TOY_SEED,
        ..Default::default()
    }
}

struct Trained {
    state: ModelState,
    bank: CodeBank,
    seconds: f64,
}

struct BlobData {
    instances: Vec<MultiObjectInstance>,
    archives: Vec<SampleArchive>,
    held_out: Vec<(MultiObjectInstance, SampleArchive)>,
}

fn blob_data() -> &'static BlobData {
    static DATA: OnceLock<BlobData> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = FamilyConfig::default();
        let instances: Vec<_> = make_blob_family(TOY_INSTANCES, 2, TOY_SEED, true, &cfg).iter().map(|s| s.instance().unwrap()).collect();
        let archives = instances.iter().map(|i| build_archive(i, &toy_sampling()).unwrap()).collect();
        // a denser family of the same seed interleaves unseen phases
        let dense = make_blob_family(2 * TOY_INSTANCES - 1, 2, TOY_SEED, true, &cfg);
        let held_out = HELD_OUT
            .iter()
            .map(|&i| {
                let inst = dense[i].instance().unwrap();
                let archive = build_archive(&inst, &toy_sampling()).unwrap();
                (inst, archive)
            })
            .collect();
        BlobData {
            instances,
            archives,
            held_out,
        }
    })
}

fn train_toy(full: bool) -> Trained {
    let data = blob_data();
    let mut model = ModelConfig::toy(2);
    let mut weights = LossWeights::training();
    if !full {
        model.refinement = false;
        weights.lambda_contact = 0.0;
    }
    let ids: Vec<String> = data.instances.iter().map(|i| i.instance_id.clone()).collect();
    let mut state = ModelState::init(&model, TOY_SEED).unwrap();
    let mut bank = init_codes(&ids, 2, model.code_dim, TOY_SEED);
    let prior = CentroidPrior::from_archives(&data.archives.iter().collect::<Vec<_>>(), 2).unwrap();
    let start = Instant::now();
    train(&data.archives, &mut state, &mut bank, &toy_train_config(), &weights, &prior, |_, _, _| Ok(())).unwrap();
    Trained {
        state,
        bank,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn full_model() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| train_toy(true))
}

fn ablated_model() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| train_toy(false))
}

fn gt_meshes(inst: &MultiObjectInstance) -> Vec<TriMesh> {
    inst.objects.iter().map(|o| o.mesh.clone()).collect()
}

fn evaluate_codes(state: &ModelState, codes: &Array2<f64>, inst: &MultiObjectInstance, missing: &[usize]) -> Vec<MetricRow> {
    let pred: Vec<TriMesh> = reconstruct_instance(state, codes, RESOLUTION, 1.1).unwrap().into_iter().map(|l| l.mesh).collect();
    evaluate_instance(&inst.instance_id, &pred, &gt_meshes(inst), missing, &eval_config()).unwrap()
}

/// Per-object CD rows and per-instance IV of every training instance.
fn training_metrics(model: &Trained) -> (Vec<f64>, Vec<f64>) {
    let data = blob_data();
    let mut cds = Vec::new();
    let mut ivs = Vec::new();
    for (i, inst) in data.instances.iter().enumerate() {
        for row in evaluate_codes(&model.state, &model.bank.codes[i], inst, &[]) {
            match row.category {
                Some(_) => cds.push(row.cd),
                None => ivs.push(row.iv.expect("instance row carries IV")),
            }
        }
    }
    (cds, ivs)
}

fn full_metrics() -> &'static (Vec<f64>, Vec<f64>) {
    static METRICS: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    METRICS.get_or_init(|| training_metrics(full_model()))
}

fn held_out_fits() -> &'static Vec<Array2<f64>> {
    static FITS: OnceLock<Vec<Array2<f64>>> = OnceLock::new();
    FITS.get_or_init(|| {
        let state = &full_model().state;
        blob_data().held_out.iter().map(|(_, a)| fit_latent(state, a, &toy_fit_config(), None).unwrap().codes).collect()
    })
}

#[test]
fn criterion_5_toy_overfit_and_held_out_fit() {
    let model = full_model();
    let (cds, _) = full_metrics();
    let train_cd = mean(cds);
    let worst = cds.iter().copied().fold(0.0, f64::max);
    let mut held = Vec::new();
    for ((inst, _), codes) in blob_data().held_out.iter().zip(held_out_fits()) {
        held.extend(evaluate_codes(&model.state, codes, inst, &[]).into_iter().filter(|r| r.category.is_some()).map(|r| r.cd));
    }
    let held_cd = mean(&held);
    let pass = train_cd < 10.0 && held_cd < 3.0 * train_cd && model.seconds <= 1800.0;
    report(
        5,
        pass,
        format!(
            "training per-object CD mean {train_cd:.2} (max {worst:.2}) after {:.0}s; held-out fit CD {held_cd:.2} = {:.2}x training",
            model.seconds,
            held_cd / train_cd
        ),
    );
}

#[test]
fn criterion_6_contact_and_refinement_ablation() {
    let full = full_model();
    let ablated = ablated_model();
    let (full_cd, full_iv) = full_metrics();
    let (abl_cd, abl_iv) = training_metrics(ablated);
    let (fc, fi, ac, ai) = (mean(full_cd), mean(full_iv), mean(&abl_cd), mean(&abl_iv));
    let pass = fi <= 0.5 * ai && fc <= 1.1 * ac && full.seconds + ablated.seconds <= 3600.0;
    report(
        6,
        pass,
        format!(
            "full IV {fi:.3} vs ablated {ai:.3} (ratio {:.2}); full CD {fc:.2} vs ablated {ac:.2}; training {:.0}s + {:.0}s",
            fi / ai,
            full.seconds,
            ablated.seconds
        ),
    );
}

fn volume_centroid(mesh: &TriMesh) -> Vec3 {
    let mut c = [0.0; 3];
    let mut volume = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, d] = mesh.triangle(f);
        let v = (a[0] * (b[1] * d[2] - b[2] * d[1]) - a[1] * (b[0] * d[2] - b[2] * d[0]) + a[2] * (b[0] * d[1] - b[1] * d[0])) / 6.0;
        volume += v;
        for k in 0..3 {
            c[k] += v * (a[k] + b[k] + d[k]) / 4.0;
        }
    }
    c.map(|x| x / volume)
}

#[test]
fn criterion_7_missing_object_recovery() {
    let state = &full_model().state;
    let grid = VoxelGrid {
        resolution: 256,
        bounds: 1.1,
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for ((inst, archive), unmasked) in blob_data().held_out.iter().zip(held_out_fits()) {
        let unmasked_rows = evaluate_codes(state, unmasked, inst, &[]);
        for missing in 0..2 {
            let present = 1 - missing;
            let config = FitConfig {
                missing_categories: vec![missing],
                ..toy_fit_config()
            };
            let codes = recover_missing(state, archive, &config).unwrap().codes;
            let pred: Vec<TriMesh> = reconstruct_instance(state, &codes, RESOLUTION, 1.1).unwrap().into_iter().map(|l| l.mesh).collect();
            let center_err = dist2(volume_centroid(&pred[missing]), volume_centroid(&inst.objects[missing].mesh)).sqrt();
            let iv = intersection_volume(&[&pred[0], &pred[1]], &grid).unwrap() / 1e3;
            let iv_frac = iv / pred[missing].signed_volume();
            let rows = evaluate_instance(&inst.instance_id, &pred, &gt_meshes(inst), &[missing], &eval_config()).unwrap();
            let present_cd = rows[present].cd;
            let reference_cd = unmasked_rows[present].cd;
            let ok = center_err < 0.05 && iv_frac < 0.01 && present_cd <= 2.0 * reference_cd;
            pass &= ok;
            lines.push(format!(
                "{} miss {missing}: center {center_err:.3}, IV/vol {iv_frac:.4}, present CD {present_cd:.2} vs {reference_cd:.2}",
                inst.instance_id
            ));
        }
    }
    report(7, pass, lines.join("; "));
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_correspondence_round_trip() {
    let family = FamilyConfig::default();
    let instances: Vec<_> = make_sphere_family(6, 2, 8, (0.25, 0.4), &family).iter().map(|s| s.instance().unwrap()).collect();
    let sampling = SamplingConfig {
        n_surface: 20_000,
        n_free: 100_000,
        seed: 8,
        ..Default::default()
    };
    let archives: Vec<_> = instances.iter().map(|i| build_archive(i, &sampling).unwrap()).collect();
    let ids: Vec<String> = instances.iter().map(|i| i.instance_id.clone()).collect();
    let model = ModelConfig::toy(2);
    let mut state = ModelState::init(&model, 8).unwrap();
    let mut bank = init_codes(&ids, 2, model.code_dim, 8);
    let prior = CentroidPrior::from_archives(&archives.iter().collect::<Vec<_>>(), 2).unwrap();
    let config = TrainConfig {
        epochs: 150,
        seed: 8,
        ..toy_train_config()
    };
    train(&archives, &mut state, &mut bank, &config, &LossWeights::training(), &prior, |_, _, _| Ok(())).unwrap();

    let j = 0;
    let template = &extract_templates(&state, RESOLUTION, 1.1).unwrap()[j];
    let mut rng = CounterRng::new(808);
    let template_points = sample_mesh_points(template, 20_000, &mut rng).unwrap();
    let cx = mean(&template_points.iter().map(|p| p[0]).collect::<Vec<_>>());
    let annotation = TemplateAnnotation::paint(j, template_points, |q| if q[0] > cx { 1.0 } else { 0.0 }).unwrap();

    let corr = CorrespondConfig {
        resolution: RESOLUTION,
        target_samples: 50_000,
        seed: 8,
        ..Default::default()
    };
    let (a, b) = (&bank.codes[0], &bank.codes[5]);
    let surface_a = &reconstruct_instance(&state, a, RESOLUTION, 1.1).unwrap()[j].mesh;
    let source = sample_mesh_points(surface_a, 2000, &mut rng).unwrap();
    let labels_a = annotation.transfer(&state, a, &source).unwrap();
    let forward = correspond(&state, a, b, j, &source, &corr).unwrap();
    let labels_b = annotation.transfer(&state, b, &forward.target).unwrap();
    let back = correspond(&state, b, a, j, &forward.target, &corr).unwrap();
    let labels_back = annotation.transfer(&state, a, &back.target).unwrap();

    let iou = |x: &[f64], y: &[f64]| {
        let inter = x.iter().zip(y).filter(|(p, q)| **p > 0.5 && **q > 0.5).count();
        let union = x.iter().zip(y).filter(|(p, q)| **p > 0.5 || **q > 0.5).count();
        inter as f64 / union.max(1) as f64
    };
    let (iou_ab, iou_back) = (iou(&labels_a, &labels_b), iou(&labels_a, &labels_back));
    let region = labels_a.iter().filter(|&&l| l > 0.5).count() as f64 / labels_a.len() as f64;
    let pass = iou_ab > 0.9 && iou_back > 0.9 && region > 0.1 && region < 0.9;
    report(8, pass, format!("IoU A->B {iou_ab:.3}, round trip {iou_back:.3}, labelled fraction {region:.2}"));
}

// ---------------------------------------------------------------- 9

fn short_run(archives: &[SampleArchive]) -> (Vec<u8>, CodeBank, Vec<String>) {
    let model = ModelConfig::tiny(2);
    let ids: Vec<String> = (0..archives.len()).map(|i| format!("i{i}")).collect();
    let mut state = ModelState::init(&model, 9).unwrap();
    let mut bank = init_codes(&ids, 2, model.code_dim, 9);
    let prior = CentroidPrior::from_archives(&archives.iter().collect::<Vec<_>>(), 2).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_instances: 2,
        points_per_instance: 256,
        seed: 9,
        max_contact_points: 64,
        ..Default::default()
    };
    let log = train(archives, &mut state, &mut bank, &config, &LossWeights::training(), &prior, |_, _, _| Ok(())).unwrap();
    (checkpoint::to_bytes(&state), bank, log.iter().map(|r| r.to_json_line()).collect())
}

#[test]
fn criterion_9_determinism() {
    let family = FamilyConfig {
        resolution: 24,
        ..Default::default()
    };
    let instances: Vec<_> = make_blob_family(3, 2, 9, true, &family).iter().map(|s| s.instance().unwrap()).collect();
    let sampling = SamplingConfig {
        n_surface: 4000,
        n_free: 20_000,
        seed: 9,
        ..Default::default()
    };
    let build = || instances.iter().map(|i| build_archive(i, &sampling).unwrap()).collect::<Vec<_>>();
    let first = build();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let second = pool.install(build);
    let archives_equal = first.iter().zip(&second).all(|(a, b)| a.to_bytes() == b.to_bytes());

    let (ckpt_a, bank_a, log_a) = short_run(&first[..2]);
    let (ckpt_b, bank_b, log_b) = pool.install(|| short_run(&first[..2]));
    let bits = |b: &CodeBank| b.codes.iter().flat_map(|c| c.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    let train_equal = ckpt_a == ckpt_b && bits(&bank_a) == bits(&bank_b) && log_a == log_b;

    let state = checkpoint::from_bytes(&ckpt_a).unwrap();
    let fit = FitConfig {
        iterations: 5,
        points_per_instance: 256,
        max_contact_points: 64,
        seed: 9,
        ..Default::default()
    };
    let f1 = fit_latent(&state, &first[2], &fit, None).unwrap();
    let f2 = pool.install(|| fit_latent(&state, &first[2], &fit, None).unwrap());
    let fit_equal = f1.codes.iter().zip(f2.codes.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
        && f1.history.iter().map(|r| r.to_json_line()).eq(f2.history.iter().map(|r| r.to_json_line()));

    let pass = archives_equal && train_equal && fit_equal;
    let mut status = BTreeMap::new();
    status.insert("archives", archives_equal);
    status.insert("train", train_equal);
    status.insert("fit", fit_equal);
    report(9, pass, format!("bit-identical across reruns and thread counts: {status:?}"));
}
