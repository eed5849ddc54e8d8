//! Loss terms and the phase-weighted objective.
//!
//! Every term is a mean over the rows it is defined on, so weights do not
//! depend on batch size. Rows of a [`LossBatch`] are the surface samples
//! first, then free-space samples.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::dual::Dual;
use crate::field::screw::screw_apply_dual;
use crate::field::ForwardOut;
use crate::geometry::Vec3;
use crate::shape_data::SampleArchive;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sdf: f64,
    pub lambda_reg: f64,
    pub lambda_correg: f64,
    pub lambda_normal: f64,
    pub lambda_smooth: f64,
    pub lambda_centroid: f64,
    pub lambda_fsdf: f64,
    pub lambda_refreg: f64,
    pub lambda_contact: f64,
    pub curriculum_eps: f64,
    pub curriculum_lambda: f64,
    /// Sharpness inside the contact penalty `tanh(k |s| / 2)`.
    pub sigma_sharpness: f64,
    /// Decay of the off-surface penalty `exp(-δ |s|)`.
    pub rho_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::training()
    }
}

impl LossWeights {
    pub fn training() -> Self {
        LossWeights {
            lambda_sdf: 1.0,
            lambda_reg: 1e3,
            lambda_correg: 5e2,
            lambda_normal: 1e2,
            lambda_smooth: 5.0,
            lambda_centroid: 1.0,
            lambda_fsdf: 5e2,
            lambda_refreg: 3e2,
            lambda_contact: 5.0,
            curriculum_eps: 0.0,
            curriculum_lambda: 0.5,
            sigma_sharpness: 100.0,
            rho_delta: 100.0,
        }
    }

    pub fn reconstruction() -> Self {
        LossWeights {
            lambda_refreg: 0.0,
            lambda_correg: 0.0,
            lambda_normal: 0.0,
            lambda_smooth: 0.0,
            lambda_centroid: 0.0,
            ..Self::training()
        }
    }

    pub fn zero() -> Self {
        LossWeights {
            lambda_sdf: 0.0,
            lambda_reg: 0.0,
            lambda_correg: 0.0,
            lambda_normal: 0.0,
            lambda_smooth: 0.0,
            lambda_centroid: 0.0,
            lambda_fsdf: 0.0,
            lambda_refreg: 0.0,
            lambda_contact: 0.0,
            ..Self::training()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = self.weights();
        if let Some((name, v)) = named.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Config(format!("weight {name} must be nonnegative, got {v}")));
        }
        if !(self.curriculum_eps >= 0.0) || !(0.0..1.0).contains(&self.curriculum_lambda) {
            return Err(Error::Config("curriculum needs eps >= 0 and 0 <= lambda < 1".into()));
        }
        Ok(())
    }

    /// `(term name, weight)` in breakdown order.
    pub fn weights(&self) -> [(&'static str, f64); 9] {
        [
            ("sdf", self.lambda_sdf),
            ("reg", self.lambda_reg),
            ("correg", self.lambda_correg),
            ("normal", self.lambda_normal),
            ("smooth", self.lambda_smooth),
            ("centroid", self.lambda_centroid),
            ("fsdf", self.lambda_fsdf),
            ("refreg", self.lambda_refreg),
            ("contact", self.lambda_contact),
        ]
    }
}

/// Mean per-category centroid of training surface samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidPrior {
    pub centroids: Vec<Vec3>,
}

impl CentroidPrior {
    pub fn from_archives(archives: &[&SampleArchive], m: usize) -> Result<Self> {
        let mut sum = vec![[0.0; 3]; m];
        let mut count = vec![0usize; m];
        for a in archives {
            let mut c = vec![[0.0; 3]; m];
            let mut n = vec![0usize; m];
            for (p, &cat) in a.surface.positions.iter().zip(&a.surface.category) {
                let j = cat as usize;
                for k in 0..3 {
                    c[j][k] += p[k] as f64;
                }
                n[j] += 1;
            }
            for j in 0..m {
                if n[j] > 0 {
                    for k in 0..3 {
                        sum[j][k] += c[j][k] / n[j] as f64;
                    }
                    count[j] += 1;
                }
            }
        }
        if let Some(j) = count.iter().position(|&c| c == 0) {
            return Err(Error::EmptyCategory(j));
        }
        Ok(CentroidPrior {
            centroids: (0..m).map(|j| sum[j].map(|v| v / count[j] as f64)).collect(),
        })
    }
}

/// Supervision for one instance's rows.
#[derive(Clone, Debug)]
pub struct LossBatch {
    pub points: Array2<f64>,
    pub n_surface: usize,
    pub surface_category: Vec<usize>,
    /// `n_surface×3`.
    pub normals: Array2<f64>,
    /// `n×m`, NaN where no ground truth exists.
    pub gt: Array2<f64>,
    /// `(row, categories)`.
    pub contacts: Vec<(usize, Vec<usize>)>,
    pub missing: Vec<usize>,
}

impl LossBatch {
    /// Surface rows `surface`, then free rows `free` of `archive`.
    pub fn gather(archive: &SampleArchive, surface: &[usize], free: &[usize], missing: &[usize]) -> Self {
        let m = archive.m;
        let n = surface.len() + free.len();
        let mut points = Array2::zeros((n, 3));
        let mut gt = Array2::zeros((n, m));
        let mut normals = Array2::zeros((surface.len(), 3));
        let mut surface_category = Vec::with_capacity(surface.len());
        for (row, &i) in surface.iter().enumerate() {
            for k in 0..3 {
                points[[row, k]] = archive.surface.positions[i][k] as f64;
                normals[[row, k]] = archive.surface.normals[i][k] as f64;
            }
            for (j, &v) in archive.surface_sdf(i).iter().enumerate() {
                gt[[row, j]] = v as f64;
            }
            surface_category.push(archive.surface.category[i] as usize);
        }
        let contact_of: HashMap<u64, &Vec<u16>> = archive.contacts.iter().map(|c| (c.free_index, &c.gamma)).collect();
        let mut contacts = Vec::new();
        for (k, &i) in free.iter().enumerate() {
            let row = surface.len() + k;
            for c in 0..3 {
                points[[row, c]] = archive.free.positions[i][c] as f64;
            }
            for (j, &v) in archive.free_sdf(i).iter().enumerate() {
                gt[[row, j]] = v as f64;
            }
            if let Some(gamma) = contact_of.get(&(i as u64)) {
                contacts.push((row, gamma.iter().map(|&g| g as usize).collect()));
            }
        }
        LossBatch {
            points,
            n_surface: surface.len(),
            surface_category,
            normals,
            gt,
            contacts,
            missing: missing.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.gt.ncols()
    }

    pub fn surface_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_surface).filter(|&i| self.surface_category[i] == j).collect()
    }

    /// Rows that are not surface samples of category `j`.
    pub fn off_surface_rows(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| i >= self.n_surface || self.surface_category[i] != j).collect()
    }

    fn normals_of(&self, rows: &[usize]) -> Result<Array2<f64>> {
        if self.normals.nrows() != self.n_surface {
            return Err(Error::Invalid(format!(
                "{} normals for {} surface samples",
                self.normals.nrows(),
                self.n_surface
            )));
        }
        Ok(self.normals.select(ndarray::Axis(0), rows))
    }
}

fn masked_mean(tape: &Tape, x: Var, rows: &[usize]) -> Var {
    if rows.is_empty() {
        return tape.scalar(0.0);
    }
    tape.mean(tape.rows(x, rows))
}

/// Row-wise dot product of two `n×3` tensors.
fn row_dot(tape: &Tape, a: Var, b: Var) -> Var {
    tape.row_sum(tape.mul(a, b))
}

fn row_norm(tape: &Tape, a: Var) -> Var {
    tape.sqrt(tape.row_sum(tape.square(a)))
}

/// Row-wise cosine between `g` and unit normals `n`; a raw inner product
/// would reward inflating `|g|` wherever no Eikonal term constrains it.
fn row_cosine(tape: &Tape, g: Var, n: Var) -> Var {
    let inv = tape.recip(tape.offset(row_norm(tape, g), 1e-12));
    tape.mul(row_dot(tape, g, n), inv)
}

#[derive(Clone, Copy, Debug)]
pub struct SdfTerms {
    pub total: Var,
    pub surface: Var,
    pub normal: Var,
    pub eikonal: Var,
    pub off_surface: Var,
}

/// Four-part sub-function loss of category `j` from `s'_j` (`n×1`) and its
/// spatial gradient (`n×3`).
pub fn per_object_sdf_loss(tape: &Tape, s_prime: Var, grad: Var, batch: &LossBatch, j: usize, delta: f64) -> Result<SdfTerms> {
    let on = batch.surface_rows(j);
    let normals = batch.normals_of(&on)?;
    let surface = masked_mean(tape, tape.abs(s_prime), &on);
    let normal = if on.is_empty() {
        tape.scalar(0.0)
    } else {
        let g = tape.rows(grad, &on);
        let cos = row_cosine(tape, g, tape.constant(normals));
        tape.mean(tape.offset(tape.neg(cos), 1.0))
    };
    let eikonal = tape.mean(tape.abs(tape.offset(row_norm(tape, grad), -1.0)));
    let off = batch.off_surface_rows(j);
    let off_surface = masked_mean(tape, tape.exp(tape.scale(tape.abs(s_prime), -delta)), &off);
    let total = tape.add(tape.add(surface, normal), tape.add(eikonal, off_surface));
    Ok(SdfTerms {
        total,
        surface,
        normal,
        eikonal,
        off_surface,
    })
}

/// `(L_normal, L_smooth)` of category `j`.
pub fn deformation_priors(
    tape: &Tape,
    grad_template: Var,
    disp_jacobian: [Var; 3],
    batch: &LossBatch,
    j: usize,
) -> Result<(Var, Var)> {
    let on = batch.surface_rows(j);
    let normal = if on.is_empty() {
        tape.scalar(0.0)
    } else {
        let normals = batch.normals_of(&on)?;
        let cos = row_cosine(tape, tape.rows(grad_template, &on), tape.constant(normals));
        tape.mean(tape.offset(tape.neg(cos), 1.0))
    };
    let sq = disp_jacobian
        .iter()
        .map(|&c| tape.row_sum(tape.square(c)))
        .reduce(|a, b| tape.add(a, b))
        .expect("three columns");
    let smooth = tape.mean(tape.sqrt(sq));
    Ok((normal, smooth))
}

/// `‖α‖²` of a `1×k` code.
pub fn code_regularizer(tape: &Tape, code: Var) -> Var {
    tape.sum(tape.square(code))
}

/// Mean `|Δs_j|` over rows.
pub fn correction_regularizer(tape: &Tape, delta_s: Var) -> Var {
    tape.mean(tape.abs(delta_s))
}

/// Mean over rows of `Σ_j |Δs_O,j|`.
pub fn refinement_regularizer(tape: &Tape, delta_so: Var) -> Var {
    let rows = tape.shape(delta_so).0.max(1);
    tape.scale(tape.sum(tape.abs(delta_so)), 1.0 / rows as f64)
}

/// Distance between the deformed batch centroid of category `j` and the
/// prior; `None` when the batch has no surface sample of `j`.
pub fn centroid_loss(tape: &Tape, r: Var, t: Var, delta_p: Var, batch: &LossBatch, j: usize, prior: Vec3) -> Option<Var> {
    let on = batch.surface_rows(j);
    if on.is_empty() {
        return None;
    }
    let mut c = Array2::zeros((1, 3));
    for &i in &on {
        for k in 0..3 {
            c[[0, k]] += batch.points[[i, k]] / on.len() as f64;
        }
    }
    let mean = |x: Var| tape.mean_rows(tape.rows(x, &on));
    let moved = screw_apply_dual(
        tape,
        &Dual::plain(mean(r)),
        &Dual::plain(mean(t)),
        &Dual::plain(tape.constant(c)),
    );
    let q = tape.add(moved.v, mean(delta_p));
    let diff = tape.sub(q, tape.constant(Array2::from_shape_vec((1, 3), prior.to_vec()).unwrap()));
    Some(tape.sqrt(tape.sum(tape.square(diff))))
}

/// Hardness weight `1 + lam · sgn(ŝ) · sgn(ŝ - s)`.
pub fn curriculum_weight(s: f64, gt: f64, lam: f64) -> f64 {
    let sgn = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    1.0 + lam * sgn(gt) * sgn(gt - s)
}

/// Mean of `w · max(|s - ŝ| - eps, 0)` over entries with ground truth.
pub fn curriculum_sdf_loss(tape: &Tape, s: Var, gt: &Array2<f64>, eps: f64, lam: f64) -> Var {
    let sv = tape.value(s).clone();
    let mut weight = Array2::zeros(gt.dim());
    let mut target = Array2::zeros(gt.dim());
    let mut count = 0usize;
    for ((idx, &g), &p) in gt.indexed_iter().zip(sv.iter()) {
        if g.is_finite() {
            weight[idx] = curriculum_weight(p, g, lam);
            target[idx] = g;
            count += 1;
        }
    }
    if count == 0 {
        return tape.scalar(0.0);
    }
    let err = tape.relu(tape.offset(tape.abs(tape.sub(s, tape.constant(target))), -eps));
    tape.scale(tape.sum(tape.mul(err, tape.constant(weight))), 1.0 / count as f64)
}

/// `Σ_points Σ_{j∈Γ} tanh(k |s'_j| / 2)` divided by the contact count.
pub fn contact_loss(tape: &Tape, s_prime: Var, contacts: &[(usize, Vec<usize>)], sharpness: f64) -> Var {
    if contacts.is_empty() {
        return tape.scalar(0.0);
    }
    let (n, m) = tape.shape(s_prime);
    let mut mask = Array2::zeros((n, m));
    for (row, gamma) in contacts {
        for &j in gamma {
            mask[[*row, j]] = 1.0;
        }
    }
    let sigma = tape.tanh(tape.scale(tape.abs(s_prime), 0.5 * sharpness));
    tape.scale(tape.sum(tape.mul(sigma, tape.constant(mask))), 1.0 / contacts.len() as f64)
}

/// Total objective of one instance with its unweighted terms.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub terms: Vec<(&'static str, Var)>,
}

impl Objective {
    pub fn breakdown(&self, tape: &Tape) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> =
            self.terms.iter().map(|(k, v)| (k.to_string(), tape.scalar_value(*v))).collect();
        out.insert("total".into(), tape.scalar_value(self.total));
        out
    }
}

/// `(1/m) Σ_j (per-category terms) + fsdf + refreg + contact`, weighted.
pub fn total_objective(
    tape: &Tape,
    out: &ForwardOut,
    codes: &[Var],
    batch: &LossBatch,
    weights: &LossWeights,
    prior: &CentroidPrior,
) -> Result<Objective> {
    weights.validate()?;
    let m = batch.m();
    let zero = || tape.scalar(0.0);
    let mut acc: [Vec<Var>; 6] = Default::default();
    for (j, aux) in out.categories.iter().enumerate() {
        let present = !batch.missing.contains(&j);
        if present {
            let grad = aux
                .grad
                .ok_or_else(|| Error::Invalid("sdf loss needs spatial gradients".into()))?;
            acc[0].push(per_object_sdf_loss(tape, aux.s_prime, grad, batch, j, weights.rho_delta)?.total);
        }
        acc[1].push(code_regularizer(tape, codes[j]));
        acc[2].push(correction_regularizer(tape, aux.delta_s));
        if let (Some(gt), Some(jac)) = (aux.grad_template, aux.disp_jacobian) {
            let (normal, smooth) = deformation_priors(tape, gt, jac, batch, j)?;
            acc[3].push(normal);
            acc[4].push(smooth);
        }
        if present {
            if let Some(c) = centroid_loss(tape, aux.r, aux.t, aux.delta_p, batch, j, prior.centroids[j]) {
                acc[5].push(c);
            }
        }
    }
    let per_cat = |terms: &[Var]| {
        let s = terms.iter().copied().reduce(|a, b| tape.add(a, b)).unwrap_or_else(zero);
        tape.scale(s, 1.0 / m as f64)
    };
    let fsdf = curriculum_sdf_loss(tape, out.s, &batch.gt, weights.curriculum_eps, weights.curriculum_lambda);
    let refreg = out.delta_so.map_or_else(zero, |d| refinement_regularizer(tape, d));
    let contact = contact_loss(tape, out.s_prime, &batch.contacts, weights.sigma_sharpness);
    let terms = vec![
        ("sdf", per_cat(&acc[0])),
        ("reg", per_cat(&acc[1])),
        ("correg", per_cat(&acc[2])),
        ("normal", per_cat(&acc[3])),
        ("smooth", per_cat(&acc[4])),
        ("centroid", per_cat(&acc[5])),
        ("fsdf", fsdf),
        ("refreg", refreg),
        ("contact", contact),
    ];
    let mut total = zero();
    for ((name, v), (wname, w)) in terms.iter().zip(weights.weights()) {
        debug_assert_eq!(*name, wname);
        if w != 0.0 {
            total = tape.add(total, tape.scale(*v, w));
        }
    }
    Ok(Objective { total, terms })
}

/// One JSON-lines monitoring record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(flatten)]
    pub terms: BTreeMap<String, f64>,
}

impl LossRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("finite records serialize")
    }
}
