use ndarray::{s, Array2};
use rayon::prelude::*;

use super::dual::{self, Dual};
use super::model::{LayerIdx, ModelState, DEFORM_OUT};
use super::screw::screw_apply_dual;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::tape::{Tape, Var};

/// Model parameters placed on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    fn layer(&self, idx: LayerIdx) -> (Var, Var) {
        (self.vars[idx.w], self.vars[idx.b])
    }
}

impl ModelState {
    /// Trainable parameters become leaves, frozen ones constants.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { vars }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Track derivatives with respect to the query points.
    pub spatial_grad: bool,
    /// Replace every deformation output by zero.
    pub zero_deformation: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            spatial_grad: true,
            zero_deformation: false,
        }
    }
}

/// Per-category records of one forward pass; `n` rows each.
#[derive(Clone, Debug)]
pub struct CategoryAux {
    /// `n×1`.
    pub s_prime: Var,
    /// `∇_p s'`, `n×3`.
    pub grad: Option<Var>,
    /// `∇T` at the deformed point, `n×3`.
    pub grad_template: Option<Var>,
    /// Entry `k` is `∂(p_def - p)/∂p_k`, `n×3`.
    pub disp_jacobian: Option<[Var; 3]>,
    pub p_def: Var,
    pub r: Var,
    pub t: Var,
    pub delta_p: Var,
    /// `n×1`.
    pub delta_s: Var,
    /// Post-activation penultimate deformation layer, `n×l`.
    pub gamma: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOut {
    /// Final prediction, `n×m`.
    pub s: Var,
    pub s_prime: Var,
    /// Residual of the refinement network; absent when it is disabled.
    pub delta_so: Option<Var>,
    pub categories: Vec<CategoryAux>,
}

/// Flat deformation parameters generated for one code.
#[derive(Clone, Debug, PartialEq)]
pub struct SubfunctionWeights {
    pub theta: Vec<f64>,
}

fn check_code(state: &ModelState, tape: &Tape, code: Var) -> Result<()> {
    let shape = tape.shape(code);
    if shape != (1, state.config.code_dim) {
        return Err(Error::Config(format!(
            "code has shape {shape:?}, expected (1, {})",
            state.config.code_dim
        )));
    }
    Ok(())
}

/// Deformation-network layers `(W, b)` generated from `code` (`1×code_dim`).
pub fn generate_deform(tape: &Tape, state: &ModelState, bound: &Bound, j: usize, code: Var) -> Result<Vec<(Var, Var)>> {
    check_code(state, tape, code)?;
    let dims = state.config.deform_dims();
    let out = state.layout.hyper[j]
        .iter()
        .zip(dims.windows(2))
        .map(|(layers, d)| {
            let mut h = code;
            for (i, &idx) in layers.iter().enumerate() {
                let (w, b) = bound.layer(idx);
                h = tape.add_row(tape.matmul(h, w), b);
                if i + 1 < layers.len() {
                    h = tape.relu(h);
                }
            }
            let n_w = d[0] * d[1];
            let w = tape.reshape(tape.cols(h, 0, n_w), d[0], d[1]);
            let b = tape.cols(h, n_w, d[1]);
            (w, b)
        })
        .collect();
    Ok(out)
}

pub fn hypernet_weights(state: &ModelState, j: usize, code: &[f64]) -> Result<SubfunctionWeights> {
    if j >= state.config.m {
        return Err(Error::Config(format!("category {j} out of range")));
    }
    let tape = Tape::new();
    let bound = state.bind(&tape, false);
    let c = tape.constant(Array2::from_shape_vec((1, code.len()), code.to_vec()).expect("row vector"));
    let layers = generate_deform(&tape, state, &bound, j, c)?;
    let mut theta = Vec::with_capacity(state.config.deform_param_count());
    for (w, b) in layers {
        theta.extend(tape.value(w).iter());
        theta.extend(tape.value(b).iter());
    }
    Ok(SubfunctionWeights { theta })
}

/// Sine layers followed by a linear output; returns (penultimate, output).
fn sine_mlp(tape: &Tape, layers: &[(Var, Var)], x: &Dual, omega0: f64) -> (Dual, Dual) {
    let mut h = *x;
    let last = layers.len() - 1;
    for &(w, b) in &layers[..last] {
        h = dual::sine(tape, &dual::linear(tape, &h, w, b), omega0);
    }
    let (w, b) = layers[last];
    (h, dual::linear(tape, &h, w, b))
}

pub fn template_forward(tape: &Tape, state: &ModelState, bound: &Bound, j: usize, x: &Dual) -> Dual {
    let layers: Vec<(Var, Var)> = state.layout.template[j].iter().map(|&i| bound.layer(i)).collect();
    sine_mlp(tape, &layers, x, state.config.omega0).1
}

/// Residual sdf vector from the concatenated features (`n×(l·m)`).
pub fn refine_forward(tape: &Tape, state: &ModelState, bound: &Bound, gammas: Var) -> Result<Var> {
    let want = state.config.feature_dim * state.config.m;
    let got = tape.shape(gammas).1;
    if got != want {
        return Err(Error::Config(format!("refinement input has {got} columns, expected {want}")));
    }
    let layers: Vec<(Var, Var)> = state.layout.refine.iter().map(|&i| bound.layer(i)).collect();
    Ok(sine_mlp(tape, &layers, &Dual::plain(gammas), state.config.omega0).1.v)
}

/// One sub-function on `points` given generated deformation layers.
pub fn subfunction_forward(
    tape: &Tape,
    state: &ModelState,
    bound: &Bound,
    j: usize,
    deform: &[(Var, Var)],
    points: Var,
    opts: ForwardOptions,
) -> CategoryAux {
    let n = tape.shape(points).0;
    let p = if opts.spatial_grad {
        Dual::seed_points(tape, points)
    } else {
        Dual::plain(points)
    };
    let (gamma, out) = sine_mlp(tape, deform, &p, state.config.omega0);
    debug_assert_eq!(tape.shape(out.v).1, DEFORM_OUT);
    let (r, t, dp, ds, p_def) = if opts.zero_deformation {
        let z3 = Dual::plain(tape.constant(Array2::zeros((n, 3))));
        let z1 = Dual::plain(tape.constant(Array2::zeros((n, 1))));
        (z3, z3, z3, z1, p)
    } else {
        let r = dual::cols(tape, &out, 0, 3);
        let t = dual::cols(tape, &out, 3, 3);
        let dp = dual::cols(tape, &out, 6, 3);
        let ds = dual::col(tape, &out, 9);
        let moved = screw_apply_dual(tape, &r, &t, &p);
        (r, t, dp, ds, dual::add(tape, &moved, &dp))
    };
    let q = if opts.spatial_grad {
        Dual::seed_points(tape, p_def.v)
    } else {
        Dual::plain(p_def.v)
    };
    let tv = template_forward(tape, state, bound, j, &q);
    let s_prime = tape.add(tv.v, ds.v);
    let (grad, grad_template, disp_jacobian) = match (tv.d, p_def.d) {
        (Some(gt), Some(jd)) => {
            let grad_t = tape.hcat(&gt);
            let cols: Vec<Var> = (0..3)
                .map(|k| {
                    let chain = tape.row_sum(tape.mul(jd[k], grad_t));
                    match ds.tangent(k) {
                        Some(d) => tape.add(chain, d),
                        None => chain,
                    }
                })
                .collect();
            let seeds = p.d.expect("seeded");
            let disp = [0, 1, 2].map(|k| tape.sub(jd[k], seeds[k]));
            (Some(tape.hcat(&cols)), Some(grad_t), Some(disp))
        }
        _ => (None, None, None),
    };
    CategoryAux {
        s_prime,
        grad,
        grad_template,
        disp_jacobian,
        p_def: p_def.v,
        r: r.v,
        t: t.v,
        delta_p: dp.v,
        delta_s: ds.v,
        gamma: gamma.v,
    }
}

/// Full model on one instance: `codes[j]` is `1×code_dim`, `points` is `n×3`.
pub fn model_forward(
    tape: &Tape,
    state: &ModelState,
    bound: &Bound,
    codes: &[Var],
    points: Var,
    opts: ForwardOptions,
) -> Result<ForwardOut> {
    let m = state.config.m;
    if codes.len() != m {
        return Err(Error::Config(format!("{} codes given for {m} categories", codes.len())));
    }
    let categories = (0..m)
        .map(|j| {
            let deform = generate_deform(tape, state, bound, j, codes[j])?;
            Ok(subfunction_forward(tape, state, bound, j, &deform, points, opts))
        })
        .collect::<Result<Vec<_>>>()?;
    let s_prime = tape.hcat(&categories.iter().map(|c| c.s_prime).collect::<Vec<_>>());
    let (s, delta_so) = if state.config.refinement {
        let gammas = tape.hcat(&categories.iter().map(|c| c.gamma).collect::<Vec<_>>());
        let d = refine_forward(tape, state, bound, gammas)?;
        (tape.add(s_prime, d), Some(d))
    } else {
        (s_prime, None)
    };
    Ok(ForwardOut {
        s,
        s_prime,
        delta_so,
        categories,
    })
}

pub const EVAL_CHUNK: usize = 4096;

fn points_array(points: &[Vec3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, k)| points[i][k])
}

fn code_vars(tape: &Tape, codes: &Array2<f64>) -> Vec<Var> {
    codes.rows().into_iter().map(|r| tape.constant(r.to_owned().insert_axis(ndarray::Axis(0)))).collect()
}

/// Final and pre-refinement predictions (`n×m` each) without derivatives.
pub fn evaluate(state: &ModelState, codes: &Array2<f64>, points: &[Vec3], chunk: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let m = state.config.m;
    let chunk = chunk.max(1);
    let parts = points
        .par_chunks(chunk)
        .map(|pts| {
            let tape = Tape::new();
            let bound = state.bind(&tape, false);
            let cv = code_vars(&tape, codes);
            let p = tape.constant(points_array(pts));
            let opts = ForwardOptions {
                spatial_grad: false,
                zero_deformation: false,
            };
            let out = model_forward(&tape, state, &bound, &cv, p, opts)?;
            let s = tape.value(out.s).clone();
            let sp = tape.value(out.s_prime).clone();
            Ok((s, sp))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = Array2::zeros((points.len(), m));
    let mut sp = Array2::zeros((points.len(), m));
    let mut row = 0;
    for (a, b) in parts {
        let n = a.nrows();
        s.slice_mut(s![row..row + n, ..]).assign(&a);
        sp.slice_mut(s![row..row + n, ..]).assign(&b);
        row += n;
    }
    Ok((s, sp))
}

/// Template field `T_j` at `points`.
pub fn template_values(state: &ModelState, j: usize, points: &[Vec3]) -> Vec<f64> {
    points
        .par_chunks(EVAL_CHUNK)
        .flat_map_iter(|pts| {
            let tape = Tape::new();
            let bound = state.bind(&tape, false);
            let p = Dual::plain(tape.constant(points_array(pts)));
            let v = template_forward(&tape, state, &bound, j, &p).v;
            let out: Vec<f64> = tape.value(v).iter().copied().collect();
            out
        })
        .collect()
}

/// Deformed positions `p_def` and sdf corrections `Δs` of category `j`.
pub fn deform_points(state: &ModelState, codes: &Array2<f64>, j: usize, points: &[Vec3]) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let parts = points
        .par_chunks(EVAL_CHUNK)
        .map(|pts| {
            let tape = Tape::new();
            let bound = state.bind(&tape, false);
            let cv = code_vars(&tape, codes);
            let deform = generate_deform(&tape, state, &bound, j, cv[j])?;
            let p = tape.constant(points_array(pts));
            let opts = ForwardOptions {
                spatial_grad: false,
                zero_deformation: false,
            };
            let aux = subfunction_forward(&tape, state, &bound, j, &deform, p, opts);
            let pd = tape.value(aux.p_def);
            let ds = tape.value(aux.delta_s);
            let q: Vec<Vec3> = pd.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
            let d: Vec<f64> = ds.iter().copied().collect();
            Ok((q, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut q = Vec::with_capacity(points.len());
    let mut d = Vec::with_capacity(points.len());
    for (a, b) in parts {
        q.extend(a);
        d.extend(b);
    }
    Ok((q, d))
}
