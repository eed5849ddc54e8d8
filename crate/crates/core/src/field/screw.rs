//! Rigid motions from screw coordinates `(r; t)`.
//!
//! `exp([r; t]) p = R p + V t` with
//! `R = I + A [r]x + B [r]x^2` and `V = I + B [r]x + C [r]x^2`,
//! where `A, B, C` are the coefficient series of `|r|^2`.

use crate::field::dual::{self, Dual};
use crate::screw_series::{eval, SeriesKind};
use crate::tape::{Tape, Unary};

pub type Vec3 = [f64; 3];

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn coefficients(r: Vec3) -> (f64, f64, f64) {
    let x = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    (
        eval(SeriesKind::A, 0, x),
        eval(SeriesKind::B, 0, x),
        eval(SeriesKind::C, 0, x),
    )
}

/// Applies the SE(3) exponential of `(r; t)` to `p`.
pub fn screw_apply(r: Vec3, t: Vec3, p: Vec3) -> Vec3 {
    let (a, b, c) = coefficients(r);
    let rp = cross(r, p);
    let rrp = cross(r, rp);
    let rt = cross(r, t);
    let rrt = cross(r, rt);
    std::array::from_fn(|i| p[i] + a * rp[i] + b * rrp[i] + t[i] + b * rt[i] + c * rrt[i])
}

/// Rotation part of the exponential as a row-major 3×3 matrix.
pub fn rotation_matrix(r: Vec3) -> [[f64; 3]; 3] {
    let (a, b, _) = coefficients(r);
    let k = [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let k2: f64 = (0..3).map(|l| k[i][l] * k[l][j]).sum();
            out[i][j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2;
        }
    }
    out
}

fn dual_cross(t: &Tape, a: &[Dual; 3], b: &[Dual; 3]) -> [Dual; 3] {
    let term = |j: usize, k: usize| dual::sub(t, &dual::mul(t, &a[j], &b[k]), &dual::mul(t, &a[k], &b[j]));
    [term(1, 2), term(2, 0), term(0, 1)]
}

fn split(t: &Tape, x: &Dual) -> [Dual; 3] {
    [dual::col(t, x, 0), dual::col(t, x, 1), dual::col(t, x, 2)]
}

/// Batched screw application on `n×3` tensors carrying spatial tangents.
pub fn screw_apply_dual(t: &Tape, r: &Dual, trans: &Dual, p: &Dual) -> Dual {
    let r = split(t, r);
    let tv = split(t, trans);
    let pv = split(t, p);
    let sq = dual::add(
        t,
        &dual::add(t, &dual::mul(t, &r[0], &r[0]), &dual::mul(t, &r[1], &r[1])),
        &dual::mul(t, &r[2], &r[2]),
    );
    let a = dual::unary(t, &sq, Unary::Series(SeriesKind::A, 0));
    let b = dual::unary(t, &sq, Unary::Series(SeriesKind::B, 0));
    let c = dual::unary(t, &sq, Unary::Series(SeriesKind::C, 0));
    let rp = dual_cross(t, &r, &pv);
    let rrp = dual_cross(t, &r, &rp);
    let rt = dual_cross(t, &r, &tv);
    let rrt = dual_cross(t, &r, &rt);
    let out: Vec<Dual> = (0..3)
        .map(|i| {
            let rot = dual::add(t, &dual::mul(t, &a, &rp[i]), &dual::mul(t, &b, &rrp[i]));
            let tr = dual::add(t, &dual::mul(t, &b, &rt[i]), &dual::mul(t, &c, &rrt[i]));
            dual::add(t, &dual::add(t, &pv[i], &rot), &dual::add(t, &tv[i], &tr))
        })
        .collect();
    dual::hcat(t, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_screw_is_identity() {
        let p = [0.3, -0.2, 0.5];
        assert_eq!(screw_apply([0.0; 3], [0.0; 3], p), p);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = screw_apply([0.0, 0.0, FRAC_PI_2], [0.0; 3], [1.0, 0.0, 0.0]);
        assert!((q[0]).abs() < 1e-9 && (q[1] - 1.0).abs() < 1e-9 && q[2].abs() < 1e-9);
    }

    #[test]
    fn pure_translation() {
        let q = screw_apply([0.0; 3], [0.1, 0.2, -0.3], [1.0, 1.0, 1.0]);
        assert_eq!(q, [1.1, 1.2, 0.7]);
    }
}
