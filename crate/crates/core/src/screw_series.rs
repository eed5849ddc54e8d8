//! Coefficient functions of the SE(3) exponential, written in `x = |r|^2`.
//!
//! With `s = sqrt(x)`:
//! `A = sin s / s`, `B = (1 - cos s) / s^2`, `C = (s - sin s) / s^3`.
//! All three are entire in `x`; a power series is used near the origin and
//! the closed form elsewhere. Derivatives up to second order are available so
//! the autodiff tape can differentiate through spatial Jacobians.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    A,
    B,
    C,
}

impl SeriesKind {
    fn factorial_offset(self) -> u32 {
        match self {
            SeriesKind::A => 1,
            SeriesKind::B => 2,
            SeriesKind::C => 3,
        }
    }
}

/// Below this `|r|^2` the power series is used.
const SERIES_LIMIT: f64 = 4.0;
const TERMS: u32 = 40;

/// `order`-th derivative with respect to `x` of the coefficient function.
pub fn eval(kind: SeriesKind, order: u8, x: f64) -> f64 {
    if x < SERIES_LIMIT || order > 2 {
        series(kind, order, x)
    } else {
        closed(kind, order, x)
    }
}

fn series(kind: SeriesKind, order: u8, x: f64) -> f64 {
    let k = kind.factorial_offset();
    let order = order as u32;
    let mut sum = 0.0;
    for n in order..TERMS {
        // (-1)^n / (2n + k)!
        let mut fact = 1.0f64;
        for f in 2..=(2 * n + k) {
            fact *= f as f64;
        }
        let mut falling = 1.0;
        for i in 0..order {
            falling *= (n - i) as f64;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * falling * x.powi((n - order) as i32) / fact;
    }
    sum
}

fn closed(kind: SeriesKind, order: u8, x: f64) -> f64 {
    let s = x.sqrt();
    let (sn, cs) = s.sin_cos();
    match (kind, order) {
        (SeriesKind::A, 0) => sn / s,
        (SeriesKind::A, 1) => (s * cs - sn) / (2.0 * s.powi(3)),
        (SeriesKind::A, 2) => -sn / (4.0 * s.powi(3)) - 3.0 * (s * cs - sn) / (4.0 * s.powi(5)),
        (SeriesKind::B, 0) => (1.0 - cs) / x,
        (SeriesKind::B, 1) => (s * sn - 2.0 + 2.0 * cs) / (2.0 * s.powi(4)),
        (SeriesKind::B, 2) => {
            let n = s * sn - 2.0 + 2.0 * cs;
            ((s * cs - sn) / (2.0 * s.powi(4)) - 2.0 * n / s.powi(5)) / (2.0 * s)
        }
        (SeriesKind::C, 0) => (s - sn) / s.powi(3),
        (SeriesKind::C, 1) => ((1.0 - cs) / s.powi(3) - 3.0 * (s - sn) / s.powi(4)) / (2.0 * s),
        (SeriesKind::C, 2) => {
            (sn / (2.0 * s.powi(4)) - 7.0 * (1.0 - cs) / (2.0 * s.powi(5))
                + 15.0 * (s - sn) / (2.0 * s.powi(6)))
                / (2.0 * s)
        }
        _ => unreachable!("closed form only up to second order"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [SeriesKind; 3] = [SeriesKind::A, SeriesKind::B, SeriesKind::C];

    #[test]
    fn values_at_origin() {
        assert_eq!(eval(SeriesKind::A, 0, 0.0), 1.0);
        assert_eq!(eval(SeriesKind::B, 0, 0.0), 0.5);
        assert!((eval(SeriesKind::C, 0, 0.0) - 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        for kind in KINDS {
            for order in 0..=2u8 {
                for x in [3.0, 4.0, 6.0, 9.0] {
                    let a = series(kind, order, x);
                    let b = closed(kind, order, x);
                    assert!((a - b).abs() < 1e-12, "{kind:?} order {order} x {x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in KINDS {
            for order in 0..=1u8 {
                for x in [0.0, 0.3, 2.5, 5.0, 12.0] {
                    let fd = (eval(kind, order, x + h) - eval(kind, order, (x - h).max(0.0)))
                        / (x + h - (x - h).max(0.0));
                    let an = eval(kind, order + 1, x);
                    assert!((fd - an).abs() < 1e-6, "{kind:?} order {order} x {x}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn closed_forms_match_definitions() {
        for x in [0.01f64, 1.0, 7.0, 30.0] {
            let s = x.sqrt();
            assert!((eval(SeriesKind::A, 0, x) - s.sin() / s).abs() < 1e-12);
            assert!((eval(SeriesKind::B, 0, x) - (1.0 - s.cos()) / x).abs() < 1e-12);
            assert!((eval(SeriesKind::C, 0, x) - (s - s.sin()) / (x * s)).abs() < 1e-9);
        }
    }
}
