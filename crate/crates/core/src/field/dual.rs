//! Values paired with their spatial tangents `d/dp_k`, k = 0..3.
//!
//! Tangents live on the same [`Tape`] as the values, so reverse mode through
//! a [`Dual`] computation differentiates the spatial Jacobian as well.

use ndarray::Array2;

use crate::tape::{Tape, Unary, Var};

#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: Var,
    /// `None` means the tangent is identically zero.
    pub d: Option<[Var; 3]>,
}

impl Dual {
    pub fn plain(v: Var) -> Self {
        Dual { v, d: None }
    }

    /// Seeds an `n×3` coordinate tensor with unit tangents.
    pub fn seed_points(tape: &Tape, points: Var) -> Self {
        let n = tape.shape(points).0;
        let seeds = [0, 1, 2].map(|k| {
            let mut e = Array2::zeros((n, 3));
            e.column_mut(k).fill(1.0);
            tape.constant(e)
        });
        Dual {
            v: points,
            d: Some(seeds),
        }
    }

    pub fn tangent(&self, k: usize) -> Option<Var> {
        self.d.map(|d| d[k])
    }
}

fn map_tangent(a: &Dual, f: impl Fn(Var) -> Var) -> Option<[Var; 3]> {
    a.d.map(|d| [f(d[0]), f(d[1]), f(d[2])])
}

fn combine(a: Option<Var>, b: Option<Var>, both: impl Fn(Var, Var) -> Var, only_b: impl Fn(Var) -> Var) -> Option<Var> {
    match (a, b) {
        (Some(x), Some(y)) => Some(both(x, y)),
        (Some(x), None) => Some(x),
        (None, Some(y)) => Some(only_b(y)),
        (None, None) => None,
    }
}

fn zip_tangents(
    a: &Dual,
    b: &Dual,
    f: impl Fn(Option<Var>, Option<Var>) -> Option<Var>,
) -> Option<[Var; 3]> {
    if a.d.is_none() && b.d.is_none() {
        return None;
    }
    let parts: Vec<Option<Var>> = (0..3).map(|k| f(a.tangent(k), b.tangent(k))).collect();
    // at least one side has tangents, so every component resolves
    Some([parts[0].unwrap(), parts[1].unwrap(), parts[2].unwrap()])
}

pub fn add(t: &Tape, a: &Dual, b: &Dual) -> Dual {
    Dual {
        v: t.add(a.v, b.v),
        d: zip_tangents(a, b, |x, y| combine(x, y, |x, y| t.add(x, y), |y| y)),
    }
}

pub fn sub(t: &Tape, a: &Dual, b: &Dual) -> Dual {
    Dual {
        v: t.sub(a.v, b.v),
        d: zip_tangents(a, b, |x, y| combine(x, y, |x, y| t.sub(x, y), |y| t.neg(y))),
    }
}

/// Elementwise product with the product rule.
pub fn mul(t: &Tape, a: &Dual, b: &Dual) -> Dual {
    let d = zip_tangents(a, b, |da, db| {
        let left = da.map(|da| t.mul(da, b.v));
        let right = db.map(|db| t.mul(a.v, db));
        combine(left, right, |x, y| t.add(x, y), |y| y)
    });
    Dual { v: t.mul(a.v, b.v), d }
}

pub fn scale(t: &Tape, a: &Dual, c: f64) -> Dual {
    Dual {
        v: t.scale(a.v, c),
        d: map_tangent(a, |d| t.scale(d, c)),
    }
}

/// `a W + b` with `W`, `b` independent of the spatial input.
pub fn linear(t: &Tape, a: &Dual, w: Var, b: Var) -> Dual {
    Dual {
        v: t.add_row(t.matmul(a.v, w), b),
        d: map_tangent(a, |d| t.matmul(d, w)),
    }
}

/// `sin(omega * a)`.
pub fn sine(t: &Tape, a: &Dual, omega: f64) -> Dual {
    let z = t.scale(a.v, omega);
    let v = t.sin(z);
    let d = a.d.map(|d| {
        let c = t.scale(t.cos(z), omega);
        [t.mul(c, d[0]), t.mul(c, d[1]), t.mul(c, d[2])]
    });
    Dual { v, d }
}

/// Applies a smooth unary function whose derivative is itself a tape op.
pub fn unary(t: &Tape, a: &Dual, f: Unary) -> Dual {
    let v = t.unary(a.v, f);
    let d = a.d.map(|d| {
        let fp = match f {
            Unary::Sin => t.cos(a.v),
            Unary::Cos => t.neg(t.sin(a.v)),
            Unary::Exp => v,
            Unary::Square => t.scale(a.v, 2.0),
            Unary::Series(kind, order) => t.unary(a.v, Unary::Series(kind, order + 1)),
            other => panic!("no spatial tangent rule for {other:?}"),
        };
        [t.mul(fp, d[0]), t.mul(fp, d[1]), t.mul(fp, d[2])]
    });
    Dual { v, d }
}

pub fn cols(t: &Tape, a: &Dual, start: usize, len: usize) -> Dual {
    Dual {
        v: t.cols(a.v, start, len),
        d: map_tangent(a, |d| t.cols(d, start, len)),
    }
}

pub fn col(t: &Tape, a: &Dual, idx: usize) -> Dual {
    cols(t, a, idx, 1)
}

pub fn hcat(t: &Tape, parts: &[Dual]) -> Dual {
    let v = t.hcat(&parts.iter().map(|p| p.v).collect::<Vec<_>>());
    let any = parts.iter().any(|p| p.d.is_some());
    let d = any.then(|| {
        [0, 1, 2].map(|k| {
            let ds: Vec<Var> = parts
                .iter()
                .map(|p| match p.tangent(k) {
                    Some(d) => d,
                    None => {
                        let shape = t.shape(p.v);
                        t.constant(Array2::zeros(shape))
                    }
                })
                .collect();
            t.hcat(&ds)
        })
    });
    Dual { v, d }
}

/// Row sums, `n×c -> n×1`.
pub fn row_sum(t: &Tape, a: &Dual) -> Dual {
    Dual {
        v: t.row_sum(a.v),
        d: map_tangent(a, |d| t.row_sum(d)),
    }
}
