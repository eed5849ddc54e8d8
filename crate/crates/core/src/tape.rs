//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every tensor is a 2-D array; rows are points and columns are features.
//! Forward-mode tangents (spatial Jacobians) are expressed as ordinary tape
//! operations, so reverse mode over a graph that already contains tangents
//! yields the mixed second-order terms needed by gradient-based losses.

use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, Axis, Zip};

use crate::screw_series::{self, SeriesKind};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise scalar functions with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sin,
    Cos,
    Exp,
    Abs,
    Tanh,
    /// `sqrt` with a zero subgradient at the origin.
    Sqrt,
    Relu,
    Square,
    Recip,
    /// `j`-th derivative of one of the screw coefficient series in `x = |r|^2`.
    Series(SeriesKind, u8),
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Abs => x.abs(),
            Unary::Tanh => x.tanh(),
            Unary::Sqrt => x.max(0.0).sqrt(),
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
            Unary::Series(kind, order) => screw_series::eval(kind, order, x),
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => x.exp(),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Unary::Sqrt => {
                if x > 0.0 {
                    0.5 / x.sqrt()
                } else {
                    0.0
                }
            }
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Recip => -1.0 / (x * x),
            Unary::Series(kind, order) => screw_series::eval(kind, order + 1, x),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Unary(Var, Unary),
    Cols(Var, usize, usize),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Rows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    MeanRows(Var),
    BroadcastRows(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradient of a scalar output with respect to every node that needs one.
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// An append-only computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// A trainable input.
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) + &*self.value(b);
        self.push(value, Op::Add(a, b), self.grad_of(&[a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) - &*self.value(b);
        self.push(value, Op::Sub(a, b), self.grad_of(&[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = &*self.value(a) * &*self.value(b);
        self.push(value, Op::Mul(a, b), self.grad_of(&[a, b]))
    }

    /// `a (n×m) + row (1×m)` broadcast over rows.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = {
            let av = self.value(a);
            let rv = self.value(row);
            assert_eq!(rv.nrows(), 1, "add_row expects a single row");
            &*av + &rv.row(0)
        };
        self.push(value, Op::AddRow(a, row), self.grad_of(&[a, row]))
    }

    /// `a (n×m) * col (n×1)` broadcast over columns.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        let value = {
            let av = self.value(a);
            let cv = self.value(col);
            assert_eq!(cv.ncols(), 1, "mul_col expects a single column");
            &*av * &*cv
        };
        self.push(value, Op::MulCol(a, col), self.grad_of(&[a, col]))
    }

    /// `a * s` where `s` is a 1×1 node.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Var {
        let value = {
            let sv = self.value(s);
            assert_eq!(sv.dim(), (1, 1));
            &*self.value(a) * sv[[0, 0]]
        };
        self.push(value, Op::MulScalar(a, s), self.grad_of(&[a, s]))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = &*self.value(a) * c;
        self.push(value, Op::Scale(a, c), self.grad_of(&[a]))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&self, a: Var, c: f64) -> Var {
        let value = &*self.value(a) + c;
        self.push(value, Op::Offset(a), self.grad_of(&[a]))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&*self.value(b));
        self.push(value, Op::MatMul(a, b), self.grad_of(&[a, b]))
    }

    pub fn unary(&self, a: Var, f: Unary) -> Var {
        let value = self.value(a).mapv(|x| f.apply(x));
        self.push(value, Op::Unary(a, f), self.grad_of(&[a]))
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn recip(&self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// Columns `[start, start + len)`.
    pub fn cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::Cols(a, start, len), self.grad_of(&[a]))
    }

    pub fn col(&self, a: Var, idx: usize) -> Var {
        self.cols(a, idx, 1)
    }

    pub fn hcat(&self, parts: &[Var]) -> Var {
        let value = {
            let views: Vec<Ref<'_, Array2<f64>>> = parts.iter().map(|&p| self.value(p)).collect();
            let v: Vec<_> = views.iter().map(|r| r.view()).collect();
            ndarray::concatenate(Axis(1), &v).expect("hcat: row counts differ")
        };
        self.push(value, Op::HCat(parts.to_vec()), self.grad_of(parts))
    }

    pub fn vcat(&self, parts: &[Var]) -> Var {
        let value = {
            let views: Vec<Ref<'_, Array2<f64>>> = parts.iter().map(|&p| self.value(p)).collect();
            let v: Vec<_> = views.iter().map(|r| r.view()).collect();
            ndarray::concatenate(Axis(0), &v).expect("vcat: column counts differ")
        };
        self.push(value, Op::VCat(parts.to_vec()), self.grad_of(parts))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        self.push(value, Op::Rows(a, idx.to_vec()), self.grad_of(&[a]))
    }

    /// Row-major reshape.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let value = {
            let av = self.value(a);
            let flat: Vec<f64> = av.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("reshape: element count differs")
        };
        self.push(value, Op::Reshape(a), self.grad_of(&[a]))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a), self.grad_of(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = {
            let v = self.value(a);
            v.len().max(1)
        };
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sum, `n×m -> n×1`.
    pub fn row_sum(&self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSum(a), self.grad_of(&[a]))
    }

    /// Column means, `n×m -> 1×m`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows on empty tensor")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanRows(a), self.grad_of(&[a]))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&self, a: Var, n: usize) -> Var {
        let value = {
            let av = self.value(a);
            assert_eq!(av.nrows(), 1);
            av.broadcast((n, av.ncols())).unwrap().to_owned()
        };
        self.push(value, Op::BroadcastRows(a), self.grad_of(&[a]))
    }

    /// Gradients of the 1×1 node `out` with respect to every upstream node.
    pub fn backward(&self, out: Var) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[out.0].value.dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..=out.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let wants = |v: &Var| nodes[v.0].needs_grad;
            let val = |v: &Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], -g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g * val(b));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], &g * val(a));
                    }
                }
                Op::AddRow(a, row) => {
                    if wants(row) {
                        accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::MulCol(a, col) => {
                    if wants(col) {
                        let gc = (&g * val(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads[col.0], gc);
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g * val(col));
                    }
                }
                Op::MulScalar(a, sc) => {
                    let sv = val(sc)[[0, 0]];
                    if wants(sc) {
                        let gs = Zip::from(&g).and(val(a)).fold(0.0, |acc, &x, &y| acc + x * y);
                        accumulate(&mut grads[sc.0], Array2::from_elem((1, 1), gs));
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], g * sv);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
                Op::Offset(a) => accumulate(&mut grads[a.0], g),
                Op::MatMul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.dot(&val(b).t()));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], val(a).t().dot(&g));
                    }
                }
                Op::Unary(a, f) => {
                    let mut d = val(a).mapv(|x| f.deriv(x));
                    d *= &g;
                    accumulate(&mut grads[a.0], d);
                }
                Op::Cols(a, start, len) => {
                    let (r, c) = val(a).dim();
                    let slot = &mut grads[a.0];
                    if slot.is_none() {
                        *slot = Some(Array2::zeros((r, c)));
                    }
                    let mut target = slot.as_mut().unwrap().slice_mut(s![.., *start..*start + *len]);
                    target += &g;
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = val(p).ncols();
                        if wants(p) {
                            accumulate(&mut grads[p.0], g.slice(s![.., offset..offset + w]).to_owned());
                        }
                        offset += w;
                    }
                }
                Op::VCat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = val(p).nrows();
                        if wants(p) {
                            accumulate(&mut grads[p.0], g.slice(s![offset..offset + h, ..]).to_owned());
                        }
                        offset += h;
                    }
                }
                Op::Rows(a, idx) => {
                    let (r, c) = val(a).dim();
                    let slot = &mut grads[a.0];
                    if slot.is_none() {
                        *slot = Some(Array2::zeros((r, c)));
                    }
                    let target = slot.as_mut().unwrap();
                    for (row, &src) in idx.iter().enumerate() {
                        let mut t = target.row_mut(src);
                        t += &g.row(row);
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = val(a).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    accumulate(&mut grads[a.0], Array2::from_shape_vec((r, c), flat).unwrap());
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).dim();
                    accumulate(&mut grads[a.0], Array2::from_elem((r, c), g[[0, 0]]));
                }
                Op::RowSum(a) => {
                    let (r, c) = val(a).dim();
                    accumulate(&mut grads[a.0], g.broadcast((r, c)).unwrap().to_owned());
                }
                Op::MeanRows(a) => {
                    let (r, c) = val(a).dim();
                    let scaled = g / r as f64;
                    accumulate(&mut grads[a.0], scaled.broadcast((r, c)).unwrap().to_owned());
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads[a.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
        }
        Grads { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&Tape, Var) -> Var, x0: Array2<f64>) {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let out = build(&tape, x);
        let grads = tape.backward(out);
        let g = grads.get(x).cloned().unwrap_or_else(|| Array2::zeros(x0.dim()));
        let h = 1e-6;
        for idx in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
                xp[[r, c]] += delta;
                let t = Tape::new();
                let xv = t.leaf(xp);
                let o = build(&t, xv);
                t.scalar_value(o)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.iter().nth(idx).copied().unwrap();
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "idx {idx}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let x0 = array![[0.3, -0.2, 0.5], [0.1, 0.7, -0.4]];
        fd_check(
            |t, x| {
                let w = t.constant(array![[0.5, -1.0], [0.2, 0.3], [-0.7, 0.9]]);
                let b = t.constant(array![[0.1, -0.2]]);
                let z = t.add_row(t.matmul(x, w), b);
                let h = t.sin(t.scale(z, 3.0));
                let q = t.mul(h, t.cos(z));
                let e = t.exp(t.neg(t.abs(q)));
                let r = t.recip(t.offset(t.square(z), 0.5));
                t.sum(t.tanh(t.add(t.add(e, t.square(z)), r)))
            },
            x0,
        );
    }

    #[test]
    fn structural_op_gradients() {
        let x0 = array![[0.3, -0.2, 0.5, 1.0], [0.1, 0.7, -0.4, 0.2], [0.9, 0.8, 0.6, -0.3]];
        fd_check(
            |t, x| {
                let a = t.cols(x, 1, 2);
                let b = t.col(x, 0);
                let c = t.mul_col(a, b);
                let d = t.hcat(&[c, b, x]);
                let e = t.rows(d, &[2, 0, 0, 1]);
                let f = t.reshape(t.cols(e, 0, 2), 2, 4);
                let g = t.vcat(&[f, t.cols(t.mean_rows(e), 0, 4)]);
                let rs = t.row_sum(g);
                let m = t.mean_rows(x);
                let bc = t.broadcast_rows(t.cols(m, 0, 1), 3);
                let s = t.sum(t.sqrt(t.offset(t.square(bc), 1.0)));
                let k = t.mul_scalar(rs, s);
                t.sum(t.mul(k, k))
            },
            x0,
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]);
        let x = t.leaf(array![[3.0, 4.0]]);
        let out = t.sum(t.mul(c, x));
        let g = t.backward(out);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn safe_sqrt_has_zero_gradient_at_origin() {
        let t = Tape::new();
        let x = t.leaf(array![[0.0]]);
        let out = t.sum(t.sqrt(x));
        let g = t.backward(out);
        assert_eq!(g.get(x).unwrap()[[0, 0]], 0.0);
    }
}
