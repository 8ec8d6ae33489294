//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward evaluation. Values are
//! computed eagerly when a node is pushed; [`Tape::backward`] then walks the
//! record in reverse and accumulates adjoints. Nodes created with
//! [`Tape::param`] carry a caller-chosen slot index, and their adjoints are
//! returned keyed by that slot. Everything else (constants, inputs, noise) is
//! a leaf whose adjoint is dropped.

use super::matrix::{affine, Matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Recip(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumAll(Var),
    SegmentSum { a: Var, ids: Vec<usize> },
    GatherRows { a: Var, idx: Vec<usize> },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::Recip(_) => "recip",
            Op::Clamp { .. } => "clamp",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::SumAll(_) => "sum",
            Op::SegmentSum { .. } => "segment_sum",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Parameter adjoints keyed by slot. Slots never touched by the loss are `None`.
#[derive(Debug, Clone, Default)]
pub struct SlotGrads {
    grads: Vec<Option<Matrix>>,
}

impl SlotGrads {
    pub fn get(&self, slot: usize) -> Option<&Matrix> {
        self.grads.get(slot).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, slot: usize) -> Option<Matrix> {
        self.grads.get_mut(slot).and_then(|g| g.take())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, slot: usize, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(slot))
    }

    /// `x · wᵀ + b`; `w` is `out×in`, `b` is `1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (_, xin) = self.shape(x);
        let (wout, win) = self.shape(w);
        if xin != win || self.nodes[b.0].value.len() != wout {
            return Err(Error::shape(format!(
                "linear: input width {xin}, weight {wout}x{win}, bias {}",
                self.nodes[b.0].value.len()
            )));
        }
        let y = affine(self.value(x), self.value(w), self.value(b));
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let y = self.value(a).map(f);
        self.push(y, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, |v| 1.0 / v, Op::Recip(a))
    }

    /// Elementwise clamp; the adjoint is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |v| v.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |v| v * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |v| v + k, Op::AddScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a))
    }

    /// Sums rows sharing a segment id: output row `s` is the sum of input
    /// rows `r` with `ids[r] == s`. Output has `max(ids) + 1` rows.
    pub fn segment_sum(&mut self, a: Var, ids: Vec<usize>) -> Result<Var> {
        let nseg = ids.iter().max().map_or(0, |m| m + 1);
        self.segment_sum_into(a, ids, nseg)
    }

    /// [`Tape::segment_sum`] with an explicit segment count; empty segments
    /// give zero rows.
    pub fn segment_sum_into(&mut self, a: Var, ids: Vec<usize>, nseg: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if ids.len() != rows {
            return Err(Error::shape(format!("segment_sum: {} ids for {rows} rows", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= nseg) {
            return Err(Error::shape(format!("segment id {bad} out of {nseg}")));
        }
        let src = self.value(a);
        let mut y = Matrix::zeros(nseg, cols);
        for (r, &s) in ids.iter().enumerate() {
            for (o, &v) in y.row_mut(s).iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        Ok(self.push(y, Op::SegmentSum { a, ids }))
    }

    /// Sum over rows, giving one row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let rows = self.shape(a).0;
        if rows == 0 {
            return Err(Error::shape("sum_rows of an empty matrix"));
        }
        self.segment_sum(a, vec![0; rows])
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("gather_rows: index {bad} out of {rows} rows")));
        }
        let src = self.value(a);
        let mut y = Matrix::zeros(idx.len(), cols);
        for (r, &i) in idx.iter().enumerate() {
            y.row_mut(r).copy_from_slice(src.row(i));
        }
        Ok(self.push(y, Op::GatherRows { a, idx }))
    }

    /// Repeats a single-row node `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.gather_rows(a, vec![0; n])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::shape(format!("concat_cols: {ra} rows vs {rb} rows")));
        }
        let mut y = Matrix::zeros(ra, ca + cb);
        for r in 0..ra {
            let row = y.row_mut(r);
            row[..ca].copy_from_slice(self.nodes[a.0].value.row(r));
            row[ca..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        Ok(self.push(y, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.shape(p).1,
            None => return Err(Error::shape("concat_rows of nothing")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(format!("concat_rows: width {} vs {cols}", v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let y = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(y, Op::ConcatRows(parts)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start > end || end > cols {
            return Err(Error::shape(format!("slice_cols {start}..{end} of width {cols}")));
        }
        let src = self.value(a);
        let mut y = Matrix::zeros(rows, end - start);
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        Ok(self.push(y, Op::SliceCols { a, start }))
    }

    fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(i, n)| (i, n.op.name()))
    }

    /// Reverse sweep from a 1x1 `loss` node.
    pub fn backward(&self, loss: Var) -> Result<SlotGrads> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        if !self.scalar(loss).is_finite() {
            let location = match self.first_non_finite() {
                Some((i, name)) => format!("node {i} ({name})"),
                None => format!("node {} (loss)", loss.0),
            };
            return Err(Error::Numeric { location });
        }

        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = SlotGrads::default();

        fn acc(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    if out.grads.len() <= *slot {
                        out.grads.resize(*slot + 1, None);
                    }
                    match &mut out.grads[*slot] {
                        Some(e) => e.add_assign(&g),
                        s @ None => *s = Some(g),
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = val(*x);
                    let wv = val(*w);
                    let (n, inp) = xv.shape();
                    let outd = wv.rows();
                    let mut dx = Matrix::zeros(n, inp);
                    let mut dw = Matrix::zeros(outd, inp);
                    let mut db = Matrix::zeros(1, outd);
                    for r in 0..n {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let dxr = dx.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            db.as_mut_slice()[o] += go;
                            let wr = wv.row(o);
                            for (d, &wi) in dxr.iter_mut().zip(wr) {
                                *d += go * wi;
                            }
                            let dwr = dw.row_mut(o);
                            for (d, &xi) in dwr.iter_mut().zip(xr) {
                                *d += go * xi;
                            }
                        }
                    }
                    acc(&mut adj, *x, dx);
                    acc(&mut adj, *w, dw);
                    acc(&mut adj, *b, db);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut adj, *a, d);
                }
                Op::Softplus(a) => {
                    let d = g.zip_map(val(*a), |g, x| g * sigmoid(x));
                    acc(&mut adj, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * y);
                    acc(&mut adj, *a, d);
                }
                Op::Ln(a) => {
                    let d = g.zip_map(val(*a), |g, x| g / x);
                    acc(&mut adj, *a, d);
                }
                Op::Sqrt(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * 0.5 / y);
                    acc(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip_map(val(*a), |g, x| 2.0 * g * x);
                    acc(&mut adj, *a, d);
                }
                Op::Recip(a) => {
                    let d = g.zip_map(&node.value, |g, y| -g * y * y);
                    acc(&mut adj, *a, d);
                }
                Op::Clamp { a, lo, hi } => {
                    let d = g.zip_map(val(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g });
                    acc(&mut adj, *a, d);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(val(*b), |g, y| g * y);
                    let db = g.zip_map(val(*a), |g, x| g * x);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut adj, *a, g.map(|v| v * k));
                }
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::SumAll(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut adj, *a, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::SegmentSum { a, ids } => {
                    let cols = g.cols();
                    let mut d = Matrix::zeros(ids.len(), cols);
                    for (r, &s) in ids.iter().enumerate() {
                        d.row_mut(r).copy_from_slice(g.row(s));
                    }
                    acc(&mut adj, *a, d);
                }
                Op::GatherRows { a, idx } => {
                    let (r, c) = val(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for (o, &src) in idx.iter().enumerate() {
                        for (dv, &gv) in d.row_mut(src).iter_mut().zip(g.row(o)) {
                            *dv += gv;
                        }
                    }
                    acc(&mut adj, *a, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    let rows = g.rows();
                    let cb = g.cols() - ca;
                    let mut da = Matrix::zeros(rows, ca);
                    let mut db = Matrix::zeros(rows, cb);
                    for r in 0..rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        acc(&mut adj, p, Matrix::from_vec(rows, cols, slice)?);
                    }
                }
                Op::SliceCols { a, start } => {
                    let (r, c) = val(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    let w = g.cols();
                    for row in 0..r {
                        d.row_mut(row)[*start..*start + w].copy_from_slice(g.row(row));
                    }
                    acc(&mut adj, *a, d);
                }
            }
        }
        Ok(out)
    }
}
