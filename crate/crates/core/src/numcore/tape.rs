//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape, so the node list is already in
//! topological order and [`Tape::backward`] is a single reverse sweep. A tape
//! is rebuilt for each forward pass and is confined to one thread.
//!
//! Gradient semantics: intermediate gradients are cleared at the start of each
//! `backward` call, while leaf gradients accumulate across calls until
//! [`Tape::zero_grad`] is invoked.
//!
//! Row-grouped ("tiled") operations follow the ensemble layout used across
//! the crate: in an `(n·K)×c` activation, row `i·K + k` belongs to member `k`.

use std::cell::RefCell;

use super::tensor::{dims_of, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddTiled(usize, usize),
    MulTiled(usize, usize),
    RepeatRows(usize, usize),
    Affine(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    MemberMean(usize, usize),
    Element(usize, usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    LogSoftmax(usize),
    Pick(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        let (rows, cols) = dims_of(&shape).unwrap_or((1, value.len()));
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        inner.grads.push(None);
        Var(id)
    }

    /// Registers a tensor as a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            if rg { Op::Leaf } else { Op::Const },
            rg,
        )
    }

    /// Differentiable leaf regardless of the tensor's own flag.
    pub fn param(&self, tensor: &Tensor) -> Var {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Const, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.0];
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        let inner = self.inner.borrow();
        f(&inner.nodes[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.inner.borrow().nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].shape.clone()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Gradient accumulated at `v` by the most recent `backward` calls.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let shape = inner.nodes[v.0].shape.clone();
        inner.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(shape, g.clone()))
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Rejects non-finite values at `v` with a diagnostic naming `what`.
    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.0];
        if let Some(pos) = node.value.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "{what}: non-finite value {} at flat index {pos}",
                node.value[pos]
            )));
        }
        Ok(())
    }

    // ---- binary --------------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let (na, nb) = (&inner.nodes[a.0], &inner.nodes[b.0]);
            if na.shape.len() != 2 || nb.shape.len() != 2 || na.cols != nb.rows {
                return Err(Error::shape("matmul", &na.shape, &nb.shape));
            }
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &na.value, (k, 1), &nb.value, (n, 1), &mut out, 0.0);
            (vec![m, n], out, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(shape, value, Op::MatMul(a.0, b.0), ng))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let na = &inner.nodes[a.0];
            let t = Tensor::from_parts(vec![na.rows, na.cols], na.value.clone()).transpose()?;
            (t.shape().to_vec(), t.into_data(), na.needs_grad)
        };
        Ok(self.push(shape, value, Op::Transpose(a.0), ng))
    }

    fn elementwise(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let (na, nb) = (&inner.nodes[a.0], &inner.nodes[b.0]);
            if na.rows != nb.rows || na.cols != nb.cols {
                return Err(Error::shape(name, &na.shape, &nb.shape));
            }
            let v: Vec<f64> = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
            (na.shape.clone(), v, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(shape, value, op, ng))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn tiled(
        &self,
        name: &'static str,
        x: Var,
        a: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let (nx, na) = (&inner.nodes[x.0], &inner.nodes[a.0]);
            if nx.cols != na.cols || na.rows == 0 || nx.rows % na.rows != 0 {
                return Err(Error::shape(name, &nx.shape, &na.shape));
            }
            let (c, r) = (nx.cols, na.rows);
            let mut v = Vec::with_capacity(nx.value.len());
            for (j, row) in nx.value.chunks_exact(c).enumerate() {
                let arow = &na.value[(j % r) * c..(j % r + 1) * c];
                v.extend(row.iter().zip(arow).map(|(&p, &q)| f(p, q)));
            }
            (nx.shape.clone(), v, nx.needs_grad || na.needs_grad)
        };
        Ok(self.push(shape, value, op, ng))
    }

    /// `x + a` where row `j` of `x` receives row `j mod rows(a)` of `a`.
    pub fn add_tiled(&self, x: Var, a: Var) -> Result<Var> {
        self.tiled("add_tiled", x, a, |p, q| p + q, Op::AddTiled(x.0, a.0))
    }

    /// `x ⊙ a` where row `j` of `x` is scaled by row `j mod rows(a)` of `a`.
    pub fn mul_tiled(&self, x: Var, a: Var) -> Result<Var> {
        self.tiled("mul_tiled", x, a, |p, q| p * q, Op::MulTiled(x.0, a.0))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let (na, nb) = (&inner.nodes[a.0], &inner.nodes[b.0]);
            if na.rows != nb.rows {
                return Err(Error::shape("concat_cols", &na.shape, &nb.shape));
            }
            let mut v = Vec::with_capacity(na.value.len() + nb.value.len());
            for i in 0..na.rows {
                v.extend_from_slice(&na.value[i * na.cols..(i + 1) * na.cols]);
                v.extend_from_slice(&nb.value[i * nb.cols..(i + 1) * nb.cols]);
            }
            (vec![na.rows, na.cols + nb.cols], v, na.needs_grad || nb.needs_grad)
        };
        Ok(self.push(shape, value, Op::ConcatCols(a.0, b.0), ng))
    }

    // ---- unary ---------------------------------------------------------

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect(), n.needs_grad)
        };
        self.push(shape, value, op, ng)
    }

    /// `scale·x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x.0, scale))
    }

    pub fn scale(&self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x.0),
        )
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x.0))
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x.0))
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x.0))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x.0, lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self, x: Var) -> Var {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            let mut v = Vec::with_capacity(n.value.len());
            for row in n.value.chunks_exact(n.cols) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
                v.extend(row.iter().map(|&z| z - lse));
            }
            (n.shape.clone(), v, n.needs_grad)
        };
        self.push(shape, value, Op::LogSoftmax(x.0), ng)
    }

    // ---- shape / reduction --------------------------------------------

    /// Output row `i·k + j` is input row `i`.
    pub fn repeat_rows(&self, x: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::Parameter("repeat count must be positive".into()));
        }
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            let t = Tensor::from_parts(vec![n.rows, n.cols], n.value.clone()).repeat_rows(k)?;
            (t.shape().to_vec(), t.into_data(), n.needs_grad)
        };
        Ok(self.push(shape, value, Op::RepeatRows(x.0, k), ng))
    }

    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            if start >= end || end > n.cols {
                return Err(Error::Contract(format!(
                    "column slice {start}..{end} out of range for {:?}",
                    n.shape
                )));
            }
            let w = end - start;
            let mut v = Vec::with_capacity(n.rows * w);
            for row in n.value.chunks_exact(n.cols) {
                v.extend_from_slice(&row[start..end]);
            }
            (vec![n.rows, w], v, n.needs_grad)
        };
        Ok(self.push(shape, value, Op::SliceCols(x.0, start), ng))
    }

    pub fn sum(&self, x: Var) -> Var {
        let (value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            (n.value.iter().sum::<f64>(), n.needs_grad)
        };
        self.push(Vec::new(), vec![value], Op::Sum(x.0), ng)
    }

    pub fn mean(&self, x: Var) -> Var {
        let (value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            (n.value.iter().sum::<f64>() / n.value.len() as f64, n.needs_grad)
        };
        self.push(Vec::new(), vec![value], Op::Mean(x.0), ng)
    }

    /// Per-member column means of an `(n·K)×c` activation, giving `K×c`.
    pub fn member_mean(&self, x: Var, k: usize) -> Result<Var> {
        let (shape, value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            if k == 0 || n.rows % k != 0 {
                return Err(Error::Contract(format!(
                    "{} rows cannot be grouped into {k} members",
                    n.rows
                )));
            }
            let per = (n.rows / k) as f64;
            let mut v = vec![0.0; k * n.cols];
            for (j, row) in n.value.chunks_exact(n.cols).enumerate() {
                add_into(&mut v[(j % k) * n.cols..(j % k + 1) * n.cols], row);
            }
            v.iter_mut().for_each(|s| *s /= per);
            (vec![k, n.cols], v, n.needs_grad)
        };
        Ok(self.push(shape, value, Op::MemberMean(x.0, k), ng))
    }

    /// Scalar at flat index `idx`.
    pub fn element(&self, x: Var, idx: usize) -> Result<Var> {
        let (value, ng) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            let v = *n.value.get(idx).ok_or_else(|| {
                Error::Contract(format!("index {idx} out of range for {:?}", n.shape))
            })?;
            (v, n.needs_grad)
        };
        Ok(self.push(Vec::new(), vec![value], Op::Element(x.0, idx), ng))
    }

    /// Picks column `cols[i]` from row `i`, giving a column vector.
    pub fn pick(&self, x: Var, cols: &[usize]) -> Result<Var> {
        let (value, ng, rows) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[x.0];
            if cols.len() != n.rows {
                return Err(Error::shape("pick", &n.shape, &[cols.len()]));
            }
            let mut v = Vec::with_capacity(n.rows);
            for (i, &c) in cols.iter().enumerate() {
                if c >= n.cols {
                    return Err(Error::Data(format!("label {c} out of range for {} classes", n.cols)));
                }
                v.push(n.value[i * n.cols + c]);
            }
            (v, n.needs_grad, n.rows)
        };
        Ok(self.push(vec![rows, 1], value, Op::Pick(x.0, cols.to_vec()), ng))
    }

    // ---- reverse sweep -------------------------------------------------

    /// Propagates d(loss)/d(node) to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut guard = self.inner.borrow_mut();
        let Inner { nodes, grads } = &mut *guard;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        for (node, g) in nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !nodes[loss.0].needs_grad {
            return Ok(());
        }
        if let Some(g) = grad_slot(grads, nodes, loss.0) {
            g[0] += 1.0;
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Const) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
        }
        Ok(())
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let out = &node.value;
    match node.op {
        Op::Leaf | Op::Const => {}
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[a], &nodes[b]);
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            if let Some(da) = grad_slot(grads, nodes, a) {
                // dA += G · Bᵀ
                gemm(m, n, k, g, (n, 1), &nb.value, (1, n), da, 1.0);
            }
            if let Some(db) = grad_slot(grads, nodes, b) {
                // dB += Aᵀ · G
                gemm(k, m, n, &na.value, (1, k), g, (n, 1), db, 1.0);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[a].rows, nodes[a].cols);
            if let Some(da) = grad_slot(grads, nodes, a) {
                for p in 0..r {
                    for q in 0..c {
                        da[p * c + q] += g[q * r + p];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = grad_slot(grads, nodes, a) {
                add_into(da, g);
            }
            if let Some(db) = grad_slot(grads, nodes, b) {
                add_into(db, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = grad_slot(grads, nodes, a) {
                add_into(da, g);
            }
            if let Some(db) = grad_slot(grads, nodes, b) {
                db.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
            }
        }
        Op::Mul(a, b) => {
            if let Some(da) = grad_slot(grads, nodes, a) {
                for ((d, s), y) in da.iter_mut().zip(g).zip(&nodes[b].value) {
                    *d += s * y;
                }
            }
            if let Some(db) = grad_slot(grads, nodes, b) {
                for ((d, s), x) in db.iter_mut().zip(g).zip(&nodes[a].value) {
                    *d += s * x;
                }
            }
        }
        Op::AddTiled(x, a) => {
            let (c, r) = (nodes[x].cols, nodes[a].rows);
            if let Some(dx) = grad_slot(grads, nodes, x) {
                add_into(dx, g);
            }
            if let Some(da) = grad_slot(grads, nodes, a) {
                for (j, grow) in g.chunks_exact(c).enumerate() {
                    add_into(&mut da[(j % r) * c..(j % r + 1) * c], grow);
                }
            }
        }
        Op::MulTiled(x, a) => {
            let (c, r) = (nodes[x].cols, nodes[a].rows);
            let (xv, av) = (&nodes[x].value, &nodes[a].value);
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for (j, (drow, grow)) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).enumerate() {
                    let arow = &av[(j % r) * c..(j % r + 1) * c];
                    for ((d, s), q) in drow.iter_mut().zip(grow).zip(arow) {
                        *d += s * q;
                    }
                }
            }
            if let Some(da) = grad_slot(grads, nodes, a) {
                for (j, (grow, xrow)) in g.chunks_exact(c).zip(xv.chunks_exact(c)).enumerate() {
                    let drow = &mut da[(j % r) * c..(j % r + 1) * c];
                    for ((d, s), p) in drow.iter_mut().zip(grow).zip(xrow) {
                        *d += s * p;
                    }
                }
            }
        }
        Op::RepeatRows(x, k) => {
            let c = nodes[x].cols;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for (j, grow) in g.chunks_exact(c).enumerate() {
                    let i = j / k;
                    add_into(&mut dx[i * c..(i + 1) * c], grow);
                }
            }
        }
        Op::Affine(x, scale) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                dx.iter_mut().zip(g).for_each(|(d, s)| *d += scale * s);
            }
        }
        Op::Sigmoid(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out) {
                    *d += s * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out) {
                    *d += s * (1.0 - y * y);
                }
            }
        }
        Op::Relu(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), v) in dx.iter_mut().zip(g).zip(&nodes[x].value) {
                    if *v > 0.0 {
                        *d += s;
                    }
                }
            }
        }
        Op::Exp(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), y) in dx.iter_mut().zip(g).zip(out) {
                    *d += s * y;
                }
            }
        }
        Op::Log(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), v) in dx.iter_mut().zip(g).zip(&nodes[x].value) {
                    *d += s / v;
                }
            }
        }
        Op::Square(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), v) in dx.iter_mut().zip(g).zip(&nodes[x].value) {
                    *d += 2.0 * s * v;
                }
            }
        }
        Op::Clamp(x, lo, hi) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((d, s), v) in dx.iter_mut().zip(g).zip(&nodes[x].value) {
                    if *v >= lo && *v <= hi {
                        *d += s;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = nodes[x].value.len() as f64;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                dx.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
        Op::MemberMean(x, k) => {
            let c = nodes[x].cols;
            let per = (nodes[x].rows / k) as f64;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for (j, drow) in dx.chunks_exact_mut(c).enumerate() {
                    let grow = &g[(j % k) * c..(j % k + 1) * c];
                    for (d, s) in drow.iter_mut().zip(grow) {
                        *d += s / per;
                    }
                }
            }
        }
        Op::Element(x, idx) => {
            if let Some(dx) = grad_slot(grads, nodes, x) {
                dx[idx] += g[0];
            }
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (nodes[a].cols, nodes[b].cols);
            let c = ca + cb;
            if let Some(da) = grad_slot(grads, nodes, a) {
                for (drow, grow) in da.chunks_exact_mut(ca).zip(g.chunks_exact(c)) {
                    add_into(drow, &grow[..ca]);
                }
            }
            if let Some(db) = grad_slot(grads, nodes, b) {
                for (drow, grow) in db.chunks_exact_mut(cb).zip(g.chunks_exact(c)) {
                    add_into(drow, &grow[ca..]);
                }
            }
        }
        Op::SliceCols(x, start) => {
            let c = nodes[x].cols;
            let w = node.cols;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                    add_into(&mut drow[start..start + w], grow);
                }
            }
        }
        Op::LogSoftmax(x) => {
            let c = nodes[x].cols;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for ((drow, grow), yrow) in dx
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(out.chunks_exact(c))
                {
                    let gs: f64 = grow.iter().sum();
                    for ((d, s), y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += s - y.exp() * gs;
                    }
                }
            }
        }
        Op::Pick(x, ref cols) => {
            let c = nodes[x].cols;
            if let Some(dx) = grad_slot(grads, nodes, x) {
                for (i, &col) in cols.iter().enumerate() {
                    dx[i * c + col] += g[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_ones_has_unit_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::ones(&[3]).with_grad());
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_grad());
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_is_noop() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = tape.affine(c, 2.0, 1.0);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.scalar(loss), 7.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::ones(&[2]).with_grad());
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_leaves() {
        let tape = Tape::new();
        let w = tape.leaf(&Tensor::vector(vec![1.0, -2.0]).unwrap().with_grad());
        let loss = tape.sum(tape.square(w));
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[4.0, -8.0]);
        tape.zero_grad();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn tiled_ops_follow_member_layout() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[4, 1]));
        let a = tape.constant(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap());
        let y = tape.mul_tiled(x, a).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0, 2.0, 3.0]);
        let m = tape.member_mean(y, 2).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 3.0]);
        assert!(tape.mul_tiled(tape.constant(Tensor::ones(&[3, 1])), a).is_err());
    }
}
