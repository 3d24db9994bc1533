//! Tensor-level reverse-mode tape.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// An operation with a hand-written vector–Jacobian product.
pub trait CustomOp: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients for each input given the output gradient; `None` means zero.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    /// `Pᵀ W`, summed in row order and skipping zero entries of `P`.
    TMatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    MulScalar(Var, Var),
    AddScalarVar(Var, Var),
    Softplus(Var),
    Sigmoid(Var),
    Exp(Var),
    SmoothMin(Var, f64, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>, usize),
    RowNorm(Var),
    RowSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    PairwiseDist(Var, Var),
    Ste(Var, Arc<Tensor>),
    ScatterLaplacian(Var, Arc<Vec<(usize, usize)>>, usize),
    GatherEntries(Var, Arc<Vec<(usize, usize)>>),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::TMatMul(..) => "tmatmul",
            Op::Transpose(..) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddScalarVar(..) => "add_scalar_var",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::SmoothMin(..) => "smooth_min",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::RowNorm(..) => "row_norm",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::PairwiseDist(..) => "pairwise_dist",
            Op::Ste(..) => "ste",
            Op::ScatterLaplacian(..) => "scatter_laplacian",
            Op::GatherEntries(..) => "gather_entries",
            Op::Custom(op, _) => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::TMatMul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::DivCol(a, b)
            | Op::MulScalar(a, b)
            | Op::AddScalarVar(a, b)
            | Op::PairwiseDist(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::SmoothMin(a, ..)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, ..)
            | Op::RowNorm(a)
            | Op::RowSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Ste(a, _)
            | Op::ScatterLaplacian(a, ..)
            | Op::GatherEntries(a, _) => vec![*a],
            Op::ConcatCols(v) | Op::Custom(_, v) => v.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth lower clamp `lo + softplus(κ(x − lo))/κ`.
/// Returns `x` exactly once the correction is below double precision.
pub fn smooth_min(x: f64, lo: f64, kappa: f64) -> f64 {
    let z = kappa * (x - lo);
    if z > 40.0 {
        x
    } else {
        lo + softplus(z) / kappa
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::InvalidConfig(format!("{op}: incompatible shapes {:?} and {:?}", a.dim(), b.dim()))
}

/// Records tensor operations and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(String, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Test hook: scales the backward output of every op named `op`.
    pub fn with_fault(op: &str, factor: f64) -> Self {
        Tape { nodes: Vec::new(), fault: Some((op.to_string(), factor)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Unnamed input that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Named parameter leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, param: Some(name.to_string()) });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |x: &Var| &self.nodes[x.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => {
                if v(a).dim() != v(b).dim() {
                    return Err(shape_err("add", v(a), v(b)));
                }
                v(a) + v(b)
            }
            Op::Sub(a, b) => {
                if v(a).dim() != v(b).dim() {
                    return Err(shape_err("sub", v(a), v(b)));
                }
                v(a) - v(b)
            }
            Op::Mul(a, b) => {
                if v(a).dim() != v(b).dim() {
                    return Err(shape_err("mul", v(a), v(b)));
                }
                v(a) * v(b)
            }
            Op::Scale(a, c) => v(a) * *c,
            Op::AddScalar(a, c) => v(a) + *c,
            Op::MatMul(a, b) => {
                if v(a).ncols() != v(b).nrows() {
                    return Err(shape_err("matmul", v(a), v(b)));
                }
                v(a).dot(v(b))
            }
            Op::TMatMul(p, w) => {
                let (p, w) = (v(p), v(w));
                if p.nrows() != w.nrows() {
                    return Err(shape_err("tmatmul", p, w));
                }
                let mut out = Array2::zeros((p.ncols(), w.ncols()));
                for i in 0..p.nrows() {
                    for a in 0..p.ncols() {
                        let pa = p[[i, a]];
                        if pa != 0.0 {
                            let mut row = out.row_mut(a);
                            row.scaled_add(pa, &w.row(i));
                        }
                    }
                }
                out
            }
            Op::Transpose(a) => v(a).t().to_owned(),
            Op::AddRow(a, r) => {
                if v(r).nrows() != 1 || v(r).ncols() != v(a).ncols() {
                    return Err(shape_err("add_row", v(a), v(r)));
                }
                v(a) + v(r)
            }
            Op::MulCol(a, c) => {
                if v(c).ncols() != 1 || v(c).nrows() != v(a).nrows() {
                    return Err(shape_err("mul_col", v(a), v(c)));
                }
                v(a) * v(c)
            }
            Op::DivCol(a, c) => {
                if v(c).ncols() != 1 || v(c).nrows() != v(a).nrows() {
                    return Err(shape_err("div_col", v(a), v(c)));
                }
                v(a) / v(c)
            }
            Op::MulScalar(a, s) => v(a) * v(s)[[0, 0]],
            Op::AddScalarVar(a, s) => v(a) + v(s)[[0, 0]],
            Op::Softplus(a) => v(a).mapv(softplus),
            Op::Sigmoid(a) => v(a).mapv(sigmoid),
            Op::Exp(a) => v(a).mapv(f64::exp),
            Op::SmoothMin(a, lo, k) => v(a).mapv(|x| smooth_min(x, *lo, *k)),
            Op::ConcatCols(vs) => {
                let views: Vec<_> = vs.iter().map(|x| v(x).view()).collect();
                ndarray::concatenate(Axis(1), &views)
                    .map_err(|e| Error::InvalidConfig(format!("concat_cols: {e}")))?
            }
            Op::GatherRows(a, idx) => {
                let a = v(a);
                if let Some(&bad) = idx.iter().find(|&&i| i >= a.nrows()) {
                    return Err(Error::InvalidConfig(format!("gather_rows: index {bad} out of range")));
                }
                a.select(Axis(0), idx)
            }
            Op::ScatterAddRows(a, idx, n) => {
                let a = v(a);
                if idx.len() != a.nrows() {
                    return Err(Error::InvalidConfig("scatter_add_rows: index count mismatch".into()));
                }
                let mut out = Array2::zeros((*n, a.ncols()));
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = out.row_mut(i);
                    row += &a.row(r);
                }
                out
            }
            Op::RowNorm(a) => {
                let a = v(a);
                Array2::from_shape_fn((a.nrows(), 1), |(i, _)| a.row(i).dot(&a.row(i)).sqrt())
            }
            Op::RowSoftmax(a) => {
                let mut out = v(a).clone();
                for mut row in out.rows_mut() {
                    let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - mx).exp());
                    let s = row.sum();
                    row /= s;
                }
                out
            }
            Op::Sum(a) => Array2::from_elem((1, 1), v(a).sum()),
            Op::Mean(a) => Array2::from_elem((1, 1), v(a).sum() / v(a).len().max(1) as f64),
            Op::MeanRows(a) => {
                let a = v(a);
                let n = a.nrows().max(1) as f64;
                (a.sum_axis(Axis(0)) / n).insert_axis(Axis(0))
            }
            Op::PairwiseDist(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.ncols() != b.ncols() {
                    return Err(shape_err("pairwise_dist", a, b));
                }
                Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
                    a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                })
            }
            Op::Ste(_, hard) => (**hard).clone(),
            Op::ScatterLaplacian(s, edges, n) => {
                let s = v(s);
                if s.nrows() != edges.len() {
                    return Err(Error::InvalidConfig("scatter_laplacian: stiffness count mismatch".into()));
                }
                let mut l = Array2::zeros((*n, *n));
                for (k, &(i, j)) in edges.iter().enumerate() {
                    let w = s[[k, 0]];
                    l[[i, i]] += w;
                    l[[j, j]] += w;
                    l[[i, j]] -= w;
                    l[[j, i]] -= w;
                }
                l
            }
            Op::GatherEntries(m, idx) => {
                let m = v(m);
                Array2::from_shape_fn((idx.len(), 1), |(k, _)| m[[idx[k].0, idx[k].1]])
            }
            Op::Custom(op, ins) => {
                let vals: Vec<&Tensor> = ins.iter().map(v).collect();
                op.forward(&vals)?
            }
        })
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::Scale(a, c)).expect("scale is total")
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::AddScalar(a, c)).expect("add_scalar is total")
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    /// `Pᵀ W` with exact row-order summation over the nonzeros of `P`.
    pub fn tmatmul(&mut self, p: Var, w: Var) -> Result<Var> {
        self.record(Op::TMatMul(p, w))
    }
    pub fn transpose(&mut self, a: Var) -> Var {
        self.record(Op::Transpose(a)).expect("transpose is total")
    }
    /// Adds the `1×m` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.record(Op::AddRow(a, r))
    }
    /// Scales row `i` of `a` by `c[i]` (`c` is `n×1`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.record(Op::MulCol(a, c))
    }
    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.record(Op::DivCol(a, c))
    }
    /// Multiplies by a `1×1` variable.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.record(Op::MulScalar(a, s))
    }
    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        self.record(Op::AddScalarVar(a, s))
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.record(Op::Softplus(a)).expect("softplus is total")
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.record(Op::Sigmoid(a)).expect("sigmoid is total")
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.record(Op::Exp(a)).expect("exp is total")
    }
    pub fn smooth_min(&mut self, a: Var, lo: f64, kappa: f64) -> Var {
        self.record(Op::SmoothMin(a, lo, kappa)).expect("smooth_min is total")
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols(parts.to_vec()))
    }
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.record(Op::GatherRows(a, idx))
    }
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        self.record(Op::ScatterAddRows(a, idx, n))
    }
    pub fn row_norm(&mut self, a: Var) -> Var {
        self.record(Op::RowNorm(a)).expect("row_norm is total")
    }
    pub fn row_softmax(&mut self, a: Var) -> Var {
        self.record(Op::RowSoftmax(a)).expect("row_softmax is total")
    }
    pub fn sum(&mut self, a: Var) -> Var {
        self.record(Op::Sum(a)).expect("sum is total")
    }
    pub fn mean(&mut self, a: Var) -> Var {
        self.record(Op::Mean(a)).expect("mean is total")
    }
    /// Column means as a `1×m` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.record(Op::MeanRows(a)).expect("mean_rows is total")
    }
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::PairwiseDist(a, b))
    }
    /// Straight-through estimator: forward is the one-hot row argmax of
    /// `soft` (ties to the lowest column), backward is the identity.
    pub fn ste(&mut self, soft: Var) -> Var {
        let hard = hard_rows(self.value(soft));
        self.push(hard.clone(), Op::Ste(soft, Arc::new(hard)))
    }
    /// STE whose forward value is the given hard matrix instead of the argmax.
    pub fn ste_with(&mut self, soft: Var, hard: Tensor) -> Result<Var> {
        if hard.dim() != self.value(soft).dim() {
            return Err(shape_err("ste", &hard, self.value(soft)));
        }
        Ok(self.push(hard.clone(), Op::Ste(soft, Arc::new(hard))))
    }
    /// Dense graph Laplacian from per-edge weights (`E×1`).
    pub fn scatter_laplacian(&mut self, s: Var, edges: Arc<Vec<(usize, usize)>>, n: usize) -> Result<Var> {
        self.record(Op::ScatterLaplacian(s, edges, n))
    }
    pub fn gather_entries(&mut self, m: Var, idx: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        self.record(Op::GatherEntries(m, idx))
    }
    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        self.record(Op::Custom(op, inputs.to_vec()))
    }

    /// Reverse sweep from a scalar root; returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Result<Vec<Option<Tensor>>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::InvalidConfig(format!("backward root must be scalar, got {:?}", rv.dim())));
        }
        if !rv[[0, 0]].is_finite() {
            return Err(Error::NumericalError(format!("objective is {}", rv[[0, 0]])));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let ins = node.op.inputs();
            let mut gin = self.vjp(node, &g)?;
            if let Some((name, factor)) = &self.fault {
                if name == node.op.name() {
                    for t in gin.iter_mut().flatten() {
                        t.mapv_inplace(|x| x * factor);
                    }
                }
            }
            for (inp, gi) in ins.into_iter().zip(gin) {
                if let Some(gi) = gi {
                    if !self.nodes[inp.0].requires_grad {
                        continue;
                    }
                    match &mut grads[inp.0] {
                        Some(acc) => *acc += &gi,
                        slot @ None => *slot = Some(gi),
                    }
                }
            }
        }
        Ok(grads)
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let y = &node.value;
        let rg = |x: &Var| self.nodes[x.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub(..) => vec![Some(g.clone()), Some(-g)],
            Op::Mul(a, b) => vec![Some(g * v(b)), Some(g * v(a))],
            Op::Scale(_, c) => vec![Some(g * *c)],
            Op::AddScalar(..) => vec![Some(g.clone())],
            Op::MatMul(a, b) => vec![
                rg(a).then(|| g.dot(&v(b).t())),
                rg(b).then(|| v(a).t().dot(g)),
            ],
            Op::TMatMul(p, w) => vec![
                rg(p).then(|| v(w).dot(&g.t())),
                rg(w).then(|| v(p).dot(g)),
            ],
            Op::Transpose(_) => vec![Some(g.t().to_owned())],
            Op::AddRow(..) => vec![Some(g.clone()), Some(g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            Op::MulCol(a, c) => vec![
                Some(g * v(c)),
                rg(c).then(|| (g * v(a)).sum_axis(Axis(1)).insert_axis(Axis(1))),
            ],
            Op::DivCol(a, c) => {
                let ga = g / v(c);
                let gc = rg(c).then(|| {
                    let c2 = v(c).mapv(|x| x * x);
                    -((g * v(a)).sum_axis(Axis(1)).insert_axis(Axis(1)) / c2)
                });
                vec![Some(ga), gc]
            }
            Op::MulScalar(a, s) => {
                let sv = v(s)[[0, 0]];
                vec![Some(g * sv), Some(Array2::from_elem((1, 1), (g * v(a)).sum()))]
            }
            Op::AddScalarVar(..) => vec![Some(g.clone()), Some(Array2::from_elem((1, 1), g.sum()))],
            Op::Softplus(a) => vec![Some(g * &v(a).mapv(sigmoid))],
            Op::Sigmoid(_) => vec![Some(g * &y.mapv(|s| s * (1.0 - s)))],
            Op::Exp(_) => vec![Some(g * y)],
            Op::SmoothMin(a, lo, k) => vec![Some(g * &v(a).mapv(|x| sigmoid(k * (x - lo))))],
            Op::ConcatCols(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|p| {
                        let w = v(p).ncols();
                        let out = g.slice(s![.., off..off + w]).to_owned();
                        off += w;
                        Some(out)
                    })
                    .collect()
            }
            Op::GatherRows(a, idx) => {
                let mut out = Array2::zeros(v(a).dim());
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = out.row_mut(i);
                    row += &g.row(r);
                }
                vec![Some(out)]
            }
            Op::ScatterAddRows(_, idx, _) => vec![Some(g.select(Axis(0), idx))],
            Op::RowNorm(a) => {
                let a = v(a);
                let mut out = Array2::zeros(a.dim());
                for i in 0..a.nrows() {
                    let n = y[[i, 0]];
                    if n > 0.0 {
                        let mut row = out.row_mut(i);
                        row.scaled_add(g[[i, 0]] / n, &a.row(i));
                    }
                }
                vec![Some(out)]
            }
            Op::RowSoftmax(_) => {
                let mut out = g * y;
                for (mut row, yr) in out.rows_mut().into_iter().zip(y.rows()) {
                    let s = row.sum();
                    row.scaled_add(-s, &yr);
                }
                vec![Some(out)]
            }
            Op::Sum(a) => vec![Some(Array2::from_elem(v(a).dim(), g[[0, 0]]))],
            Op::Mean(a) => vec![Some(Array2::from_elem(v(a).dim(), g[[0, 0]] / v(a).len().max(1) as f64))],
            Op::MeanRows(a) => {
                let n = v(a).nrows();
                let row = g.row(0).to_owned() / n.max(1) as f64;
                vec![Some(Array2::from_shape_fn(v(a).dim(), |(_, j)| row[j]))]
            }
            Op::PairwiseDist(a, b) => {
                let (av, bv) = (v(a), v(b));
                let mut ga = Array2::zeros(av.dim());
                let mut gb = Array2::zeros(bv.dim());
                for i in 0..av.nrows() {
                    for j in 0..bv.nrows() {
                        let d = y[[i, j]];
                        if d > 0.0 {
                            let w = g[[i, j]] / d;
                            for c in 0..av.ncols() {
                                let diff = w * (av[[i, c]] - bv[[j, c]]);
                                ga[[i, c]] += diff;
                                gb[[j, c]] -= diff;
                            }
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }
            Op::Ste(..) => vec![Some(g.clone())],
            Op::ScatterLaplacian(s, edges, _) => {
                let gs = Array2::from_shape_fn(v(s).dim(), |(k, _)| {
                    let (i, j) = edges[k];
                    g[[i, i]] + g[[j, j]] - g[[i, j]] - g[[j, i]]
                });
                vec![Some(gs)]
            }
            Op::GatherEntries(m, idx) => {
                let mut out = Array2::zeros(v(m).dim());
                for (k, &(i, j)) in idx.iter().enumerate() {
                    out[[i, j]] += g[[k, 0]];
                }
                vec![Some(out)]
            }
            Op::Custom(op, ins) => {
                let vals: Vec<&Tensor> = ins.iter().map(v).collect();
                op.backward(&vals, y, g)?
            }
        })
    }

    /// Re-evaluates every recorded operation from the stored leaves and
    /// reports whether all values are reproduced bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut fresh = Tape { nodes: Vec::with_capacity(self.nodes.len()), fault: None };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                _ => fresh.eval(&node.op)?,
            };
            if value.dim() != node.value.dim()
                || value.iter().zip(node.value.iter()).any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Ok(false);
            }
            fresh.nodes.push(Node { value, op: node.op.clone(), requires_grad: node.requires_grad, param: None });
        }
        Ok(true)
    }

    /// Names of parameter leaves together with their variables.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.param.as_deref().map(|p| (p, Var(i))))
    }
}

/// One-hot row argmax, ties to the lowest column.
pub fn hard_rows(soft: &Tensor) -> Tensor {
    let mut out = Array2::zeros(soft.dim());
    for (i, row) in soft.rows().into_iter().enumerate() {
        let mut best = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        if soft.ncols() > 0 {
            out[[i, best]] = 1.0;
        }
    }
    out
}
