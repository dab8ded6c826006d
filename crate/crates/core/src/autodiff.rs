//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every forward op; [`Tape::backward`] walks it in reverse.
//! Only scalar-times-tensor broadcasting exists, so a bias row is added with
//! `matmul(ones, b)`.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::svm::{self, KernelMode, KernelParams, SolverOptions, SvmModel};
use crate::svm_diff;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        Tensor {
            rows: points.len(),
            cols: 3,
            data: points.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Rows of an `n x 3` tensor as points.
    pub fn to_points(&self) -> Vec<Vec3> {
        debug_assert_eq!(self.cols, 3);
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = a * b` (or `c += a * b` when `accumulate`), with optional transposes.
fn gemm(
    a: &Tensor,
    ta: bool,
    b: &Tensor,
    tb: bool,
    c: &mut Tensor,
    accumulate: bool,
) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), (m, n));
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe the row-major buffers above and the dimensions match.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = Tensor::zeros(a.rows, b.cols);
    gemm(a, false, b, false, &mut c, false);
    Ok(c)
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
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

/// Inverse of [`softplus`], for initializing softplus-parameterized values.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleBy(Var, Var),
    Sum(Var),
    Square(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    Svm(Box<SvmNode>),
}

#[derive(Debug, Clone)]
struct SvmNode {
    points: Var,
    sigma: Var,
    queries: Var,
    model: SvmModel,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradient of a scalar with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch(format!(
        "{op} {}x{} with {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
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

    /// Number of leaves that receive gradients.
    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Leaf) && n.needs_grad)
            .count()
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && value.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(op, value, needs_grad))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(op, value, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        self.push(Op::MatMul(a, b), value, &[a, b])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        };
        self.push(op, value, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    /// Concatenation along columns.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows != y.rows {
            return Err(shape_err("concat", x, y));
        }
        let cols = x.cols + y.cols;
        let mut data = Vec::with_capacity(x.rows * cols);
        for r in 0..x.rows {
            data.extend_from_slice(&x.data[r * x.cols..(r + 1) * x.cols]);
            data.extend_from_slice(&y.data[r * y.cols..(r + 1) * y.cols]);
        }
        let value = Tensor {
            rows: x.rows,
            cols,
            data,
        };
        self.push(Op::Concat(a, b), value, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), |v| v * s)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Offset(a), |v| v + c)
    }

    /// Multiplies every entry of `a` by the `1 x 1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "scale_by expects a 1x1 scale, got {}x{}",
                sv.rows, sv.cols
            )));
        }
        let k = sv.data[0];
        let x = self.value(a);
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|v| v * k).collect(),
        };
        self.push(Op::ScaleBy(a, s), value, &[a, s])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(Op::Sum(a), value, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).data.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("mean of an empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a), |v| v * v)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "reshape {}x{} to {rows}x{cols}",
                x.rows, x.cols
            )));
        }
        let value = Tensor {
            rows,
            cols,
            data: x.data.clone(),
        };
        self.push(Op::Reshape(a), value, &[a])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols {
            return Err(Error::ShapeMismatch(format!(
                "columns {start}..{} of a {}-column tensor",
                start + len,
                x.cols
            )));
        }
        let mut data = Vec::with_capacity(x.rows * len);
        for r in 0..x.rows {
            data.extend_from_slice(&x.data[r * x.cols + start..r * x.cols + start + len]);
        }
        let value = Tensor {
            rows: x.rows,
            cols: len,
            data,
        };
        self.push(Op::SliceCols(a, start), value, &[a])
    }

    /// Solves the SVM dual on `points` (`N x 3`) with fixed `labels` and bandwidth
    /// `sigma` (`1 x 1` or `1 x 3`), then evaluates the discriminant at `queries`
    /// (`Q x 3`). Output is `Q x 1`.
    pub fn svm_discriminant(
        &mut self,
        points: Var,
        labels: &[f64],
        sigma: Var,
        queries: Var,
        mode: KernelMode,
        opts: &SolverOptions,
    ) -> Result<Var> {
        let (p, s, q) = (self.value(points), self.value(sigma), self.value(queries));
        if p.cols != 3 || q.cols != 3 || p.rows != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "svm node: points {}x{}, {} labels, queries {}x{}",
                p.rows,
                p.cols,
                labels.len(),
                q.rows,
                q.cols
            )));
        }
        if s.shape() != (1, mode.sigma_len()) {
            return Err(Error::ShapeMismatch(format!(
                "sigma of shape {}x{} for a {} kernel",
                s.rows,
                s.cols,
                mode.name()
            )));
        }
        let kernel = KernelParams::new(mode, &s.data)?;
        let model = svm::solve_dual_points(&p.to_points(), labels, &kernel, opts)?;
        let value = Tensor {
            rows: q.rows,
            cols: 1,
            data: model.discriminant_batch(&q.to_points()),
        };
        let node = SvmNode {
            points,
            sigma,
            queries,
            model,
        };
        self.push(Op::Svm(Box::new(node)), value, &[points, sigma, queries])
    }

    /// The model solved inside an SVM node.
    pub fn svm_model(&self, v: Var) -> Option<&SvmModel> {
        match &self.nodes[v.0].op {
            Op::Svm(node) => Some(&node.model),
            _ => None,
        }
    }

    /// Gradients of the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows, lv.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        let mut da = Tensor::zeros(av.rows, av.cols);
                        gemm(&g, false, bv, true, &mut da, false);
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut db = Tensor::zeros(bv.rows, bv.cols);
                        gemm(av, true, &g, false, &mut db, false);
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    let neg = map_tensor(&g, |v| -v);
                    self.accumulate(&mut grads, *b, neg);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols;
                    let cb = self.value(*b).cols;
                    let mut ga = Vec::with_capacity(g.rows * ca);
                    let mut gb = Vec::with_capacity(g.rows * cb);
                    for r in 0..g.rows {
                        let row = &g.data[r * g.cols..(r + 1) * g.cols];
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    self.accumulate(&mut grads, *a, Tensor { rows: g.rows, cols: ca, data: ga });
                    self.accumulate(&mut grads, *b, Tensor { rows: g.rows, cols: cb, data: gb });
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = zip_tensor(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let d = zip_tensor(&g, x, |gv, xv| gv * sigmoid(xv));
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_tensor(&g, &node.value, |gv, s| gv * s * (1.0 - s));
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip_tensor(&g, &node.value, |gv, t| gv * (1.0 - t * t));
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.accumulate(&mut grads, *a, map_tensor(&g, |v| v * s));
                }
                Op::Offset(a) | Op::Reshape(a) => {
                    let x = self.value(*a);
                    let d = Tensor {
                        rows: x.rows,
                        cols: x.cols,
                        data: g.data,
                    };
                    self.accumulate(&mut grads, *a, d);
                }
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).data[0];
                    let x = self.value(*a);
                    if self.nodes[s.0].needs_grad {
                        let ds: f64 = g.data.iter().zip(&x.data).map(|(p, q)| p * q).sum();
                        self.accumulate(&mut grads, *s, Tensor::scalar(ds));
                    }
                    self.accumulate(&mut grads, *a, map_tensor(&g, |v| v * k));
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let d = Tensor::filled(x.rows, x.cols, g.data[0]);
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let d = zip_tensor(&g, x, |gv, xv| 2.0 * gv * xv);
                    self.accumulate(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let dst = r * x.cols + start;
                        d.data[dst..dst + g.cols]
                            .copy_from_slice(&g.data[r * g.cols..(r + 1) * g.cols]);
                    }
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Svm(svm_node) => {
                    let queries = self.value(svm_node.queries).to_points();
                    let sg = svm_diff::backward_discriminant(
                        &svm_node.model,
                        &queries,
                        &g.data,
                        svm_diff::default_epsilon(svm_node.model.c),
                    )?;
                    self.accumulate(&mut grads, svm_node.points, Tensor::from_points(&sg.d_support));
                    self.accumulate(&mut grads, svm_node.sigma, Tensor::row(sg.d_sigma));
                    self.accumulate(&mut grads, svm_node.queries, Tensor::from_points(&sg.d_query));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Concat(..) => "concat",
        Op::Relu(_) => "relu",
        Op::Softplus(_) => "softplus",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Scale(..) => "scale",
        Op::Offset(_) => "offset",
        Op::ScaleBy(..) => "scale_by",
        Op::Sum(_) => "sum",
        Op::Square(_) => "square",
        Op::Reshape(_) => "reshape",
        Op::SliceCols(..) => "slice_cols",
        Op::Svm(_) => "svm",
    }
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_tape(x: f64) -> (Tape, Var) {
        let mut t = Tape::new();
        let v = t.param(Tensor::scalar(x));
        (t, v)
    }

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![-2.0, 3.0]));
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 3.0]);
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus_inverse(softplus(0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn matmul_by_hand() {
        let mut t = Tape::new();
        let a = t.param(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.param(Tensor::new(3, 1, vec![1.0, 0.0, -1.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), (2, 1));
        assert_eq!(t.value(c).data(), &[-2.0, -2.0]);
        assert!(matches!(t.matmul(a, a), Err(Error::ShapeMismatch(_))));
        assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn trivial_gradients() {
        let (mut t, x) = scalar_tape(0.0);
        let s = t.sigmoid(x).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap().item(), 0.25);

        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, -2.0, 0.5]));
        let sq = t.square(x).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0]));
        let c = t.constant(Tensor::row(vec![3.0, 4.0]));
        let p = t.sub(x, c).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn nonfinite_forward_is_caught() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(f64::MAX));
        assert!(matches!(t.scale(x, 10.0), Err(Error::NonFinite(_))));
        t.set_check_finite(false);
        assert!(t.scale(x, 10.0).is_ok());
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    /// Random MLP 3 -> 16 -> 16 -> 1 over a batch, using every elementwise op.
    fn mlp_loss(params: &[Tensor], x: &Tensor) -> (Tape, Vec<Var>, Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| t.param(p.clone())).collect();
        let xin = t.constant(x.clone());
        let ones = t.constant(Tensor::filled(x.rows(), 1, 1.0));
        let h = t.matmul(xin, vars[0]).unwrap();
        let b = t.matmul(ones, vars[1]).unwrap();
        let h = t.add(h, b).unwrap();
        let h = t.tanh(h).unwrap();
        let h2 = t.matmul(h, vars[2]).unwrap();
        let b2 = t.matmul(ones, vars[3]).unwrap();
        let h2 = t.add(h2, b2).unwrap();
        let h2 = t.softplus(h2).unwrap();
        let cat = t.concat(h2, xin).unwrap();
        let relu = t.relu(cat).unwrap();
        let sliced = t.slice_cols(relu, 0, 16).unwrap();
        let o = t.matmul(sliced, vars[4]).unwrap();
        let beta = t.reshape(vars[5], 1, 1).unwrap();
        let o = t.scale_by(o, beta).unwrap();
        let o = t.sigmoid(o).unwrap();
        let target = t.constant(Tensor::filled(x.rows(), 1, 0.3));
        let d = t.sub(o, target).unwrap();
        let d = t.square(d).unwrap();
        let d = t.offset(d, 0.1).unwrap();
        let l = t.mean(d).unwrap();
        let l = t.scale(l, 3.0).unwrap();
        (t, vars, l)
    }

    #[test]
    fn mlp_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = vec![
            rand_tensor(&mut rng, 3, 16),
            rand_tensor(&mut rng, 1, 16),
            rand_tensor(&mut rng, 16, 16),
            rand_tensor(&mut rng, 1, 16),
            rand_tensor(&mut rng, 16, 1),
            rand_tensor(&mut rng, 1, 1),
        ];
        let x = rand_tensor(&mut rng, 5, 3);
        let (tape, vars, loss) = mlp_loss(&params, &x);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-5;
        let mut checked = 0;
        for (pi, p) in params.iter().enumerate() {
            let analytic = grads.get(vars[pi]).unwrap();
            for k in 0..p.data().len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[pi].data_mut()[k] += h;
                minus[pi].data_mut()[k] -= h;
                let (tp, _, lp) = mlp_loss(&plus, &x);
                let (tm, _, lm) = mlp_loss(&minus, &x);
                let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
                let a = analytic.data()[k];
                if a.abs() > 1e-8 {
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                    assert!(rel < 1e-5, "param {pi}[{k}]: {a} vs {numeric}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn gradients_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            rand_tensor(&mut rng, 3, 16),
            rand_tensor(&mut rng, 1, 16),
            rand_tensor(&mut rng, 16, 16),
            rand_tensor(&mut rng, 1, 16),
            rand_tensor(&mut rng, 16, 1),
            rand_tensor(&mut rng, 1, 1),
        ];
        let x = rand_tensor(&mut rng, 7, 3);
        let (t1, v1, l1) = mlp_loss(&params, &x);
        let (t2, v2, l2) = mlp_loss(&params, &x);
        let g1 = t1.backward(l1).unwrap();
        let g2 = t2.backward(l2).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert_eq!(g1.get(*a), g2.get(*b));
        }
    }

    #[test]
    fn svm_node_matches_svm_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = rand_tensor(&mut rng, 8, 3);
        let pts = Tensor::new(8, 3, pts.data().iter().map(|v| v * 0.25).collect()).unwrap();
        let labels = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let q = Tensor::new(2, 3, vec![0.1, 0.0, -0.1, 0.2, 0.3, 0.0]).unwrap();
        let opts = SolverOptions::default();

        let build = |p: &Tensor, s: f64| {
            let mut t = Tape::new();
            let pv = t.param(p.clone());
            let sv = t.param(Tensor::scalar(s));
            let qv = t.constant(q.clone());
            let out = t
                .svm_discriminant(pv, &labels, sv, qv, KernelMode::Isotropic, &opts)
                .unwrap();
            let l = t.sum(out).unwrap();
            (t, pv, sv, l)
        };
        let (t, pv, sv, l) = build(&pts, 0.3);
        let g = t.backward(l).unwrap();
        let h = 1e-5;
        let gs = g.get(sv).unwrap().item();
        let (tp, .., lp) = build(&pts, 0.3 + h);
        let (tm, .., lm) = build(&pts, 0.3 - h);
        let num = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
        assert!((gs - num).abs() / gs.abs().max(1e-6) < 1e-4, "{gs} vs {num}");
        assert_eq!(g.get(pv).unwrap().shape(), (8, 3));
        assert!(t.svm_model(Var(3)).is_some());
    }
}
