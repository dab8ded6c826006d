//! Gaussian-kernel binary SVM in dual form.
//!
//! The dual problem
//!
//! ```text
//!     minimize    1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j) - sum_i a_i
//!     subject to  sum_i a_i y_i = 0,   0 <= a_i <= C
//! ```
//!
//! is solved with SMO (maximal violating pair, second-order working-set selection),
//! then polished by solving the equality-constrained system on the resulting active set
//! so the solution is accurate to round-off. The polished solution is what the implicit
//! backward pass in [`crate::svm_diff`] linearizes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::shapes::{LabelConvention, LabeledPointSet};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const MAX_ITERATIONS: usize = 100_000;
pub const BRUTE_FORCE_MAX: usize = 8;

const MODEL_HEADER: &str = "svmshape-model v1";
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    Isotropic,
    Anisotropic,
}

impl KernelMode {
    pub fn name(self) -> &'static str {
        match self {
            KernelMode::Isotropic => "isotropic",
            KernelMode::Anisotropic => "anisotropic",
        }
    }

    /// Number of bandwidth parameters.
    pub fn sigma_len(self) -> usize {
        match self {
            KernelMode::Isotropic => 1,
            KernelMode::Anisotropic => 3,
        }
    }
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(KernelMode::Isotropic),
            "aniso" | "anisotropic" => Ok(KernelMode::Anisotropic),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel mode `{other}` (expected iso or aniso)"
            ))),
        }
    }
}

/// Gaussian kernel bandwidth.
///
/// The isotropic form is `exp(-|a-b|^2 / (2 s^2))`; the anisotropic form is
/// `exp(-(a-b)^T diag(s^2)^-1 (a-b))` without the factor 1/2, so an anisotropic kernel
/// with `s = (t, t, t)` equals the isotropic one with `2 s_iso^2 = t^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelParams {
    Isotropic(f64),
    Anisotropic([f64; 3]),
}

impl KernelParams {
    pub fn new(mode: KernelMode, sigma: &[f64]) -> Result<Self> {
        if sigma.len() != mode.sigma_len() {
            return Err(Error::ShapeMismatch(format!(
                "{} kernel takes {} sigma values, got {}",
                mode.name(),
                mode.sigma_len(),
                sigma.len()
            )));
        }
        if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s >= SIGMA_FLOOR)) {
            return Err(Error::InvalidArgument(format!(
                "sigma {bad} below floor {SIGMA_FLOOR} or non-finite"
            )));
        }
        Ok(match mode {
            KernelMode::Isotropic => KernelParams::Isotropic(sigma[0]),
            KernelMode::Anisotropic => KernelParams::Anisotropic([sigma[0], sigma[1], sigma[2]]),
        })
    }

    pub fn mode(&self) -> KernelMode {
        match self {
            KernelParams::Isotropic(_) => KernelMode::Isotropic,
            KernelParams::Anisotropic(_) => KernelMode::Anisotropic,
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        match self {
            KernelParams::Isotropic(s) => vec![*s],
            KernelParams::Anisotropic(s) => s.to_vec(),
        }
    }

    /// Per-axis inverse squared length scale `w` with `K = exp(-sum_k w_k d_k^2)`.
    #[inline]
    pub fn inv_scales(&self) -> Vec3 {
        match *self {
            KernelParams::Isotropic(s) => [1.0 / (2.0 * s * s); 3],
            KernelParams::Anisotropic(s) => std::array::from_fn(|k| 1.0 / (s[k] * s[k])),
        }
    }

    #[inline]
    pub fn eval(&self, a: Vec3, b: Vec3) -> f64 {
        let w = self.inv_scales();
        eval_scaled(&w, a, b)
    }
}

#[inline]
pub(crate) fn eval_scaled(w: &Vec3, a: Vec3, b: Vec3) -> f64 {
    let d = geom::sub(a, b);
    (-(w[0] * d[0] * d[0] + w[1] * d[1] * d[1] + w[2] * d[2] * d[2])).exp()
}

pub fn kernel_eval(a: Vec3, b: Vec3, kernel: &KernelParams) -> f64 {
    kernel.eval(a, b)
}

/// Kernel matrix over `points`.
pub fn gram_matrix(points: &[Vec3], kernel: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let w = kernel.inv_scales();
    let mut k = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = eval_scaled(&w, points[i], points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub c: f64,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

/// A solved dual SVM; its discriminant is the shape predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_points: Vec<Vec3>,
    pub labels: Vec<f64>,
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub kernel: KernelParams,
    pub kkt_residual: f64,
}

impl SvmModel {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `sum_i a_i y_i K(x_i, q) + b`.
    pub fn discriminant(&self, q: Vec3) -> f64 {
        let w = self.kernel.inv_scales();
        let mut acc = self.bias;
        for ((x, &y), &a) in self.support_points.iter().zip(&self.labels).zip(&self.alpha) {
            if a != 0.0 {
                acc += a * y * eval_scaled(&w, *x, q);
            }
        }
        acc
    }

    pub fn discriminant_batch(&self, queries: &[Vec3]) -> Vec<f64> {
        queries.iter().map(|&q| self.discriminant(q)).collect()
    }

    pub fn dual_objective(&self) -> f64 {
        let k = gram_matrix(&self.support_points, &self.kernel);
        dual_objective(&k, &self.labels, &self.alpha)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_HEADER}");
        let _ = writeln!(out, "kernel={}", self.kernel.mode().name());
        let sigma: Vec<String> = self.kernel.sigma().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "sigma={}", sigma.join(" "));
        let _ = writeln!(out, "c={}", self.c);
        let _ = writeln!(out, "bias={}", self.bias);
        let _ = writeln!(out, "kkt_residual={}", self.kkt_residual);
        let _ = writeln!(out, "n={}", self.len());
        for i in 0..self.len() {
            let p = self.support_points[i];
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                p[0], p[1], p[2], self.labels[i], self.alpha[i]
            );
        }
        out
    }

    pub fn from_text(text: &str, source: &Path) -> Result<SvmModel> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MODEL_HEADER => {}
            _ => return Err(Error::parse(source, 1, format!("expected `{MODEL_HEADER}`"))),
        }
        let mut header = std::collections::HashMap::new();
        let mut n = None;
        for (idx, line) in lines.by_ref() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, idx + 1, "expected `key=value`"))?;
            if k == "n" {
                n = Some(
                    v.parse::<usize>()
                        .map_err(|e| Error::parse(source, idx + 1, e.to_string()))?,
                );
                break;
            }
            header.insert(k.to_string(), (v.to_string(), idx + 1));
        }
        let n = n.ok_or_else(|| Error::parse(source, 0, "missing `n=`"))?;
        let field = |key: &str| -> Result<&(String, usize)> {
            header
                .get(key)
                .ok_or_else(|| Error::parse(source, 0, format!("missing `{key}=`")))
        };
        let num = |key: &str| -> Result<f64> {
            let (v, line) = field(key)?;
            v.parse().map_err(|e| Error::parse(source, *line, format!("{e}")))
        };
        let (mode_str, mode_line) = field("kernel")?;
        let mode: KernelMode = mode_str
            .parse()
            .map_err(|e: Error| Error::parse(source, *mode_line, e.to_string()))?;
        let (sigma_str, sigma_line) = field("sigma")?;
        let sigma: Vec<f64> = sigma_str
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(source, *sigma_line, format!("{e}")))?;
        let kernel = KernelParams::new(mode, &sigma)
            .map_err(|e| Error::parse(source, *sigma_line, e.to_string()))?;
        let mut model = SvmModel {
            support_points: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            bias: num("bias")?,
            c: num("c")?,
            kernel,
            kkt_residual: num("kkt_residual")?,
        };
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(source, idx + 1, format!("{e}")))?;
            if vals.len() != 5 {
                return Err(Error::parse(source, idx + 1, "expected `x y z label alpha`"));
            }
            model.support_points.push([vals[0], vals[1], vals[2]]);
            model.labels.push(vals[3]);
            model.alpha.push(vals[4]);
        }
        if model.len() != n {
            return Err(Error::parse(
                source,
                0,
                format!("expected {n} rows, found {}", model.len()),
            ));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<SvmModel> {
        SvmModel::from_text(&std::fs::read_to_string(path)?, path)
    }
}

/// `1/2 a^T Q a - sum a` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += y[j] * k[(i, j)] * alpha[j];
        }
        quad += alpha[i] * y[i] * row;
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Solves the dual for a `svm_pm1` training set.
pub fn solve_dual(
    train: &LabeledPointSet,
    kernel: &KernelParams,
    c: f64,
    tol: f64,
) -> Result<SvmModel> {
    if train.convention() != LabelConvention::SvmPm1 {
        return Err(Error::InvalidArgument(
            "SVM training set must use svm_pm1 labels".into(),
        ));
    }
    solve_dual_points(
        train.points(),
        &train.labels_f64(),
        kernel,
        &SolverOptions {
            c,
            tol,
            ..SolverOptions::default()
        },
    )
}

fn check_problem(points: &[Vec3], labels: &[f64], c: f64) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVM training points".into()));
    }
    let has_pos = labels.iter().any(|&y| y > 0.0);
    let has_neg = labels.iter().any(|&y| y < 0.0);
    if !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Solves the dual for raw points and `+-1` labels.
pub fn solve_dual_points(
    points: &[Vec3],
    labels: &[f64],
    kernel: &KernelParams,
    opts: &SolverOptions,
) -> Result<SvmModel> {
    check_problem(points, labels, opts.c)?;
    let k = gram_matrix(points, kernel);
    let (mut alpha, iterations) = smo(&k, labels, opts)?;
    if let Some(polished) = polish(&k, labels, &alpha, opts.c) {
        alpha = polished;
    }
    let grad = gradient(&k, labels, &alpha);
    let residual = kkt_residual(labels, &alpha, &grad, opts.c);
    if residual > opts.tol {
        return Err(Error::NoConvergence {
            residual,
            iterations,
        });
    }
    Ok(SvmModel {
        support_points: points.to_vec(),
        labels: labels.to_vec(),
        bias: bias_from_gradient(labels, &alpha, &grad, opts.c),
        alpha,
        c: opts.c,
        kernel: *kernel,
        kkt_residual: residual,
    })
}

/// Gradient of the dual objective: `G_i = y_i sum_j y_j K_ij a_j - 1`.
fn gradient(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| y[j] * k[(i, j)] * alpha[j]).sum();
            y[i] * s - 1.0
        })
        .collect()
}

#[inline]
fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

#[inline]
fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

/// Maximal violation `m - M` of the KKT conditions.
fn violation_gap(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut m_up = f64::NEG_INFINITY;
    let mut m_low = f64::INFINITY;
    for t in 0..y.len() {
        let v = -y[t] * grad[t];
        if in_up(y[t], alpha[t], c) {
            m_up = m_up.max(v);
        }
        if in_low(y[t], alpha[t], c) {
            m_low = m_low.min(v);
        }
    }
    if m_up.is_finite() && m_low.is_finite() {
        (m_up - m_low).max(0.0)
    } else {
        0.0
    }
}

/// Combined KKT residual: maximal pair violation and equality-constraint error.
fn kkt_residual(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let eq: f64 = y.iter().zip(alpha).map(|(y, a)| y * a).sum();
    let box_err = alpha
        .iter()
        .map(|&a| (-a).max(a - c).max(0.0))
        .fold(0.0, f64::max);
    violation_gap(y, alpha, grad, c).max(eq.abs()).max(box_err)
}

/// Bias from the KKT conditions: mean over free vectors, else the midpoint of the
/// feasible interval.
fn bias_from_gradient(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for i in 0..y.len() {
        let yg = y[i] * grad[i];
        if alpha[i] >= c {
            if y[i] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[i] <= 0.0 {
            if y[i] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else {
        match (lb.is_finite(), ub.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (true, false) => lb,
            (false, true) => ub,
            (false, false) => 0.0,
        }
    };
    -rho
}

fn smo(k: &DMatrix<f64>, y: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let n = y.len();
    let c = opts.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    for iter in 0..opts.max_iterations {
        // i: maximal -y G over the up set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        // j: second-order selection over the low set
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[(i_sel, i_sel)] + k[(t, t)] - 2.0 * k[(i_sel, t)]).max(TAU);
                let obj = -b * b / a;
                if obj < best_obj {
                    best_obj = obj;
                    j_sel = t;
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin <= opts.tol {
            return Ok((alpha, iter));
        }
        let (i, j) = (i_sel, j_sel);
        // move a_i += y_i t, a_j -= y_j t
        let curvature = (k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)]).max(TAU);
        let step = (-y[i] * grad[i] + y[j] * grad[j]) / curvature;
        let limit_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let limit_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let t = step.min(limit_i).min(limit_j).max(0.0);
        let old_i = alpha[i];
        let old_j = alpha[j];
        alpha[i] = if t == limit_i {
            if y[i] > 0.0 {
                c
            } else {
                0.0
            }
        } else {
            old_i + y[i] * t
        };
        alpha[j] = if t == limit_j {
            if y[j] > 0.0 {
                0.0
            } else {
                c
            }
        } else {
            old_j - y[j] * t
        };
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for s in 0..n {
            grad[s] += y[s] * (y[i] * k[(s, i)] * di + y[j] * k[(s, j)] * dj);
        }
    }
    let residual = violation_gap(y, &alpha, &grad, c);
    Err(Error::NoConvergence {
        residual,
        iterations: opts.max_iterations,
    })
}

/// Classifies each multiplier as free / at lower / at upper with threshold `eps`.
pub(crate) fn split_active(alpha: &[f64], c: f64, eps: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut free = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a <= eps {
            lower.push(i);
        } else if a >= c - eps {
            upper.push(i);
        } else {
            free.push(i);
        }
    }
    (free, lower, upper)
}

/// Solves `[Q_FF y_F; y_F^T 0] [a_F; b] = rhs` for fixed bounded sets. Returns the full
/// multiplier vector and `b`, or `None` when the system is singular.
pub(crate) fn solve_on_active_set(
    k: &DMatrix<f64>,
    y: &[f64],
    free: &[usize],
    upper: &[usize],
    c: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let f = free.len();
    let mut m = DMatrix::<f64>::zeros(f + 1, f + 1);
    let mut rhs = DVector::<f64>::zeros(f + 1);
    for (r, &i) in free.iter().enumerate() {
        for (s, &j) in free.iter().enumerate() {
            m[(r, s)] = y[i] * y[j] * k[(i, j)];
        }
        m[(r, f)] = y[i];
        m[(f, r)] = y[i];
        let bounded: f64 = upper.iter().map(|&u| y[i] * y[u] * k[(i, u)] * c).sum();
        rhs[r] = 1.0 - bounded;
    }
    rhs[f] = -c * upper.iter().map(|&u| y[u]).sum::<f64>();
    let sol = m.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut alpha = vec![0.0; n];
    for &u in upper {
        alpha[u] = c;
    }
    for (r, &i) in free.iter().enumerate() {
        alpha[i] = sol[r];
    }
    Some((alpha, sol[f]))
}

/// Re-solves the KKT system on the SMO active set; keeps the result only if it is
/// feasible and at least as optimal.
fn polish(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], c: f64) -> Option<Vec<f64>> {
    let (free, _, upper) = split_active(alpha, c, 1e-12 * c);
    if free.is_empty() {
        return None;
    }
    let (candidate, _) = solve_on_active_set(k, y, &free, &upper, c)?;
    if free.iter().any(|&i| !(candidate[i] > 0.0 && candidate[i] < c)) {
        return None;
    }
    let g_old = gradient(k, y, alpha);
    let g_new = gradient(k, y, &candidate);
    if kkt_residual(y, &candidate, &g_new, c) <= kkt_residual(y, alpha, &g_old, c) {
        Some(candidate)
    } else {
        None
    }
}

/// Global optimum by enumerating every {lower, free, upper} assignment. Test oracle for
/// [`solve_dual`]; limited to 8 points.
pub fn brute_force_dual(
    train: &LabeledPointSet,
    kernel: &KernelParams,
    c: f64,
) -> Result<SvmModel> {
    let points = train.points();
    let y = train.labels_f64();
    if points.len() > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge(points.len()));
    }
    if train.convention() != LabelConvention::SvmPm1 {
        return Err(Error::InvalidArgument(
            "SVM training set must use svm_pm1 labels".into(),
        ));
    }
    check_problem(points, &y, c)?;
    let n = points.len();
    let k = gram_matrix(points, kernel);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let total = 3usize.pow(n as u32);
    const FEAS: f64 = 1e-12;
    for code in 0..total {
        let mut free = Vec::new();
        let mut upper = Vec::new();
        let mut rest = code;
        for i in 0..n {
            match rest % 3 {
                1 => free.push(i),
                2 => upper.push(i),
                _ => {}
            }
            rest /= 3;
        }
        let alpha = if free.is_empty() {
            let eq: f64 = upper.iter().map(|&u| y[u] * c).sum();
            if eq.abs() > FEAS {
                continue;
            }
            let mut a = vec![0.0; n];
            for &u in &upper {
                a[u] = c;
            }
            a
        } else {
            let Some((mut a, _)) = solve_on_active_set(&k, &y, &free, &upper, c) else {
                continue;
            };
            if free.iter().any(|&i| a[i] < -FEAS || a[i] > c + FEAS) {
                continue;
            }
            for &i in &free {
                a[i] = a[i].clamp(0.0, c);
            }
            a
        };
        let obj = dual_objective(&k, &y, &alpha);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, alpha));
        }
    }
    let (_, alpha) = best.expect("alpha = 0 is always feasible");
    let grad = gradient(&k, &y, &alpha);
    Ok(SvmModel {
        support_points: points.to_vec(),
        bias: bias_from_gradient(&y, &alpha, &grad, c),
        kkt_residual: kkt_residual(&y, &alpha, &grad, c),
        labels: y,
        alpha,
        c,
        kernel: *kernel,
    })
}
