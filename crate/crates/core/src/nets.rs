//! Feature, point-generator and embedding networks plus the learned scale beta.
//!
//! Parameters live in one ordered list of tensors so the optimizer and the
//! checkpoint writer can treat them uniformly.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softplus_inverse, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::shapes::DESCRIPTOR_LEN;
use crate::svm::{KernelMode, KernelParams, SolverOptions, SvmModel, SIGMA_FLOOR};
use crate::svm_diff;

pub const FEATURE_DIM: usize = 256;
pub const HIDDEN_DIM: usize = 256;
pub const EMBED_HIDDEN: usize = 128;
pub const INITIAL_BETA: f64 = 5.0;
pub const INITIAL_SIGMA: f64 = 0.25;
/// Range of the initial point-head biases; tanh(1.5) / 2 covers most of the cube.
pub const POINT_BIAS_RANGE: f64 = 1.5;
/// Point-head bias redraws allowed before init gives up on a non-degenerate SVM.
pub const MAX_INIT_DRAWS: usize = 100;
/// Range of the initial biases of the inside-labeled points, which start nearer the centre.
pub const INSIDE_BIAS_RANGE: f64 = 0.9;

const CHECKPOINT_HEADER: &str = "svmshape-checkpoint v1";

/// Architecture choices that are fixed for the lifetime of a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub n_points: usize,
    pub kernel_mode: KernelMode,
    pub beta_per_shape: bool,
    pub use_embedding: bool,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_points: 32,
            kernel_mode: KernelMode::Anisotropic,
            beta_per_shape: false,
            use_embedding: true,
            feature_dim: FEATURE_DIM,
            hidden_dim: HIDDEN_DIM,
            embed_hidden: EMBED_HIDDEN,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 || self.n_points % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_points must be even and at least 2, got {}",
                self.n_points
            )));
        }
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.embed_hidden == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the point-generator output layer.
    pub fn head_len(&self) -> usize {
        3 * self.n_points + self.kernel_mode.sigma_len() + usize::from(self.beta_per_shape)
    }

    fn shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (f, h, e) = (self.feature_dim, self.hidden_dim, self.embed_hidden);
        vec![
            ("feature.0.w", DESCRIPTOR_LEN, h),
            ("feature.0.b", 1, h),
            ("feature.1.w", h, f),
            ("feature.1.b", 1, f),
            ("pointgen.0.w", f, h),
            ("pointgen.0.b", 1, h),
            ("pointgen.1.w", h, self.head_len()),
            ("pointgen.1.b", 1, self.head_len()),
            ("embed.0.wx", 3, e),
            ("embed.0.wl", f, e),
            ("embed.0.b", 1, e),
            ("embed.1.w", e, e),
            ("embed.1.b", 1, e),
            ("embed.2.w", e, 3),
            ("embed.2.b", 1, 3),
            ("beta_raw", 1, 1),
        ]
    }

    /// Labels of the generated points: first half inside, second half outside.
    pub fn train_labels(&self) -> Vec<f64> {
        (0..self.n_points)
            .map(|i| if i < self.n_points / 2 { 1.0 } else { -1.0 })
            .collect()
    }
}

// indices into NetParams::tensors
const FEAT0_W: usize = 0;
const FEAT0_B: usize = 1;
const FEAT1_W: usize = 2;
const FEAT1_B: usize = 3;
const PG0_W: usize = 4;
const PG0_B: usize = 5;
const PG1_W: usize = 6;
const PG1_B: usize = 7;
const EMB0_WX: usize = 8;
const EMB0_WL: usize = 9;
const EMB0_B: usize = 10;
const EMB1_W: usize = 11;
const EMB1_B: usize = 12;
const EMB2_W: usize = 13;
const EMB2_B: usize = 14;
const BETA_RAW: usize = 15;
const EMBED_RANGE: std::ops::Range<usize> = EMB0_WX..BETA_RAW;

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    tensors: Vec<Tensor>,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(rows, cols, data).expect("sized by construction")
}

impl NetParams {
    /// Random initialization. Outside points start spread over the cube and inside
    /// points in a smaller central region, sigma near
    /// [`INITIAL_SIGMA`], beta near [`INITIAL_BETA`]; the embedding starts close to the
    /// identity and is exactly the identity when it is disabled. The point biases are
    /// redrawn until the SVM of the zero descriptor has a free support vector.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.shapes();
        let mut tensors = Vec::with_capacity(shapes.len());
        for (i, &(_, rows, cols)) in shapes.iter().enumerate() {
            let t = match i {
                FEAT0_W | FEAT1_W | PG0_W | EMB1_W => {
                    uniform_tensor(&mut rng, rows, cols, (6.0 / rows as f64).sqrt())
                }
                EMB0_WX | EMB0_WL => {
                    uniform_tensor(&mut rng, rows, cols, (6.0 / (3 + config.feature_dim) as f64).sqrt())
                }
                PG1_W | EMB2_W => uniform_tensor(&mut rng, rows, cols, 0.1 / (rows as f64).sqrt()),
                PG1_B => {
                    let mut b = uniform_tensor(&mut rng, rows, cols, POINT_BIAS_RANGE);
                    let n3 = 3 * config.n_points;
                    for v in &mut b.data_mut()[..3 * (config.n_points / 2)] {
                        *v *= INSIDE_BIAS_RANGE / POINT_BIAS_RANGE;
                    }
                    let sigma_raw = softplus_inverse(INITIAL_SIGMA - SIGMA_FLOOR);
                    for v in &mut b.data_mut()[n3..n3 + config.kernel_mode.sigma_len()] {
                        *v = sigma_raw;
                    }
                    if config.beta_per_shape {
                        b.data_mut()[cols - 1] = softplus_inverse(INITIAL_BETA);
                    }
                    b
                }
                BETA_RAW => Tensor::scalar(softplus_inverse(INITIAL_BETA)),
                _ => Tensor::zeros(rows, cols),
            };
            tensors.push(t);
        }
        let mut p = NetParams { config, tensors };
        if !config.use_embedding {
            p.zero_embedding();
        }
        for _ in 0..MAX_INIT_DRAWS {
            if p.has_free_support_vector()? {
                return Ok(p);
            }
            let inside = 3 * (config.n_points / 2);
            for (j, v) in p.tensors[PG1_B].data_mut()[..3 * config.n_points].iter_mut().enumerate() {
                let range = if j < inside { INSIDE_BIAS_RANGE } else { POINT_BIAS_RANGE };
                *v = rng.random_range(-range..range);
            }
        }
        Err(Error::DegenerateActiveSet)
    }

    fn has_free_support_vector(&self) -> Result<bool> {
        let model = TaskForward::from_descriptor(self, &[0.0; DESCRIPTOR_LEN])?.solve(&SolverOptions::default())?;
        match svm_diff::partition_active_set(&model, svm_diff::default_epsilon(model.c)) {
            Ok(_) => Ok(true),
            Err(Error::DegenerateActiveSet) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn zero_embedding(&mut self) {
        for t in &mut self.tensors[EMBED_RANGE] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.config.shapes().into_iter().map(|s| s.0).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    /// Whether the optimizer updates tensor `i`.
    pub fn is_trainable(&self, i: usize) -> bool {
        if EMBED_RANGE.contains(&i) {
            return self.config.use_embedding;
        }
        if i == BETA_RAW {
            return !self.config.beta_per_shape;
        }
        true
    }

    /// Applies `f(index, tensor)` to every trainable tensor.
    pub fn for_each_trainable_mut(&mut self, mut f: impl FnMut(usize, &mut Tensor)) {
        for i in 0..self.tensors.len() {
            if self.is_trainable(i) {
                f(i, &mut self.tensors[i]);
            }
        }
    }

    pub fn set_tensor(&mut self, i: usize, t: Tensor) -> Result<()> {
        if self.tensors[i].shape() != t.shape() {
            return Err(Error::ShapeMismatch(format!("replacing parameter {i}")));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn global_beta(&self) -> f64 {
        crate::autodiff::softplus(self.tensors[BETA_RAW].item())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    /// Records every tensor on `tape`; frozen tensors become constants.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if self.is_trainable(i) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars { vars }
    }
}

/// Tape handles for every parameter tensor, in [`NetParams`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Per-tensor gradients, zero where none flowed.
    pub fn collect(&self, params: &NetParams, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(v, t)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
            })
            .collect()
    }
}

/// `x W + b` for a batch `x`.
fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let xw = tape.matmul(x, w)?;
    let bias = if rows == 1 {
        b
    } else {
        let ones = tape.constant(Tensor::filled(rows, 1, 1.0));
        tape.matmul(ones, b)?
    };
    tape.add(xw, bias)
}

/// Rows repeated `rows` times of the `1 x k` node `v`.
fn broadcast_rows(tape: &mut Tape, v: Var, rows: usize) -> Result<Var> {
    if rows == 1 {
        return Ok(v);
    }
    let ones = tape.constant(Tensor::filled(rows, 1, 1.0));
    tape.matmul(ones, v)
}

pub fn feature_graph(tape: &mut Tape, pv: &ParamVars, descriptor: Var) -> Result<Var> {
    let h = dense(tape, descriptor, pv.var(FEAT0_W), pv.var(FEAT0_B))?;
    let h = tape.relu(h)?;
    dense(tape, h, pv.var(FEAT1_W), pv.var(FEAT1_B))
}

/// Point-generator outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PointGenVars {
    pub points: Var,
    pub sigma: Var,
    pub beta: Var,
}

pub fn pointgen_graph(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    lambda: Var,
) -> Result<PointGenVars> {
    let h = dense(tape, lambda, pv.var(PG0_W), pv.var(PG0_B))?;
    let h = tape.relu(h)?;
    let head = dense(tape, h, pv.var(PG1_W), pv.var(PG1_B))?;
    let n3 = 3 * config.n_points;
    let raw = tape.slice_cols(head, 0, n3)?;
    let squashed = tape.tanh(raw)?;
    let half = tape.scale(squashed, 0.5)?;
    let points = tape.reshape(half, config.n_points, 3)?;
    let sl = config.kernel_mode.sigma_len();
    let s_raw = tape.slice_cols(head, n3, sl)?;
    let s = tape.softplus(s_raw)?;
    let sigma = tape.offset(s, SIGMA_FLOOR)?;
    let beta_raw = if config.beta_per_shape {
        tape.slice_cols(head, n3 + sl, 1)?
    } else {
        pv.var(BETA_RAW)
    };
    let beta = tape.softplus(beta_raw)?;
    Ok(PointGenVars {
        points,
        sigma,
        beta,
    })
}

/// Part of the first embedding layer that depends only on lambda: `lambda W_l + b`.
pub fn embed_context(tape: &mut Tape, pv: &ParamVars, lambda: Var) -> Result<Var> {
    dense(tape, lambda, pv.var(EMB0_WL), pv.var(EMB0_B))
}

/// `x + mlp(x, lambda)` for an `n x 3` batch.
pub fn embed_graph(tape: &mut Tape, pv: &ParamVars, x: Var, context: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let xw = tape.matmul(x, pv.var(EMB0_WX))?;
    let ctx = broadcast_rows(tape, context, rows)?;
    let h = tape.add(xw, ctx)?;
    let h = tape.relu(h)?;
    let h = dense(tape, h, pv.var(EMB1_W), pv.var(EMB1_B))?;
    let h = tape.relu(h)?;
    let d = dense(tape, h, pv.var(EMB2_W), pv.var(EMB2_B))?;
    tape.add(x, d)
}

/// Everything generated for one task, on the tape.
#[derive(Debug, Clone, Copy)]
pub struct TaskVars {
    pub lambda: Var,
    pub points: Var,
    pub sigma: Var,
    pub beta: Var,
    pub context: Var,
    pub embedded_train: Var,
}

pub fn task_graph_from_lambda(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    lambda: Var,
) -> Result<TaskVars> {
    let pg = pointgen_graph(tape, pv, config, lambda)?;
    let context = embed_context(tape, pv, lambda)?;
    let embedded_train = embed_graph(tape, pv, pg.points, context)?;
    Ok(TaskVars {
        lambda,
        points: pg.points,
        sigma: pg.sigma,
        beta: pg.beta,
        context,
        embedded_train,
    })
}

pub fn task_graph(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    descriptor: &[f64],
) -> Result<TaskVars> {
    let d = descriptor_tensor(descriptor)?;
    let dv = tape.constant(d);
    let lambda = feature_graph(tape, pv, dv)?;
    task_graph_from_lambda(tape, pv, config, lambda)
}

fn descriptor_tensor(descriptor: &[f64]) -> Result<Tensor> {
    if descriptor.len() != DESCRIPTOR_LEN {
        return Err(Error::ShapeMismatch(format!(
            "descriptor of length {}, expected {DESCRIPTOR_LEN}",
            descriptor.len()
        )));
    }
    if descriptor.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("descriptor".into()));
    }
    Ok(Tensor::row(descriptor.to_vec()))
}

pub fn feature_forward(p: &NetParams, descriptor: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pv = p.register(&mut tape);
    let dv = tape.constant(descriptor_tensor(descriptor)?);
    let lambda = feature_graph(&mut tape, &pv, dv)?;
    Ok(tape.value(lambda).data().to_vec())
}

fn lambda_const(tape: &mut Tape, p: &NetParams, lambda: &[f64]) -> Result<Var> {
    if lambda.len() != p.config.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "feature vector of length {}, expected {}",
            lambda.len(),
            p.config.feature_dim
        )));
    }
    Ok(tape.constant(Tensor::row(lambda.to_vec())))
}

/// Generated training set for a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGenOutput {
    pub points: Vec<Vec3>,
    pub labels: Vec<f64>,
    pub sigma: KernelParams,
    pub beta: f64,
}

pub fn pointgen_forward(p: &NetParams, lambda: &[f64]) -> Result<PointGenOutput> {
    let mut tape = Tape::new();
    let pv = p.register(&mut tape);
    let lv = lambda_const(&mut tape, p, lambda)?;
    let pg = pointgen_graph(&mut tape, &pv, &p.config, lv)?;
    Ok(PointGenOutput {
        points: tape.value(pg.points).to_points(),
        labels: p.config.train_labels(),
        sigma: KernelParams::new(p.config.kernel_mode, tape.value(pg.sigma).data())?,
        beta: tape.value(pg.beta).item(),
    })
}

/// Embeds a batch of points.
pub fn embed_forward(p: &NetParams, xs: &[Vec3], lambda: &[f64]) -> Result<Vec<Vec3>> {
    let mut tape = Tape::new();
    let pv = p.register(&mut tape);
    let lv = lambda_const(&mut tape, p, lambda)?;
    let ctx = embed_context(&mut tape, &pv, lv)?;
    let x = tape.constant(Tensor::from_points(xs));
    let e = embed_graph(&mut tape, &pv, x, ctx)?;
    Ok(tape.value(e).to_points())
}

pub fn interpolate_features(l1: &[f64], l2: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation parameter must lie in [0, 1], got {t}"
        )));
    }
    if l1.len() != l2.len() {
        return Err(Error::ShapeMismatch(format!(
            "feature vectors of length {} and {}",
            l1.len(),
            l2.len()
        )));
    }
    Ok(l1.iter().zip(l2).map(|(a, b)| a + t * (b - a)).collect())
}

/// Concrete per-task outputs of the whole generator pipeline.
#[derive(Debug, Clone)]
pub struct TaskForward {
    pub lambda: Vec<f64>,
    pub train_points: Vec<Vec3>,
    pub train_labels: Vec<f64>,
    pub sigma: KernelParams,
    pub beta: f64,
    pub embedded_train: Vec<Vec3>,
    context: Vec<f64>,
}

impl TaskForward {
    pub fn from_descriptor(p: &NetParams, descriptor: &[f64]) -> Result<Self> {
        let lambda = feature_forward(p, descriptor)?;
        Self::from_lambda(p, &lambda)
    }

    pub fn from_lambda(p: &NetParams, lambda: &[f64]) -> Result<Self> {
        let mut tape = Tape::new();
        let pv = p.register(&mut tape);
        let lv = lambda_const(&mut tape, p, lambda)?;
        let tv = task_graph_from_lambda(&mut tape, &pv, &p.config, lv)?;
        Ok(TaskForward {
            lambda: lambda.to_vec(),
            train_points: tape.value(tv.points).to_points(),
            train_labels: p.config.train_labels(),
            sigma: KernelParams::new(p.config.kernel_mode, tape.value(tv.sigma).data())?,
            beta: tape.value(tv.beta).item(),
            embedded_train: tape.value(tv.embedded_train).to_points(),
            context: tape.value(tv.context).data().to_vec(),
        })
    }

    /// Solves the inner SVM on the embedded generated points.
    pub fn solve(&self, opts: &SolverOptions) -> Result<SvmModel> {
        crate::svm::solve_dual_points(&self.embedded_train, &self.train_labels, &self.sigma, opts)
    }

    /// Embeds query points (in chunks to bound memory).
    pub fn embed(&self, p: &NetParams, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        if !p.config.use_embedding {
            return Ok(xs.to_vec());
        }
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(4096) {
            let mut tape = Tape::new();
            let pv = p.register(&mut tape);
            let ctx = tape.constant(Tensor::row(self.context.clone()));
            let x = tape.constant(Tensor::from_points(chunk));
            let e = embed_graph(&mut tape, &pv, x, ctx)?;
            out.extend(tape.value(e).to_points());
        }
        Ok(out)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut NetParams, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.tensors().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.tensors().len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        params.for_each_trainable_mut(|i, w| {
            let g = grads[i].data();
            let m = m_all[i].data_mut();
            let v = v_all[i].data_mut();
            for (k, wk) in w.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *wk -= lr * mh / (vh.sqrt() + eps);
            }
        });
        Ok(())
    }
}

/// Parameters, optimizer state and free-form metadata (training config, step).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub optimizer: Option<Adam>,
    pub step: usize,
    pub meta: Vec<(String, String)>,
}

fn write_tensor(out: &mut String, tag: &str, name: &str, t: &Tensor) {
    let _ = writeln!(out, "{tag} {name} {} {}", t.rows(), t.cols());
    for r in 0..t.rows() {
        let row: Vec<String> = (0..t.cols()).map(|c| format!("{}", t.get(r, c))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.params.config;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        let _ = writeln!(out, "n_points={}", c.n_points);
        let _ = writeln!(out, "kernel={}", c.kernel_mode.name());
        let _ = writeln!(out, "beta_per_shape={}", c.beta_per_shape);
        let _ = writeln!(out, "use_embedding={}", c.use_embedding);
        let _ = writeln!(out, "feature_dim={}", c.feature_dim);
        let _ = writeln!(out, "hidden_dim={}", c.hidden_dim);
        let _ = writeln!(out, "embed_hidden={}", c.embed_hidden);
        let _ = writeln!(out, "beta={}", self.params.global_beta());
        let _ = writeln!(out, "step={}", self.step);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        if let Some(adam) = &self.optimizer {
            let _ = writeln!(
                out,
                "adam lr={} beta1={} beta2={} eps={} t={}",
                adam.lr, adam.beta1, adam.beta2, adam.eps, adam.t
            );
        }
        let names = self.params.names();
        for (name, t) in names.iter().zip(self.params.tensors()) {
            write_tensor(&mut out, "tensor", name, t);
        }
        if let Some(adam) = &self.optimizer {
            for (name, t) in names.iter().zip(&adam.m) {
                write_tensor(&mut out, "adam_m", name, t);
            }
            for (name, t) in names.iter().zip(&adam.v) {
                write_tensor(&mut out, "adam_v", name, t);
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let err = |line: usize, msg: String| Error::parse(path, line + 1, msg);
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            _ => return Err(err(0, format!("expected header '{CHECKPOINT_HEADER}'"))),
        }
        let mut config = NetConfig::default();
        let mut step = 0;
        let mut meta = Vec::new();
        let mut adam_hdr: Option<(f64, f64, f64, f64, u64)> = None;
        let mut blocks: Vec<(usize, String, String, Tensor)> = Vec::new();

        while let Some((ln, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("adam ") {
                let mut vals = [0.0; 4];
                let mut t = 0;
                for field in rest.split_whitespace() {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| err(ln, format!("bad optimizer field '{field}'")))?;
                    let slot = match k {
                        "lr" => 0,
                        "beta1" => 1,
                        "beta2" => 2,
                        "eps" => 3,
                        "t" => {
                            t = v.parse().map_err(|_| err(ln, format!("bad t '{v}'")))?;
                            continue;
                        }
                        _ => return Err(err(ln, format!("unknown optimizer field '{k}'"))),
                    };
                    vals[slot] = v.parse().map_err(|_| err(ln, format!("bad number '{v}'")))?;
                }
                adam_hdr = Some((vals[0], vals[1], vals[2], vals[3], t));
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if matches!(words.first(), Some(&"tensor" | &"adam_m" | &"adam_v")) {
                if words.len() != 4 {
                    return Err(err(ln, "tensor header needs tag, name, rows, cols".into()));
                }
                let rows: usize = words[2].parse().map_err(|_| err(ln, "bad row count".into()))?;
                let cols: usize = words[3].parse().map_err(|_| err(ln, "bad column count".into()))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rl, row) = lines
                        .next()
                        .ok_or_else(|| err(ln, format!("tensor {} truncated", words[1])))?;
                    let before = data.len();
                    for tok in row.split_whitespace() {
                        let v: f64 = tok.parse().map_err(|_| err(rl, format!("bad number '{tok}'")))?;
                        if !v.is_finite() {
                            return Err(err(rl, "non-finite weight".into()));
                        }
                        data.push(v);
                    }
                    if data.len() - before != cols {
                        return Err(err(rl, format!("expected {cols} values")));
                    }
                }
                let t = Tensor::new(rows, cols, data)?;
                blocks.push((ln, words[0].to_string(), words[1].to_string(), t));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(ln, format!("expected key=value, got '{line}'")))?;
            let bad = |what: &str| err(ln, format!("bad {what} '{v}'"));
            match k {
                "n_points" => config.n_points = v.parse().map_err(|_| bad("n_points"))?,
                "kernel" => config.kernel_mode = v.parse().map_err(|_| bad("kernel"))?,
                "beta_per_shape" => config.beta_per_shape = v.parse().map_err(|_| bad("flag"))?,
                "use_embedding" => config.use_embedding = v.parse().map_err(|_| bad("flag"))?,
                "feature_dim" => config.feature_dim = v.parse().map_err(|_| bad("width"))?,
                "hidden_dim" => config.hidden_dim = v.parse().map_err(|_| bad("width"))?,
                "embed_hidden" => config.embed_hidden = v.parse().map_err(|_| bad("width"))?,
                "step" => step = v.parse().map_err(|_| bad("step"))?,
                "beta" => {}
                _ => match k.strip_prefix("meta.") {
                    Some(mk) => meta.push((mk.to_string(), v.to_string())),
                    None => return Err(err(ln, format!("unknown key '{k}'"))),
                },
            }
        }
        config.validate().map_err(|e| err(0, e.to_string()))?;

        let shapes = config.shapes();
        let collect = |tag: &str| -> Result<Option<Vec<Tensor>>> {
            let found: Vec<_> = blocks.iter().filter(|b| b.1 == tag).collect();
            if found.is_empty() {
                return Ok(None);
            }
            if found.len() != shapes.len() {
                return Err(err(0, format!("expected {} {tag} blocks, found {}", shapes.len(), found.len())));
            }
            let mut out = Vec::with_capacity(shapes.len());
            for (b, &(name, rows, cols)) in found.iter().zip(&shapes) {
                if b.2 != name || b.3.shape() != (rows, cols) {
                    return Err(err(
                        b.0,
                        format!("expected {tag} {name} {rows}x{cols}, found {} {}x{}", b.2, b.3.rows(), b.3.cols()),
                    ));
                }
                out.push(b.3.clone());
            }
            Ok(Some(out))
        };
        let tensors = collect("tensor")?.ok_or_else(|| err(0, "no parameter tensors".into()))?;
        let params = NetParams { config, tensors };
        let optimizer = match (adam_hdr, collect("adam_m")?, collect("adam_v")?) {
            (Some((lr, beta1, beta2, eps, t)), Some(m), Some(v)) => Some(Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            }),
            (None, None, None) => None,
            _ => return Err(err(0, "incomplete optimizer state".into())),
        };
        Ok(Checkpoint {
            params,
            optimizer,
            step,
            meta,
        })
    }
}
