//! Meta-training: per task, generate points, embed them, fit the SVM and score the
//! occupancy of sampled test points; gradients flow through the SVM solve into all
//! network parameters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::metrics::{self, EvalOptions, MetricsReport};
use crate::nets::{self, Adam, Checkpoint, NetConfig, NetParams};
use crate::shapes::{
    make_shape, random_shape, sample_near_surface, sample_uniform, Family, ShapeOracle, ShapeSpec,
    DEFAULT_NOISE_STD,
};
use crate::surface::{self, OccupancyPredictor};
use crate::svm::{KernelMode, SolverOptions, DEFAULT_TOL};

pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_points: usize,
    pub kernel_mode: KernelMode,
    pub c: f64,
    pub batch_tasks: usize,
    pub points_uniform_per_step: usize,
    pub points_near_surface_per_step: usize,
    pub noise_std: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub use_embedding: bool,
    pub beta_per_shape: bool,
    pub checkpoint_every: usize,
    /// Per-task pool of precomputed test points; 0 resamples fresh points every step.
    pub cache_size: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_points: 32,
            kernel_mode: KernelMode::Anisotropic,
            c: 1.0,
            batch_tasks: 8,
            points_uniform_per_step: 1024,
            points_near_surface_per_step: 1024,
            noise_std: DEFAULT_NOISE_STD,
            lr: 1e-4,
            steps: 1000,
            seed: 0,
            use_embedding: true,
            beta_per_shape: false,
            checkpoint_every: 100,
            cache_size: 0,
            feature_dim: nets::FEATURE_DIM,
            hidden_dim: nets::HIDDEN_DIM,
            embed_hidden: nets::EMBED_HIDDEN,
        }
    }
}

const CONFIG_KEYS: [&str; 17] = [
    "n_points",
    "kernel",
    "c",
    "batch_tasks",
    "points_uniform_per_step",
    "points_near_surface_per_step",
    "noise_std",
    "lr",
    "steps",
    "seed",
    "use_embedding",
    "beta_per_shape",
    "checkpoint_every",
    "cache_size",
    "feature_dim",
    "hidden_dim",
    "embed_hidden",
];

impl TrainConfig {
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            n_points: self.n_points,
            kernel_mode: self.kernel_mode,
            beta_per_shape: self.beta_per_shape,
            use_embedding: self.use_embedding,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            embed_hidden: self.embed_hidden,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            c: self.c,
            tol: DEFAULT_TOL,
            ..SolverOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config().validate()?;
        let positive = [
            ("batch_tasks", self.batch_tasks),
            ("checkpoint_every", self.checkpoint_every),
            (
                "points per step",
                self.points_uniform_per_step + self.points_near_surface_per_step,
            ),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("c must be positive, got {}", self.c)));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::InvalidArgument("noise_std must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let vals = [
            self.n_points.to_string(),
            self.kernel_mode.name().to_string(),
            self.c.to_string(),
            self.batch_tasks.to_string(),
            self.points_uniform_per_step.to_string(),
            self.points_near_surface_per_step.to_string(),
            self.noise_std.to_string(),
            self.lr.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.use_embedding.to_string(),
            self.beta_per_shape.to_string(),
            self.checkpoint_every.to_string(),
            self.cache_size.to_string(),
            self.feature_dim.to_string(),
            self.hidden_dim.to_string(),
            self.embed_hidden.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(vals)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}'"))
        }
        match key {
            "n_points" => self.n_points = p(value)?,
            "kernel" => {
                self.kernel_mode = value.parse().map_err(|e: Error| e.to_string())?;
            }
            "c" => self.c = p(value)?,
            "batch_tasks" => self.batch_tasks = p(value)?,
            "points_uniform_per_step" => self.points_uniform_per_step = p(value)?,
            "points_near_surface_per_step" => self.points_near_surface_per_step = p(value)?,
            "noise_std" => self.noise_std = p(value)?,
            "lr" => self.lr = p(value)?,
            "steps" => self.steps = p(value)?,
            "seed" => self.seed = p(value)?,
            "use_embedding" => self.use_embedding = parse_flag(value)?,
            "beta_per_shape" => self.beta_per_shape = parse_flag(value)?,
            "checkpoint_every" => self.checkpoint_every = p(value)?,
            "cache_size" => self.cache_size = p(value)?,
            "feature_dim" => self.feature_dim = p(value)?,
            "hidden_dim" => self.hidden_dim = p(value)?,
            "embed_hidden" => self.embed_hidden = p(value)?,
            _ => {
                return Err(format!(
                    "unknown key '{key}' (valid keys: {})",
                    CONFIG_KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn from_kv_str(text: &str, source: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, ln + 1, format!("expected key = value, got '{line}'")))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|msg| Error::parse(source, ln + 1, msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?, path)
    }
}

fn parse_flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid flag '{v}' (expected true/false)")),
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub oracle: ShapeOracle,
}

/// Shapes with disjoint train / validation / test index lists.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub tasks: Vec<Task>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskDataset {
    /// 80 / 10 / 10 split in task order.
    pub fn from_tasks(tasks: Vec<Task>) -> Self {
        let n = tasks.len();
        let n_train = if n < 3 { n } else { (n * 8).div_ceil(10) };
        let n_val = (n - n_train) / 2;
        TaskDataset {
            train: (0..n_train).collect(),
            validation: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
            tasks,
        }
    }

    pub fn generate(family: Family, count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = (0..count)
            .map(|i| {
                Ok(Task {
                    name: format!("shape_{i:04}"),
                    oracle: make_shape(random_shape(family, &mut rng))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_tasks(tasks))
    }

    /// Every `*.shape` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "shape"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .shape files in {}",
                dir.display()
            )));
        }
        let tasks = paths
            .iter()
            .map(|p| {
                Ok(Task {
                    name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                    oracle: make_shape(ShapeSpec::load(p)?)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self::from_tasks(tasks))
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&Task> {
        idx.iter().map(|&i| &self.tasks[i]).collect()
    }
}

/// Deterministic seed derivation.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Fresh test points with occupancy labels: uniform then near-surface.
pub fn sample_test_points(
    oracle: &ShapeOracle,
    n_uniform: usize,
    n_near: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let mut pts = Vec::with_capacity(n_uniform + n_near);
    let mut ys = Vec::with_capacity(n_uniform + n_near);
    let u = sample_uniform(oracle, n_uniform, derive_seed(seed, 1, 0));
    pts.extend_from_slice(u.points());
    ys.extend(u.labels_f64());
    if n_near > 0 {
        let s = sample_near_surface(oracle, n_near, noise_std, derive_seed(seed, 2, 0))?;
        pts.extend_from_slice(s.points());
        ys.extend(s.labels_f64());
    }
    Ok((pts, ys))
}

/// `mean (sigmoid(beta P(g(x))) - y)^2` and, optionally, its gradient for every
/// parameter tensor.
pub fn loss_on_points(
    params: &NetParams,
    descriptor: &[f64],
    points: &[Vec3],
    targets: &[f64],
    opts: &SolverOptions,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    if points.len() != targets.len() || points.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} test points with {} targets",
            points.len(),
            targets.len()
        )));
    }
    let cfg = &params.config;
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let tv = nets::task_graph(&mut tape, &pv, cfg, descriptor)?;
    let q = tape.constant(Tensor::from_points(points));
    let eq = nets::embed_graph(&mut tape, &pv, q, tv.context)?;
    let labels = cfg.train_labels();
    let p = tape.svm_discriminant(tv.embedded_train, &labels, tv.sigma, eq, cfg.kernel_mode, opts)?;
    let scaled = tape.scale_by(p, tv.beta)?;
    let occ = tape.sigmoid(scaled)?;
    let y = tape.constant(Tensor::new(points.len(), 1, targets.to_vec())?);
    let diff = tape.sub(occ, y)?;
    let sq = tape.square(diff)?;
    let loss = tape.mean(sq)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("task loss".into()));
    }
    if !with_grad {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    Ok((value, Some(pv.collect(params, &grads))))
}

/// The training loss of an already solved predictor on labeled points.
pub fn occupancy_loss(pred: &OccupancyPredictor, points: &[Vec3], targets: &[f64]) -> Result<f64> {
    if points.len() != targets.len() || points.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} test points with {} targets",
            points.len(),
            targets.len()
        )));
    }
    let occ = pred.occupancy_batch(points)?;
    Ok(occ.iter().zip(targets).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() / points.len() as f64)
}

fn skip_degenerate<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| if e.is_degenerate() { Error::TaskSkipped(Box::new(e)) } else { e })
}

/// Loss of one task on a freshly sampled test batch.
pub fn forward_task(params: &NetParams, oracle: &ShapeOracle, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let (pts, ys) = sample_test_points(
        oracle,
        cfg.points_uniform_per_step,
        cfg.points_near_surface_per_step,
        cfg.noise_std,
        seed,
    )?;
    skip_degenerate(loss_on_points(params, oracle.descriptor(), &pts, &ys, &cfg.solver(), false).map(|r| r.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub skipped: usize,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,loss,skipped\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.step, r.loss, r.skipped);
    }
    out
}

pub fn parse_loss_csv(text: &str, source: &Path) -> Result<Vec<LossRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(source, ln + 1, format!("bad loss row '{line}'"));
        if f.len() != 3 {
            return Err(bad());
        }
        rows.push(LossRow {
            step: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            skipped: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub optimizer: Adam,
    pub losses: Vec<LossRow>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            step: self.losses.last().map_or(0, |r| r.step),
            meta: cfg.to_pairs(),
        }
    }
}

/// Per-task pools of test points for the cached mode.
fn build_cache(cfg: &TrainConfig, data: &TaskDataset) -> Result<Vec<Option<(Vec<Vec3>, Vec<f64>)>>> {
    if cfg.cache_size == 0 {
        return Ok(vec![None; data.tasks.len()]);
    }
    let total = cfg.points_uniform_per_step + cfg.points_near_surface_per_step;
    let n_uniform = cfg.cache_size * cfg.points_uniform_per_step / total;
    data.tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let pool = sample_test_points(
                &t.oracle,
                n_uniform,
                cfg.cache_size - n_uniform,
                cfg.noise_std,
                derive_seed(cfg.seed, 0xcac4e, i as u64),
            )?;
            Ok(Some(pool))
        })
        .collect()
}

fn step_points(
    cfg: &TrainConfig,
    task: &Task,
    cache: &Option<(Vec<Vec3>, Vec<f64>)>,
    seed: u64,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    match cache {
        None => sample_test_points(
            &task.oracle,
            cfg.points_uniform_per_step,
            cfg.points_near_surface_per_step,
            cfg.noise_std,
            seed,
        ),
        Some((pts, ys)) => {
            let want = (cfg.points_uniform_per_step + cfg.points_near_surface_per_step).min(pts.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = index::sample(&mut rng, pts.len(), want).into_vec();
            Ok((idx.iter().map(|&i| pts[i]).collect(), idx.iter().map(|&i| ys[i]).collect()))
        }
    }
}

/// Runs `cfg.steps` optimizer steps (continuing from `resume` if given). When `out_dir`
/// is set, the loss log and a checkpoint are written every `checkpoint_every` steps
/// and at the end. `progress` sees every loss row.
pub fn train(
    cfg: &TrainConfig,
    data: &TaskDataset,
    out_dir: Option<&Path>,
    resume: Option<(Checkpoint, Vec<LossRow>)>,
    progress: &mut dyn FnMut(&LossRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let (mut params, mut adam, mut losses, start) = match resume {
        Some((ck, rows)) => {
            if ck.params.config != cfg.net_config() {
                return Err(Error::InvalidArgument(
                    "checkpoint architecture does not match the config".into(),
                ));
            }
            let adam = ck.optimizer.clone().unwrap_or_else(|| Adam::new(&ck.params, cfg.lr));
            let rows: Vec<LossRow> = rows.into_iter().filter(|r| r.step <= ck.step).collect();
            (ck.params, adam, rows, ck.step)
        }
        None => {
            let p = NetParams::init(cfg.net_config(), cfg.seed)?;
            let adam = Adam::new(&p, cfg.lr);
            (p, adam, Vec::new(), 0)
        }
    };
    adam.lr = cfg.lr;
    let cache = build_cache(cfg, data)?;
    let solver = cfg.solver();

    for step in start + 1..=cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xba7c, step as u64));
        let batch: Vec<usize> = if cfg.batch_tasks >= data.train.len() {
            data.train.clone()
        } else {
            let mut picked = index::sample(&mut rng, data.train.len(), cfg.batch_tasks).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| data.train[i]).collect()
        };
        let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
            .par_iter()
            .map(|&ti| {
                let task = &data.tasks[ti];
                let seed = derive_seed(cfg.seed, step as u64, ti as u64);
                let (pts, ys) = step_points(cfg, task, &cache[ti], seed)?;
                let (loss, grads) = skip_degenerate(loss_on_points(
                    &params,
                    task.oracle.descriptor(),
                    &pts,
                    &ys,
                    &solver,
                    true,
                ))?;
                Ok((loss, grads.expect("requested")))
            })
            .collect();

        let mut total = 0.0;
        let mut count = 0usize;
        let mut skipped = 0usize;
        let mut acc: Option<Vec<Tensor>> = None;
        for (r, &ti) in results.into_iter().zip(&batch) {
            match r {
                Ok((loss, grads)) => {
                    total += loss;
                    count += 1;
                    match &mut acc {
                        None => acc = Some(grads),
                        Some(a) => {
                            for (x, g) in a.iter_mut().zip(&grads) {
                                for (xv, gv) in x.data_mut().iter_mut().zip(g.data()) {
                                    *xv += gv;
                                }
                            }
                        }
                    }
                }
                Err(Error::TaskSkipped(_)) => skipped += 1,
                Err(Error::NonFinite(what)) => {
                    return Err(Error::NonFinite(format!(
                        "{what} of task {} at step {step}",
                        data.tasks[ti].name
                    )))
                }
                Err(e) => return Err(e),
            }
        }
        let Some(mut grads) = acc else {
            return Err(Error::AllTasksSkipped { step });
        };
        let inv = 1.0 / count as f64;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        adam.step(&mut params, &grads)?;
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after step {step}")));
        }
        let row = LossRow {
            step,
            loss: total * inv,
            skipped,
        };
        losses.push(row);
        progress(&row);

        if let Some(dir) = out_dir {
            if step % cfg.checkpoint_every == 0 || step == cfg.steps {
                let outcome = TrainOutcome {
                    params: params.clone(),
                    optimizer: adam.clone(),
                    losses: Vec::new(),
                };
                let mut ck = outcome.checkpoint(cfg);
                ck.step = step;
                write_atomic(&dir.join(CHECKPOINT_FILE), &ck.to_text())?;
                write_atomic(&dir.join(LOSS_FILE), &loss_csv(&losses))?;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        optimizer: adam,
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub resolution: usize,
    pub metrics: EvalOptions,
    pub solver: SolverOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resolution: surface::DEFAULT_RESOLUTION,
            metrics: EvalOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Reconstructs every task and scores it; failures become NaN rows.
pub fn evaluate_checkpoint(params: &NetParams, tasks: &[&Task], eval: &EvalConfig) -> Vec<MetricsReport> {
    tasks
        .iter()
        .map(|task| {
            let run = || -> Result<MetricsReport> {
                let pred = OccupancyPredictor::from_descriptor(params, task.oracle.descriptor(), &eval.solver)?;
                let mesh = surface::reconstruct(&pred, eval.resolution, 0.0)?;
                metrics::evaluate(&task.name, &mesh, Some(&pred), &task.oracle, &eval.metrics)
            };
            run().unwrap_or_else(|e| {
                MetricsReport::failed(task.name.clone(), e.to_string(), eval.metrics.iou_samples, eval.metrics.seed)
            })
        })
        .collect()
}

/// Mean predictor IoU over tasks (no meshing); failed tasks count as 0.
pub fn mean_iou(params: &NetParams, tasks: &[&Task], samples: usize, seed: u64, solver: &SolverOptions) -> f64 {
    if tasks.is_empty() {
        return f64::NAN;
    }
    let total: f64 = tasks
        .iter()
        .map(|t| {
            OccupancyPredictor::from_descriptor(params, t.oracle.descriptor(), solver)
                .and_then(|p| metrics::volumetric_iou(&p, &t.oracle, samples, seed))
                .unwrap_or(0.0)
        })
        .sum();
    total / tasks.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole parameter vector.
    pub rel_err: f64,
    /// Worst per-coordinate relative error among coordinates with a non-negligible gradient.
    pub max_coord_rel_err: f64,
    pub coordinates: usize,
}

/// Compares the full parameter gradient of a tiny frozen task against central
/// differences of the loss.
pub fn end_to_end_gradcheck(seed: u64, h: f64) -> Result<EndToEndCheck> {
    let cfg = NetConfig {
        n_points: 8,
        kernel_mode: KernelMode::Anisotropic,
        beta_per_shape: false,
        use_embedding: true,
        feature_dim: 6,
        hidden_dim: 6,
        embed_hidden: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let solver = SolverOptions::default();
    // Redraw instances whose generated set has no free support vector.
    let mut attempt = 0;
    let (params, desc, pts, ys, grads) = loop {
        let oracle = make_shape(random_shape(Family::EllipsoidBox, &mut rng))?;
        let params = NetParams::init(cfg, rng.random())?;
        let (pts, ys) = sample_test_points(&oracle, 16, 16, DEFAULT_NOISE_STD, rng.random())?;
        let desc = oracle.descriptor().to_vec();
        match loss_on_points(&params, &desc, &pts, &ys, &solver, true) {
            Ok((_, g)) => break (params, desc, pts, ys, g.expect("requested")),
            Err(e) if e.is_degenerate() && attempt < 20 => attempt += 1,
            Err(e) => return Err(e),
        }
    };

    let mut diff_sq = 0.0;
    let mut a_sq = 0.0;
    let mut n_sq = 0.0;
    let mut max_coord: f64 = 0.0;
    let mut coords = 0;
    let gmax = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for ti in 0..params.tensors().len() {
        if !params.is_trainable(ti) {
            continue;
        }
        for k in 0..params.tensors()[ti].data().len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let mut t = p.tensors()[ti].clone();
                t.data_mut()[k] += delta;
                p.set_tensor(ti, t)?;
                Ok(loss_on_points(&p, &desc, &pts, &ys, &solver, false)?.0)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let analytic = grads[ti].data()[k];
            diff_sq += (analytic - numeric).powi(2);
            a_sq += analytic * analytic;
            n_sq += numeric * numeric;
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-3 * gmax {
                max_coord = max_coord.max((analytic - numeric).abs() / scale);
            }
            coords += 1;
        }
    }
    Ok(EndToEndCheck {
        rel_err: diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(f64::MIN_POSITIVE),
        max_coord_rel_err: max_coord,
        coordinates: coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{Primitive, ShapeSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            n_points: 8,
            batch_tasks: 2,
            points_uniform_per_step: 32,
            points_near_surface_per_step: 32,
            steps: 3,
            lr: 1e-3,
            feature_dim: 16,
            hidden_dim: 16,
            embed_hidden: 8,
            ..TrainConfig::default()
        }
    }

    fn sphere() -> ShapeOracle {
        make_shape(ShapeSpec::Primitive(Primitive::Sphere {
            center: [0.0; 3],
            radius: 0.3,
        }))
        .unwrap()
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = TrainConfig {
            kernel_mode: KernelMode::Isotropic,
            use_embedding: false,
            lr: 3e-4,
            ..TrainConfig::default()
        };
        let text = cfg.to_kv_string();
        assert_eq!(TrainConfig::from_kv_str(&text, Path::new("c")).unwrap(), cfg);
        let err = TrainConfig::from_kv_str("bogus = 1\n", Path::new("c")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("points_uniform_per_step"));
        assert!(TrainConfig::from_kv_str("lr = -1\n", Path::new("c")).is_err());
        let with_comment = TrainConfig::from_kv_str("# hi\nsteps = 5 # five\n", Path::new("c")).unwrap();
        assert_eq!(with_comment.steps, 5);
    }

    #[test]
    fn dataset_splits_are_disjoint() {
        let d = TaskDataset::generate(Family::EllipsoidBox, 20, 1).unwrap();
        assert_eq!((d.train.len(), d.validation.len(), d.test.len()), (16, 2, 2));
        let mut all: Vec<usize> = d.train.iter().chain(&d.validation).chain(&d.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let again = TaskDataset::generate(Family::EllipsoidBox, 20, 1).unwrap();
        for (a, b) in d.tasks.iter().zip(&again.tasks) {
            assert_eq!(a.oracle.spec(), b.oracle.spec());
        }
    }

    #[test]
    fn loss_is_bounded_and_beta_limit() {
        let cfg = tiny_cfg();
        let p = NetParams::init(cfg.net_config(), 0).unwrap();
        let loss = forward_task(&p, &sphere(), &cfg, 3).unwrap();
        assert!((0.0..=1.0).contains(&loss));

        let mut small_beta = p.clone();
        let last = small_beta.tensors().len() - 1;
        small_beta.set_tensor(last, Tensor::scalar(-60.0)).unwrap();
        let (pts, ys) = sample_test_points(&sphere(), 64, 64, DEFAULT_NOISE_STD, 5).unwrap();
        let (l, _) = loss_on_points(&small_beta, sphere().descriptor(), &pts, &ys, &cfg.solver(), false).unwrap();
        let expected = ys.iter().map(|y| (0.5 - y) * (0.5 - y)).sum::<f64>() / ys.len() as f64;
        assert!((l - expected).abs() < 1e-12);
        assert!((expected - 0.25).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let cfg = tiny_cfg();
        let data = TaskDataset::generate(Family::Sphere, 4, 2).unwrap();
        let a = train(&cfg, &data, None, None, &mut |_| {}).unwrap();
        let b = train(&cfg, &data, None, None, &mut |_| {}).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses.len(), 3);

        let short = TrainConfig { steps: 1, ..cfg.clone() };
        let first = train(&short, &data, None, None, &mut |_| {}).unwrap();
        let ck = first.checkpoint(&short);
        let resumed = train(&cfg, &data, None, Some((ck, first.losses.clone())), &mut |_| {}).unwrap();
        assert_eq!(resumed.losses, a.losses);
        assert_eq!(resumed.params, a.params);
    }

    #[test]
    fn checkpoint_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { checkpoint_every: 2, ..tiny_cfg() };
        let data = TaskDataset::generate(Family::Sphere, 3, 2).unwrap();
        let out = train(&cfg, &data, Some(dir.path()), None, &mut |_| {}).unwrap();
        let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ck.step, 3);
        assert_eq!(ck.params, out.params);
        let rows = parse_loss_csv(
            &std::fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap(),
            Path::new("l"),
        )
        .unwrap();
        assert_eq!(rows, out.losses);
    }

    #[test]
    fn cached_mode_runs() {
        let cfg = TrainConfig { cache_size: 200, ..tiny_cfg() };
        let data = TaskDataset::generate(Family::Sphere, 2, 2).unwrap();
        let out = train(&cfg, &data, None, None, &mut |_| {}).unwrap();
        assert!(out.losses.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn embedding_off_keeps_embedding_frozen() {
        let cfg = TrainConfig { use_embedding: false, ..tiny_cfg() };
        let data = TaskDataset::generate(Family::Sphere, 2, 2).unwrap();
        let out = train(&cfg, &data, None, None, &mut |_| {}).unwrap();
        let init = NetParams::init(cfg.net_config(), cfg.seed).unwrap();
        for i in 0..init.tensors().len() {
            if !init.is_trainable(i) {
                assert_eq!(init.tensors()[i], out.params.tensors()[i]);
            }
        }
    }

    #[test]
    fn end_to_end_gradient_matches() {
        for seed in 0..3 {
            let r = end_to_end_gradcheck(seed, 1e-6).unwrap();
            assert!(r.rel_err < 1e-3, "seed {seed}: {r:?}");
        }
    }
}
