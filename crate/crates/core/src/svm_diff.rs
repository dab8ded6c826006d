//! Backward pass through the SVM solve.
//!
//! At a non-degenerate optimum the active set is locally constant, so the free
//! multipliers and the bias are the solution of the reduced KKT system
//!
//! ```text
//!     [ Q_FF  y_F ] [ a_F ]   [ 1 - Q_FU a_U ]
//!     [ y_F^T  0  ] [  b  ] = [  -y_U^T a_U  ]
//! ```
//!
//! Differentiating it gives `M dz = -[dQ_F: a; 0]`. With the adjoint `v = M^-1 dL/dz`
//! every contribution reduces to a weight on a kernel entry, which is then pushed
//! through the analytic kernel derivatives.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::shapes::{LabelConvention, LabeledPointSet};
use crate::svm::{self, KernelParams, SolverOptions, SvmModel};

/// Condition number above which the reduced KKT matrix is treated as singular.
pub const MAX_KKT_CONDITION: f64 = 1e12;

/// Relative error floor used by [`finite_diff_check`] for coordinates whose gradient
/// is (numerically) zero.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Partition threshold tied to the box size.
pub fn default_epsilon(c: f64) -> f64 {
    1e-6 * c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetPartition {
    pub free: Vec<usize>,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    pub epsilon: f64,
}

pub fn partition_active_set(model: &SvmModel, epsilon: f64) -> Result<ActiveSetPartition> {
    let partition = partition_unchecked(model, epsilon)?;
    if partition.free.is_empty() {
        return Err(Error::DegenerateActiveSet);
    }
    Ok(partition)
}

fn partition_unchecked(model: &SvmModel, epsilon: f64) -> Result<ActiveSetPartition> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "partition epsilon must be positive, got {epsilon}"
        )));
    }
    let (free, at_lower, at_upper) = svm::split_active(&model.alpha, model.c, epsilon);
    Ok(ActiveSetPartition {
        free,
        at_lower,
        at_upper,
        epsilon,
    })
}

/// Gradients of `sum_q upstream_q * P(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmGradients {
    pub d_support: Vec<Vec3>,
    pub d_sigma: Vec<f64>,
    /// Always set: the bias is differentiated through the reduced KKT system.
    pub d_bias_path_included: bool,
    pub d_query: Vec<Vec3>,
}

/// Kernel value and its derivatives with respect to the first argument and to sigma.
#[inline]
fn kernel_with_grads(kernel: &KernelParams, a: Vec3, b: Vec3) -> (f64, Vec3, [f64; 3]) {
    let d = geom::sub(a, b);
    match *kernel {
        KernelParams::Isotropic(s) => {
            let s2 = s * s;
            let r2 = geom::norm_sq(d);
            let k = (-r2 / (2.0 * s2)).exp();
            let da = geom::scale(d, -k / s2);
            (k, da, [k * r2 / (s2 * s), 0.0, 0.0])
        }
        KernelParams::Anisotropic(s) => {
            let k = (-(0..3).map(|j| d[j] * d[j] / (s[j] * s[j])).sum::<f64>()).exp();
            let da = std::array::from_fn(|j| -2.0 * k * d[j] / (s[j] * s[j]));
            let ds = std::array::from_fn(|j| 2.0 * k * d[j] * d[j] / (s[j] * s[j] * s[j]));
            (k, da, ds)
        }
    }
}

fn accumulate(target: &mut Vec3, grad: Vec3, weight: f64) {
    for k in 0..3 {
        target[k] += weight * grad[k];
    }
}

/// Reverse-mode gradient of `sum_q upstream_q * P(queries[q])` with respect to the
/// support points, the kernel bandwidth and the queries.
pub fn backward_discriminant(
    model: &SvmModel,
    queries: &[Vec3],
    upstream: &[f64],
    epsilon: f64,
) -> Result<SvmGradients> {
    if queries.len() != upstream.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} queries but {} upstream values",
            queries.len(),
            upstream.len()
        )));
    }
    let part = partition_active_set(model, epsilon)?;
    let n = model.len();
    let kernel = &model.kernel;
    let sigma_len = kernel.mode().sigma_len();
    let y = &model.labels;
    let alpha = &model.alpha;

    let mut d_support = vec![[0.0; 3]; n];
    let mut d_query = vec![[0.0; 3]; queries.len()];
    let mut d_sigma = [0.0; 3];

    // adjoint right-hand side: dL/da_F and dL/db
    let mut rhs = DVector::<f64>::zeros(part.free.len() + 1);
    rhs[part.free.len()] = upstream.iter().sum();

    let mut free_slot = vec![usize::MAX; n];
    for (r, &i) in part.free.iter().enumerate() {
        free_slot[i] = r;
    }

    // direct kernel terms with a and b held fixed
    for (qi, (&q, &u)) in queries.iter().zip(upstream).enumerate() {
        if u == 0.0 {
            continue;
        }
        for j in 0..n {
            let needs_value = free_slot[j] != usize::MAX;
            if alpha[j] == 0.0 && !needs_value {
                continue;
            }
            let (k, dk_dx, dk_ds) = kernel_with_grads(kernel, model.support_points[j], q);
            if needs_value {
                rhs[free_slot[j]] += u * y[j] * k;
            }
            let w = u * alpha[j] * y[j];
            if w == 0.0 {
                continue;
            }
            accumulate(&mut d_support[j], dk_dx, w);
            accumulate(&mut d_query[qi], dk_dx, -w);
            for s in 0..sigma_len {
                d_sigma[s] += w * dk_ds[s];
            }
        }
    }

    // implicit terms through the reduced KKT system
    let f = part.free.len();
    let gram = svm::gram_matrix(&model.support_points, kernel);
    let mut m = DMatrix::<f64>::zeros(f + 1, f + 1);
    for (r, &i) in part.free.iter().enumerate() {
        for (s, &j) in part.free.iter().enumerate() {
            m[(r, s)] = y[i] * y[j] * gram[(i, j)];
        }
        m[(r, f)] = y[i];
        m[(f, r)] = y[i];
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_KKT_CONDITION) {
        return Err(Error::SingularKkt { condition });
    }
    let adjoint = m.lu().solve(&rhs).ok_or(Error::SingularKkt {
        condition: f64::INFINITY,
    })?;

    // dL = -sum_{i in F} v_i sum_j a_j y_i y_j dK_ij
    for (r, &i) in part.free.iter().enumerate() {
        let vi = adjoint[r];
        if vi == 0.0 {
            continue;
        }
        for j in 0..n {
            if j == i || alpha[j] == 0.0 {
                continue;
            }
            let w = -vi * alpha[j] * y[i] * y[j];
            let (_, dk_dxi, dk_ds) =
                kernel_with_grads(kernel, model.support_points[i], model.support_points[j]);
            accumulate(&mut d_support[i], dk_dxi, w);
            accumulate(&mut d_support[j], dk_dxi, -w);
            for s in 0..sigma_len {
                d_sigma[s] += w * dk_ds[s];
            }
        }
    }

    let grads = SvmGradients {
        d_support,
        d_sigma: d_sigma[..sigma_len].to_vec(),
        d_bias_path_included: true,
        d_query,
    };
    if grads
        .d_support
        .iter()
        .chain(&grads.d_query)
        .flatten()
        .chain(&grads.d_sigma)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("SVM gradients".into()));
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckStatus {
    Ok,
    /// Some perturbation changed the active set; those coordinates are excluded.
    UnstableActiveSet,
    SingularKkt,
    DegenerateActiveSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// False when the perturbation flipped the active set.
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub status: GradCheckStatus,
    pub rows: Vec<GradCheckRow>,
    /// Maximum relative error over stable coordinates.
    pub max_rel_err: f64,
    pub worst_coordinate: Option<String>,
    /// Smallest distance of any multiplier to a bound, divided by C.
    pub active_set_margin: f64,
}

impl GradCheckReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("coordinate analytic numeric rel_err\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{} {:.12e} {:.12e} {:.3e}{}\n",
                row.coordinate,
                row.analytic,
                row.numeric,
                row.rel_err,
                if row.stable { "" } else { " unstable" }
            ));
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn same_partition(a: &ActiveSetPartition, b: &ActiveSetPartition) -> bool {
    a.free == b.free && a.at_lower == b.at_lower && a.at_upper == b.at_upper
}

/// Compares [`backward_discriminant`] against central differences over every support
/// point coordinate, sigma component and query coordinate, re-solving the dual for
/// each perturbation. Upstream weights are standard normal draws from `seed`.
pub fn finite_diff_check(
    train: &LabeledPointSet,
    kernel: &KernelParams,
    c: f64,
    queries: &[Vec3],
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if train.convention() != LabelConvention::SvmPm1 {
        return Err(Error::InvalidArgument("training set must use svm_pm1 labels".into()));
    }
    let opts = SolverOptions {
        c,
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let labels = train.labels_f64();
    let base_points = train.points().to_vec();
    let model = svm::solve_dual_points(&base_points, &labels, kernel, &opts)?;
    let eps = default_epsilon(c);
    let margin = model
        .alpha
        .iter()
        .map(|&a| a.min(c - a).abs())
        .filter(|&m| m > eps)
        .fold(f64::INFINITY, f64::min)
        / c;
    let base_part = partition_unchecked(&model, eps)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upstream: Vec<f64> = (0..queries.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();

    let grads = match backward_discriminant(&model, queries, &upstream, eps) {
        Ok(g) => g,
        Err(e) => {
            let status = match e {
                Error::SingularKkt { .. } => GradCheckStatus::SingularKkt,
                Error::DegenerateActiveSet => GradCheckStatus::DegenerateActiveSet,
                other => return Err(other),
            };
            return Ok(GradCheckReport {
                status,
                rows: Vec::new(),
                max_rel_err: f64::NAN,
                worst_coordinate: None,
                active_set_margin: margin,
            });
        }
    };

    let objective = |m: &SvmModel, qs: &[Vec3]| -> f64 {
        qs.iter()
            .zip(&upstream)
            .map(|(&q, &u)| u * m.discriminant(q))
            .sum()
    };
    // Re-solves with perturbed inputs; returns the objective and partition stability.
    let resolve = |points: &[Vec3], k: &KernelParams| -> Result<(f64, bool)> {
        let m = svm::solve_dual_points(points, &labels, k, &opts)?;
        let part = partition_unchecked(&m, eps)?;
        Ok((objective(&m, queries), same_partition(&part, &base_part)))
    };

    let axis = ['x', 'y', 'z'];
    let mut rows = Vec::new();
    for i in 0..base_points.len() {
        for k in 0..3 {
            let mut plus = base_points.clone();
            let mut minus = base_points.clone();
            plus[i][k] += h;
            minus[i][k] -= h;
            let (fp, sp) = resolve(&plus, kernel)?;
            let (fm, sm) = resolve(&minus, kernel)?;
            rows.push(make_row(
                format!("support[{i}].{}", axis[k]),
                grads.d_support[i][k],
                (fp - fm) / (2.0 * h),
                sp && sm,
            ));
        }
    }
    let sigma = kernel.sigma();
    for s in 0..sigma.len() {
        let mut plus = sigma.clone();
        let mut minus = sigma.clone();
        plus[s] += h;
        minus[s] -= h;
        let kp = KernelParams::new(kernel.mode(), &plus)?;
        let km = KernelParams::new(kernel.mode(), &minus)?;
        let (fp, sp) = resolve(&base_points, &kp)?;
        let (fm, sm) = resolve(&base_points, &km)?;
        rows.push(make_row(
            format!("sigma[{s}]"),
            grads.d_sigma[s],
            (fp - fm) / (2.0 * h),
            sp && sm,
        ));
    }
    for q in 0..queries.len() {
        for k in 0..3 {
            let mut plus = queries.to_vec();
            let mut minus = queries.to_vec();
            plus[q][k] += h;
            minus[q][k] -= h;
            let numeric = (objective(&model, &plus) - objective(&model, &minus)) / (2.0 * h);
            rows.push(make_row(
                format!("query[{q}].{}", axis[k]),
                grads.d_query[q][k],
                numeric,
                true,
            ));
        }
    }

    let mut max_rel_err = 0.0;
    let mut worst = None;
    for row in rows.iter().filter(|r| r.stable) {
        if row.rel_err > max_rel_err || worst.is_none() {
            max_rel_err = row.rel_err;
            worst = Some(row.coordinate.clone());
        }
    }
    let status = if rows.iter().all(|r| r.stable) {
        GradCheckStatus::Ok
    } else {
        GradCheckStatus::UnstableActiveSet
    };
    Ok(GradCheckReport {
        status,
        rows,
        max_rel_err,
        worst_coordinate: worst,
        active_set_margin: margin,
    })
}

fn make_row(coordinate: String, analytic: f64, numeric: f64, stable: bool) -> GradCheckRow {
    GradCheckRow {
        rel_err: relative_error(analytic, numeric),
        coordinate,
        analytic,
        numeric,
        stable,
    }
}

/// Instances whose smallest multiplier-to-bound distance (relative to C) is below this
/// are not counted by [`gradcheck_trials`]: a finite-difference step can flip them.
pub const STABLE_MARGIN: f64 = 1e-3;

/// Random `n`-point problem in the unit cube, first half labeled +1, with a random
/// isotropic or anisotropic kernel and `q` queries.
pub fn random_problem(seed: u64, n: usize, q: usize) -> Result<(LabeledPointSet, KernelParams, Vec<Vec3>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() - 0.5))
        .collect();
    let labels = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
    let kernel = if rng.random::<bool>() {
        KernelParams::Isotropic(rng.random_range(0.15..0.4))
    } else {
        KernelParams::Anisotropic(std::array::from_fn(|_| rng.random_range(0.15..0.5)))
    };
    let queries = (0..q)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() - 0.5))
        .collect();
    Ok((LabeledPointSet::new(points, labels, LabelConvention::SvmPm1)?, kernel, queries))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckTrial {
    pub seed: u64,
    pub report: GradCheckReport,
    /// Active set stable under every perturbation and away from the bounds.
    pub counted: bool,
}

/// Runs [`finite_diff_check`] on `trials` random 8-point problems with C = 1.
pub fn gradcheck_trials(seed: u64, trials: usize, h: f64) -> Result<Vec<GradCheckTrial>> {
    (0..trials as u64)
        .map(|t| {
            let s = seed.wrapping_add(t);
            let (set, kernel, queries) = random_problem(s, 8, 4)?;
            let report = finite_diff_check(&set, &kernel, 1.0, &queries, h, s)?;
            let counted = report.status == GradCheckStatus::Ok && report.active_set_margin > STABLE_MARGIN;
            Ok(GradCheckTrial {
                seed: s,
                report,
                counted,
            })
        })
        .collect()
}
