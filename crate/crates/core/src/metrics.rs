//! Volumetric IoU, Chamfer-L1 and F-score.

use std::fmt::Write as _;

use kiddo::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::shapes::{uniform_points, ShapeOracle};
use crate::surface::{Mesh, OccupancyPredictor};

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const MIN_IOU_SAMPLES: usize = 1000;
pub const DEFAULT_FSCORE_D: f64 = 0.02;

/// Anything that can classify points as inside.
pub trait InsideTest: Sync {
    fn inside_batch(&self, pts: &[Vec3]) -> Result<Vec<bool>>;
}

impl InsideTest for ShapeOracle {
    fn inside_batch(&self, pts: &[Vec3]) -> Result<Vec<bool>> {
        Ok(pts.iter().map(|&p| self.is_inside(p)).collect())
    }
}

/// Occupancy >= 0.5, i.e. discriminant >= 0.
impl InsideTest for OccupancyPredictor {
    fn inside_batch(&self, pts: &[Vec3]) -> Result<Vec<bool>> {
        Ok(self.discriminant_batch(pts)?.into_iter().map(|p| p >= 0.0).collect())
    }
}

/// Anything that can produce area-uniform surface samples.
pub trait SurfaceSampler {
    fn surface_samples(&self, count: usize, seed: u64) -> Result<Vec<Vec3>>;
}

impl SurfaceSampler for ShapeOracle {
    fn surface_samples(&self, count: usize, seed: u64) -> Result<Vec<Vec3>> {
        self.sample_surface(count, seed)
    }
}

impl SurfaceSampler for Mesh {
    fn surface_samples(&self, count: usize, seed: u64) -> Result<Vec<Vec3>> {
        self.sample_surface(count, seed)
    }
}

const RAY_BINS: usize = 64;

/// Ray-parity insideness for a closed triangle mesh: one ray along each axis,
/// majority vote. Triangles are binned by their projection for each axis.
#[derive(Debug, Clone)]
pub struct MeshInside {
    mesh: Mesh,
    lo: Vec3,
    hi: Vec3,
    bins: [Vec<Vec<u32>>; 3],
}

impl MeshInside {
    pub fn new(mesh: Mesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &mesh.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let mut bins: [Vec<Vec<u32>>; 3] = std::array::from_fn(|_| vec![Vec::new(); RAY_BINS * RAY_BINS]);
        for axis in 0..3 {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            for t in 0..mesh.triangles.len() {
                let tri = mesh.triangle(t);
                let (mut umin, mut umax, mut wmin, mut wmax) =
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                for p in &tri {
                    umin = umin.min(p[u]);
                    umax = umax.max(p[u]);
                    wmin = wmin.min(p[w]);
                    wmax = wmax.max(p[w]);
                }
                let (bu0, bu1) = (bin_of(umin, lo[u], hi[u]), bin_of(umax, lo[u], hi[u]));
                let (bw0, bw1) = (bin_of(wmin, lo[w], hi[w]), bin_of(wmax, lo[w], hi[w]));
                for bu in bu0..=bu1 {
                    for bw in bw0..=bw1 {
                        bins[axis][bu * RAY_BINS + bw].push(t as u32);
                    }
                }
            }
        }
        Ok(MeshInside { mesh, lo, hi, bins })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn crossings(&self, p: Vec3, axis: usize) -> usize {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        if p[u] < self.lo[u] || p[u] > self.hi[u] || p[w] < self.lo[w] || p[w] > self.hi[w] {
            return 0;
        }
        let b = bin_of(p[u], self.lo[u], self.hi[u]) * RAY_BINS + bin_of(p[w], self.lo[w], self.hi[w]);
        let mut count = 0;
        for &t in &self.bins[axis][b] {
            let [a, bb, c] = self.mesh.triangle(t as usize);
            // 2D point-in-triangle in the (u, w) plane, then the crossing height
            let e = |p0: Vec3, p1: Vec3| (p1[u] - p0[u]) * (p[w] - p0[w]) - (p1[w] - p0[w]) * (p[u] - p0[u]);
            let (d0, d1, d2) = (e(a, bb), e(bb, c), e(c, a));
            let inside = (d0 > 0.0 && d1 > 0.0 && d2 > 0.0) || (d0 < 0.0 && d1 < 0.0 && d2 < 0.0);
            if !inside {
                continue;
            }
            let s = d0 + d1 + d2;
            let h = (d1 * a[axis] + d2 * bb[axis] + d0 * c[axis]) / s;
            if h > p[axis] {
                count += 1;
            }
        }
        count
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let votes = (0..3).filter(|&a| self.crossings(p, a) % 2 == 1).count();
        votes >= 2
    }
}

fn bin_of(x: f64, lo: f64, hi: f64) -> usize {
    let span = hi - lo;
    if !(span > 0.0) {
        return 0;
    }
    (((x - lo) / span * RAY_BINS as f64) as usize).min(RAY_BINS - 1)
}

impl InsideTest for MeshInside {
    fn inside_batch(&self, pts: &[Vec3]) -> Result<Vec<bool>> {
        Ok(pts.iter().map(|&p| self.contains(p)).collect())
    }
}

/// Monte Carlo IoU over `n` uniform samples of the unit cube.
pub fn volumetric_iou(a: &dyn InsideTest, b: &dyn InsideTest, n: usize, seed: u64) -> Result<f64> {
    if n < MIN_IOU_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "IoU needs at least {MIN_IOU_SAMPLES} samples, got {n}"
        )));
    }
    let pts = uniform_points(n, seed);
    iou_on_points(a, b, &pts)
}

/// IoU on a fixed sample set.
pub fn iou_on_points(a: &dyn InsideTest, b: &dyn InsideTest, pts: &[Vec3]) -> Result<f64> {
    let ia = a.inside_batch(pts)?;
    let ib = b.inside_batch(pts)?;
    iou_from_masks(&ia, &ib)
}

pub fn iou_from_masks(a: &[bool], b: &[bool]) -> Result<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Err(Error::UndefinedIoU);
    }
    Ok(inter as f64 / union as f64)
}

/// Exact nearest-neighbor distance queries.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(PointIndex {
            tree: ImmutableKdTree::new_from_slice(&points),
        })
    }

    /// Distance from `q` to the closest indexed point.
    pub fn nearest_distance(&self, q: Vec3) -> f64 {
        self.tree.nearest_one::<SquaredEuclidean>(&q).distance.sqrt()
    }
}

/// Nearest-neighbor distances from samples of `a` to samples of `b` and back.
/// Both sides are sampled with `seed`.
pub fn surface_distances(
    a: &dyn SurfaceSampler,
    b: &dyn SurfaceSampler,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one surface sample".into()));
    }
    let sa = a.surface_samples(n, seed)?;
    let sb = b.surface_samples(n, seed)?;
    let ia = PointIndex::new(sa.clone())?;
    let ib = PointIndex::new(sb.clone())?;
    let a_to_b = sa.iter().map(|&p| ib.nearest_distance(p)).collect();
    let b_to_a = sb.iter().map(|&p| ia.nearest_distance(p)).collect();
    Ok((a_to_b, b_to_a))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer_from_distances(a_to_b: &[f64], b_to_a: &[f64]) -> f64 {
    0.5 * mean(a_to_b) + 0.5 * mean(b_to_a)
}

/// F-score in percent: precision over `pred_to_gt`, recall over `gt_to_pred`.
pub fn fscore_from_distances(pred_to_gt: &[f64], gt_to_pred: &[f64], d: f64) -> f64 {
    let precision = 100.0 * pred_to_gt.iter().filter(|&&x| x <= d).count() as f64 / pred_to_gt.len() as f64;
    let recall = 100.0 * gt_to_pred.iter().filter(|&&x| x <= d).count() as f64 / gt_to_pred.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn chamfer_l1(a: &dyn SurfaceSampler, b: &dyn SurfaceSampler, n: usize, seed: u64) -> Result<f64> {
    let (ab, ba) = surface_distances(a, b, n, seed)?;
    Ok(chamfer_from_distances(&ab, &ba))
}

pub fn f_score(pred: &dyn SurfaceSampler, gt: &dyn SurfaceSampler, d: f64, n: usize, seed: u64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("F-score threshold must be positive, got {d}")));
    }
    let (pg, gp) = surface_distances(pred, gt, n, seed)?;
    Ok(fscore_from_distances(&pg, &gp, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task_id: String,
    pub iou: f64,
    pub chamfer_l1: f64,
    pub f_score: f64,
    pub samples: usize,
    pub seed: u64,
    /// Set when reconstruction failed; metrics are NaN.
    pub failed: Option<String>,
}

impl MetricsReport {
    pub fn failed(task_id: impl Into<String>, reason: impl Into<String>, samples: usize, seed: u64) -> Self {
        MetricsReport {
            task_id: task_id.into(),
            iou: f64::NAN,
            chamfer_l1: f64::NAN,
            f_score: f64::NAN,
            samples,
            seed,
            failed: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub iou_samples: usize,
    pub surface_samples: usize,
    pub fscore_d: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_samples: DEFAULT_SAMPLES,
            surface_samples: DEFAULT_SAMPLES,
            fscore_d: DEFAULT_FSCORE_D,
            seed: 0,
        }
    }
}

/// All three metrics for a predicted mesh (and optionally its occupancy field, used
/// for IoU instead of ray casting) against a ground truth.
pub fn evaluate(
    task_id: &str,
    pred_mesh: &Mesh,
    pred_inside: Option<&dyn InsideTest>,
    gt: &ShapeOracle,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let iou = match pred_inside {
        Some(p) => volumetric_iou(p, gt, opts.iou_samples, opts.seed)?,
        None => {
            let inside = MeshInside::new(pred_mesh.clone())?;
            volumetric_iou(&inside, gt, opts.iou_samples, opts.seed)?
        }
    };
    let (pg, gp) = surface_distances(pred_mesh, gt, opts.surface_samples, opts.seed)?;
    Ok(MetricsReport {
        task_id: task_id.to_string(),
        iou,
        chamfer_l1: chamfer_from_distances(&pg, &gp),
        f_score: fscore_from_distances(&pg, &gp, opts.fscore_d),
        samples: opts.iou_samples,
        seed: opts.seed,
        failed: None,
    })
}

/// Means over successful rows and the number of failed rows.
pub fn summarize(rows: &[MetricsReport]) -> (f64, f64, f64, usize) {
    let ok: Vec<&MetricsReport> = rows.iter().filter(|r| r.failed.is_none()).collect();
    let failed = rows.len() - ok.len();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, failed);
    }
    let n = ok.len() as f64;
    (
        ok.iter().map(|r| r.iou).sum::<f64>() / n,
        ok.iter().map(|r| r.chamfer_l1).sum::<f64>() / n,
        ok.iter().map(|r| r.f_score).sum::<f64>() / n,
        failed,
    )
}

/// CSV `task_id,iou,chamfer,fscore` with a trailing mean row.
pub fn report_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from("task_id,iou,chamfer,fscore\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.4}", r.task_id, r.iou, r.chamfer_l1, r.f_score);
    }
    let (iou, ch, f, _) = summarize(rows);
    let _ = writeln!(out, "mean,{iou:.6},{ch:.6},{f:.4}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{self, Aabb};
    use crate::shapes::{make_shape, Primitive, ShapeSpec};
    use crate::surface::{marching_cubes, ScalarField};

    fn sphere(c: Vec3, r: f64) -> ShapeOracle {
        make_shape(ShapeSpec::Primitive(Primitive::Sphere { center: c, radius: r })).unwrap()
    }

    fn sphere_mesh(c: Vec3, r: f64, res: usize) -> Mesh {
        let f = ScalarField::from_fn(res, Aabb::UNIT, |pts| {
            Ok(pts.iter().map(|&p| r - geom::dist(p, c)).collect())
        })
        .unwrap();
        marching_cubes(&f, 0.0).unwrap()
    }

    #[test]
    fn iou_oracle_cases() {
        let a = sphere([0.0; 3], 0.3);
        assert_eq!(volumetric_iou(&a, &a, 5000, 1).unwrap(), 1.0);
        let l = sphere([-0.3, 0.0, 0.0], 0.1);
        let r = sphere([0.3, 0.0, 0.0], 0.1);
        assert_eq!(volumetric_iou(&l, &r, 20000, 1).unwrap(), 0.0);
        assert_eq!(
            volumetric_iou(&l, &r, 20000, 1).unwrap(),
            volumetric_iou(&r, &l, 20000, 1).unwrap()
        );
        let b = sphere([0.0; 3], 0.4);
        let n = 100_000;
        let iou = volumetric_iou(&a, &b, n, 7).unwrap();
        // binomial error of the estimate given the union fraction
        let p = 0.421875;
        let union_frac = 4.0 / 3.0 * std::f64::consts::PI * 0.4f64.powi(3);
        let sd = (p * (1.0 - p) / (n as f64 * union_frac)).sqrt();
        assert!((iou - p).abs() < 3.0 * sd, "{iou}");
        assert!(volumetric_iou(&a, &b, 10, 7).is_err());
    }

    #[test]
    fn empty_union_is_undefined() {
        assert!(matches!(
            iou_from_masks(&[false; 10], &[false; 10]),
            Err(Error::UndefinedIoU)
        ));
    }

    #[test]
    fn mesh_insideness_matches_sphere() {
        let mesh = sphere_mesh([0.05, 0.0, -0.02], 0.3, 48);
        let inside = MeshInside::new(mesh).unwrap();
        let gt = sphere([0.05, 0.0, -0.02], 0.3);
        let iou = volumetric_iou(&inside, &gt, 20000, 3).unwrap();
        assert!(iou > 0.97, "{iou}");
    }

    #[test]
    fn point_index_is_exact() {
        let pts = uniform_points(3000, 4)
            .into_iter()
            .map(|p| geom::scale(p, 0.5))
            .collect::<Vec<_>>();
        let idx = PointIndex::new(pts.clone()).unwrap();
        for q in uniform_points(300, 5) {
            let q = geom::scale(q, 1.6);
            let brute = pts.iter().map(|&p| geom::dist(p, q)).fold(f64::INFINITY, f64::min);
            assert_eq!(idx.nearest_distance(q), brute);
        }
    }

    #[test]
    fn point_index_handles_flat_faces() {
        let b = make_shape(ShapeSpec::Primitive(Primitive::Box {
            center: [0.0; 3],
            half_extents: [0.3, 0.2, 0.1],
        }))
        .unwrap();
        let pts = b.sample_surface(20000, 1).unwrap();
        let idx = PointIndex::new(pts.clone()).unwrap();
        for q in uniform_points(50, 2) {
            let brute = pts.iter().map(|&p| geom::dist(p, q)).fold(f64::INFINITY, f64::min);
            assert_eq!(idx.nearest_distance(q), brute);
        }
    }

    #[test]
    fn chamfer_oracle_cases() {
        let m = sphere_mesh([0.0; 3], 0.4, 48);
        assert_eq!(chamfer_l1(&m, &m, 5000, 2).unwrap(), 0.0);
        let a = sphere([0.0; 3], 0.4);
        let b = sphere([0.0; 3], 0.35);
        let c = chamfer_l1(&a, &b, 100_000, 3).unwrap();
        assert!((c - 0.05).abs() < 0.005, "{c}");

        let mut shuffled = m.clone();
        shuffled.triangles.reverse();
        let d1 = chamfer_l1(&m, &a, 4000, 1).unwrap();
        let d2 = chamfer_l1(&shuffled, &a, 4000, 1).unwrap();
        assert!((d1 - d2).abs() < 2e-3);
        assert!(matches!(chamfer_l1(&Mesh::default(), &a, 10, 0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn fscore_oracle_cases() {
        let a = sphere([0.0; 3], 0.3);
        assert_eq!(f_score(&a, &a, 0.02, 20000, 1).unwrap(), 100.0);
        let small = sphere([0.0; 3], 0.1);
        let big = sphere([0.0; 3], 0.4);
        assert_eq!(f_score(&small, &big, 0.02, 20000, 1).unwrap(), 0.0);
        let shifted = sphere([0.01, 0.0, 0.0], 0.3);
        assert_eq!(f_score(&shifted, &a, 0.02, 100_000, 1).unwrap(), 100.0);

        let mut prev = 0.0;
        for d in [0.001, 0.003, 0.01, 0.03, 0.1] {
            let f = f_score(&shifted, &sphere([0.0; 3], 0.28), d, 5000, 2).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn csv_has_mean_row_and_skips_failures() {
        let rows = vec![
            MetricsReport {
                task_id: "a".into(),
                iou: 0.5,
                chamfer_l1: 0.1,
                f_score: 50.0,
                samples: 1000,
                seed: 0,
                failed: None,
            },
            MetricsReport::failed("b", "empty", 1000, 0),
            MetricsReport {
                task_id: "c".into(),
                iou: 1.0,
                chamfer_l1: 0.0,
                f_score: 100.0,
                samples: 1000,
                seed: 0,
                failed: None,
            },
        ];
        let csv = report_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task_id,iou,chamfer,fscore");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "mean,0.750000,0.050000,75.0000");
        assert_eq!(summarize(&rows).3, 1);
    }
}
