//! Nearest-neighbor reading of a generated point set and greedy point removal.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::metrics::iou_from_masks;
use crate::shapes::{uniform_points, LabeledPointSet, ShapeOracle};
use crate::surface::OccupancyPredictor;
use crate::svm::{self, SolverOptions, SvmModel};

pub const DEFAULT_PRUNE_SAMPLES: usize = 20_000;

/// Index of the nearest training point; ties go to the lowest index.
pub fn voronoi_region(train: &LabeledPointSet, q: Vec3) -> usize {
    nearest_index(train.points(), q)
}

fn nearest_index(points: &[Vec3], q: Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &p) in points.iter().enumerate() {
        let d = geom::dist_sq(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

pub fn knn1_label(train: &LabeledPointSet, q: Vec3) -> i32 {
    train.labels()[voronoi_region(train, q)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    /// Index into the original training set.
    pub removed_index: usize,
    pub polarity: i32,
    pub iou: f64,
    /// Every candidate evaluated at this step with its IoU, in index order.
    pub candidates: Vec<(usize, f64)>,
    /// Re-solved model after the removal; `None` once a class is empty.
    pub model: Option<SvmModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrace {
    pub base_iou: f64,
    pub steps: Vec<PruneStep>,
}

impl PruneTrace {
    /// CSV `step,removed_index,polarity,iou`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,removed_index,polarity,iou\n");
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{:.6}", i + 1, s.removed_index, s.polarity, s.iou);
        }
        out
    }
}

/// Inside-mask of the SVM fitted to the points whose `keep` flag is set, evaluated
/// on already embedded samples. A set with one class left predicts that class everywhere.
fn fitted_mask(
    points: &[Vec3],
    labels: &[f64],
    keep: &[bool],
    template: &SvmModel,
    opts: &SolverOptions,
    embedded_samples: &[Vec3],
) -> Result<(Vec<bool>, Option<SvmModel>)> {
    let (pts, ys): (Vec<Vec3>, Vec<f64>) = points
        .iter()
        .zip(labels)
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|((&p, &y), _)| (p, y))
        .unzip();
    let has_pos = ys.iter().any(|&y| y > 0.0);
    let has_neg = ys.iter().any(|&y| y < 0.0);
    if !(has_pos && has_neg) {
        return Ok((vec![has_pos; embedded_samples.len()], None));
    }
    let opts = SolverOptions { c: template.c, ..*opts };
    let model = svm::solve_dual_points(&pts, &ys, &template.kernel, &opts)?;
    let mask = model
        .discriminant_batch(embedded_samples)
        .into_iter()
        .map(|p| p >= 0.0)
        .collect();
    Ok((mask, Some(model)))
}

/// Removes `steps` points of label `polarity` one at a time, each time keeping the
/// removal whose re-solved predictor has the best IoU on a fixed sample set.
pub fn greedy_prune(
    pred: &OccupancyPredictor,
    gt: &ShapeOracle,
    polarity: i32,
    steps: usize,
    iou_samples: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<PruneTrace> {
    if polarity != 1 && polarity != -1 {
        return Err(Error::InvalidArgument(format!("polarity must be +1 or -1, got {polarity}")));
    }
    if iou_samples == 0 {
        return Err(Error::InvalidArgument("need at least one IoU sample".into()));
    }
    let samples = uniform_points(iou_samples, seed);
    let gt_mask: Vec<bool> = samples.iter().map(|&p| gt.is_inside(p)).collect();
    let embedded = pred.embed(&samples)?;
    let points = &pred.svm.support_points;
    let labels = &pred.svm.labels;
    let base_mask: Vec<bool> = pred
        .svm
        .discriminant_batch(&embedded)
        .into_iter()
        .map(|p| p >= 0.0)
        .collect();
    let base_iou = iou_from_masks(&base_mask, &gt_mask)?;

    let target = f64::from(polarity);
    let mut keep = vec![true; points.len()];
    let mut trace = PruneTrace {
        base_iou,
        steps: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let candidates: Vec<usize> = (0..points.len())
            .filter(|&i| keep[i] && labels[i] == target)
            .collect();
        if candidates.is_empty() {
            return Err(Error::SingleClass);
        }
        let scored: Vec<(usize, f64, Option<SvmModel>)> = candidates
            .par_iter()
            .map(|&i| {
                let mut k = keep.clone();
                k[i] = false;
                let (mask, model) = fitted_mask(points, labels, &k, &pred.svm, opts, &embedded)?;
                let iou = iou_from_masks(&mask, &gt_mask).unwrap_or(0.0);
                Ok((i, iou, model))
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (j, s) in scored.iter().enumerate() {
            if s.1 > scored[best].1 {
                best = j;
            }
        }
        let candidates_iou = scored.iter().map(|s| (s.0, s.1)).collect();
        let (idx, iou, model) = scored.into_iter().nth(best).expect("non-empty");
        keep[idx] = false;
        trace.steps.push(PruneStep {
            removed_index: idx,
            polarity,
            iou,
            candidates: candidates_iou,
            model,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{make_shape, LabelConvention, Primitive, ShapeSpec};
    use crate::svm::{solve_dual, KernelParams, DEFAULT_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize) -> LabeledPointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5)))
            .collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        LabeledPointSet::new(pts, labels, LabelConvention::SvmPm1).unwrap()
    }

    #[test]
    fn knn_examples() {
        let set = LabeledPointSet::new(
            vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]],
            vec![-1, 1],
            LabelConvention::SvmPm1,
        )
        .unwrap();
        assert_eq!(knn1_label(&set, [0.1, 0.0, 0.0]), 1);
        assert_eq!(voronoi_region(&set, [-0.1, 0.0, 0.0]), 0);
        assert_eq!(knn1_label(&set, [0.0, 0.3, 0.0]), -1);
    }

    #[test]
    fn voronoi_membership_and_reassignment() {
        let set = random_set(3, 12);
        let qs = uniform_points(10_000, 9);
        let removed = 5;
        let rest: Vec<Vec3> = set
            .points()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != removed)
            .map(|(_, &p)| p)
            .collect();
        for &q in &qs {
            let t = voronoi_region(&set, q);
            let dt = geom::dist(q, set.points()[t]);
            assert!(set.points().iter().all(|&p| dt <= geom::dist(q, p)));
            assert_eq!(knn1_label(&set, q), set.labels()[t]);
            let after = nearest_index(&rest, q);
            let after = if after >= removed { after + 1 } else { after };
            if t != removed {
                assert_eq!(after, t);
            } else {
                assert_ne!(after, removed);
            }
        }
    }

    fn sphere_task() -> (OccupancyPredictor, ShapeOracle) {
        let gt = make_shape(ShapeSpec::Primitive(Primitive::Sphere {
            center: [0.0; 3],
            radius: 0.3,
        }))
        .unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while pts.len() < 16 {
            let p: Vec3 = std::array::from_fn(|_| rng.random_range(-0.45..0.45));
            let r = geom::norm(p);
            let want_inside = pts.len() < 8;
            if (want_inside && r < 0.25) || (!want_inside && r > 0.35) {
                pts.push(p);
                labels.push(if want_inside { 1 } else { -1 });
            }
        }
        let set = LabeledPointSet::new(pts, labels, LabelConvention::SvmPm1).unwrap();
        let svm = solve_dual(&set, &KernelParams::Isotropic(0.2), 1.0, DEFAULT_TOL).unwrap();
        (OccupancyPredictor::raw(svm, 5.0).unwrap(), gt)
    }

    #[test]
    fn zero_steps_is_empty() {
        let (pred, gt) = sphere_task();
        let t = greedy_prune(&pred, &gt, 1, 0, 2000, 0, &SolverOptions::default()).unwrap();
        assert!(t.steps.is_empty());
        assert!(t.base_iou > 0.0);
        assert_eq!(t.to_csv(), "step,removed_index,polarity,iou\n");
    }

    #[test]
    fn greedy_choice_is_the_best_candidate() {
        let (pred, gt) = sphere_task();
        let t = greedy_prune(&pred, &gt, 1, 3, 3000, 4, &SolverOptions::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for s in &t.steps {
            assert!(seen.insert(s.removed_index));
            assert_eq!(pred.svm.labels[s.removed_index], 1.0);
            for &(i, iou) in &s.candidates {
                assert!(s.iou >= iou);
                if iou == s.iou {
                    assert!(s.removed_index <= i);
                }
            }
        }
        assert_eq!(t.to_csv().lines().count(), 4);
    }

    #[test]
    fn emptying_a_class_then_failing() {
        let (pred, gt) = sphere_task();
        let t = greedy_prune(&pred, &gt, 1, 8, 2000, 0, &SolverOptions::default()).unwrap();
        let last = t.steps.last().unwrap();
        assert!(last.model.is_none());
        assert_eq!(last.iou, 0.0);
        assert!(matches!(
            greedy_prune(&pred, &gt, 1, 9, 2000, 0, &SolverOptions::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn removing_inert_points_keeps_discriminant() {
        let mut checked = 0;
        for seed in 0..30 {
            let base = random_set(seed, 10);
            let labels = base.points().iter().map(|p| if p[0] > 0.0 { 1 } else { -1 }).collect();
            let Ok(set) = LabeledPointSet::new(base.points().to_vec(), labels, LabelConvention::SvmPm1)
            else {
                continue;
            };
            let kernel = KernelParams::Isotropic(0.25);
            let full = solve_dual(&set, &kernel, 1.0, DEFAULT_TOL).unwrap();
            let Some(zero) = full.alpha.iter().position(|&a| a == 0.0) else {
                continue;
            };
            let keep: Vec<bool> = (0..10).map(|i| i != zero).collect();
            let qs = uniform_points(200, seed);
            let (_, model) = fitted_mask(
                &full.support_points,
                &full.labels,
                &keep,
                &full,
                &SolverOptions::default(),
                &qs,
            )
            .unwrap();
            let model = model.unwrap();
            for (a, b) in full.discriminant_batch(&qs).iter().zip(model.discriminant_batch(&qs)) {
                assert!((a - b).abs() < 1e-6);
            }
            checked += 1;
        }
        assert!(checked >= 5);
    }
}
