//! Occupancy fields and triangle-mesh extraction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Vec3};
use crate::mc_tables::TRI_TABLE;
use crate::nets::{NetParams, TaskForward};
use crate::svm::{SolverOptions, SvmModel};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 8;
pub const WELD_EPS: f64 = 1e-9;
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Embedding {
    params: NetParams,
    task: TaskForward,
}

/// `sigmoid(beta * P(g(x)))`, with `g` the identity in raw-point mode.
#[derive(Debug, Clone)]
pub struct OccupancyPredictor {
    pub svm: SvmModel,
    pub beta: f64,
    embedding: Option<Embedding>,
}

impl OccupancyPredictor {
    pub fn raw(svm: SvmModel, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(OccupancyPredictor {
            svm,
            beta,
            embedding: None,
        })
    }

    /// Solves the inner SVM for an already generated task.
    pub fn from_task(params: &NetParams, task: TaskForward, opts: &SolverOptions) -> Result<Self> {
        let svm = task.solve(opts)?;
        let beta = task.beta;
        Ok(OccupancyPredictor {
            svm,
            beta,
            embedding: Some(Embedding {
                params: params.clone(),
                task,
            }),
        })
    }

    pub fn from_descriptor(params: &NetParams, descriptor: &[f64], opts: &SolverOptions) -> Result<Self> {
        Self::from_task(params, TaskForward::from_descriptor(params, descriptor)?, opts)
    }

    pub fn from_lambda(params: &NetParams, lambda: &[f64], opts: &SolverOptions) -> Result<Self> {
        Self::from_task(params, TaskForward::from_lambda(params, lambda)?, opts)
    }

    pub fn task(&self) -> Option<&TaskForward> {
        self.embedding.as_ref().map(|e| &e.task)
    }

    /// Same embedding and beta with a different SVM.
    pub fn with_svm(&self, svm: SvmModel) -> Self {
        OccupancyPredictor {
            svm,
            beta: self.beta,
            embedding: self.embedding.clone(),
        }
    }

    pub fn embed(&self, xs: &[Vec3]) -> Result<Vec<Vec3>> {
        match &self.embedding {
            Some(e) => e.task.embed(&e.params, xs),
            None => Ok(xs.to_vec()),
        }
    }

    pub fn discriminant_batch(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self.svm.discriminant_batch(&self.embed(xs)?))
    }

    pub fn discriminant(&self, q: Vec3) -> Result<f64> {
        Ok(self.discriminant_batch(&[q])?[0])
    }

    pub fn occupancy(&self, q: Vec3) -> Result<f64> {
        Ok(sigmoid(self.beta * self.discriminant(q)?))
    }

    pub fn occupancy_batch(&self, xs: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self
            .discriminant_batch(xs)?
            .into_iter()
            .map(|p| sigmoid(self.beta * p))
            .collect())
    }
}

/// Values on an `R^3` lattice of cell corners, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub resolution: usize,
    pub bbox: Aabb,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_point(&self.bbox, self.resolution, [i, j, k])
    }

    /// Evaluates `f` on every lattice point, one z-slice per batch.
    pub fn from_fn(
        resolution: usize,
        bbox: Aabb,
        f: impl Fn(&[Vec3]) -> Result<Vec<f64>> + Sync,
    ) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "resolution must be at least {MIN_RESOLUTION}, got {resolution}"
            )));
        }
        let r = resolution;
        let slices: Vec<Vec<f64>> = (0..r)
            .into_par_iter()
            .map(|k| {
                let pts: Vec<Vec3> = (0..r * r)
                    .map(|ij| lattice_point(&bbox, r, [ij % r, ij / r, k]))
                    .collect();
                f(&pts)
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = slices.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field".into()));
        }
        Ok(ScalarField {
            resolution,
            bbox,
            values,
        })
    }

    /// True when every value on the outer faces of the lattice is on one side of `iso`.
    pub fn boundary_is_clear(&self, iso: f64) -> bool {
        let r = self.resolution;
        let mut side = None;
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let on_face = i == 0 || j == 0 || k == 0 || i == r - 1 || j == r - 1 || k == r - 1;
                    if !on_face {
                        continue;
                    }
                    let s = self.values[self.index(i, j, k)] > iso;
                    match side {
                        None => side = Some(s),
                        Some(prev) if prev != s => return false,
                        _ => {}
                    }
                }
            }
        }
        true
    }
}

fn lattice_point(bbox: &Aabb, r: usize, ijk: [usize; 3]) -> Vec3 {
    let step = 1.0 / (r - 1) as f64;
    std::array::from_fn(|a| {
        if ijk[a] == r - 1 {
            bbox.max[a]
        } else {
            bbox.min[a] + (bbox.max[a] - bbox.min[a]) * (ijk[a] as f64 * step)
        }
    })
}

/// Discriminant (not occupancy) on the lattice.
pub fn predict_grid(pred: &OccupancyPredictor, resolution: usize, bbox: Aabb) -> Result<ScalarField> {
    ScalarField::from_fn(resolution, bbox, |pts| pred.discriminant_batch(pts))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive when normals point outward.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// Every edge traversed once in each direction.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut directed = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                *directed.entry((tri[e], tri[(e + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        let e = self.edge_counts().len() as i64;
        let f = self.triangles.len() as i64;
        v - e + f
    }

    /// Area-weighted uniform samples.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<Vec<Vec3>> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.triangle_area(t);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::EmptyMesh);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let t = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                let [a, b, c] = self.triangle(t);
                let r1 = rng.random::<f64>().sqrt();
                let r2 = rng.random::<f64>();
                let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
                std::array::from_fn(|k| wa * a[k] + wb * b[k] + wc * c[k])
            })
            .collect())
    }

    /// Wavefront OBJ with 1-based faces.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(40 * (self.vertices.len() + self.triangles.len()));
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn from_obj(text: &str, source: &Path) -> Result<Self> {
        let mut mesh = Mesh::default();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            let mut words = line.split_whitespace();
            match words.next() {
                Some("v") => {
                    let vals: Vec<f64> = words
                        .map(|w| w.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(source, ln + 1, format!("bad vertex: {e}")))?;
                    if vals.len() < 3 {
                        return Err(Error::parse(source, ln + 1, "vertex needs 3 coordinates"));
                    }
                    mesh.vertices.push([vals[0], vals[1], vals[2]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = words
                        .map(|w| {
                            // accept v, v/vt and v/vt/vn forms
                            w.split('/').next().unwrap_or("").parse::<usize>()
                        })
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(source, ln + 1, format!("bad face: {e}")))?;
                    if idx.len() < 3 || idx.iter().any(|&i| i == 0) {
                        return Err(Error::parse(source, ln + 1, "face needs 3 positive indices"));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                    }
                }
                _ => {}
            }
        }
        let n = mesh.vertices.len();
        if mesh.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::parse(source, 0, "face index out of range"));
        }
        Ok(mesh)
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        Self::from_obj(&std::fs::read_to_string(path)?, path)
    }

    /// Drops repeated-index and near-zero-area triangles, then unused vertices.
    fn clean(&mut self) {
        let verts = &self.vertices;
        self.triangles.retain(|&[a, b, c]| {
            if a == b || b == c || a == c {
                return false;
            }
            let area = 0.5
                * geom::norm(geom::cross(
                    geom::sub(verts[b], verts[a]),
                    geom::sub(verts[c], verts[a]),
                ));
            area >= MIN_TRIANGLE_AREA
        });
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::with_capacity(self.vertices.len());
        for tri in &mut self.triangles {
            for v in tri.iter_mut() {
                if remap[*v] == usize::MAX {
                    remap[*v] = kept.len();
                    kept.push(self.vertices[*v]);
                }
                *v = remap[*v];
            }
        }
        self.vertices = kept;
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (3, 2),
    (0, 3),
    (4, 5),
    (5, 6),
    (7, 6),
    (4, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Extracts the `iso` level set, with "inside" meaning `value > iso`. Triangles are
/// wound so normals point from inside to outside.
pub fn marching_cubes(field: &ScalarField, iso: f64) -> Result<Mesh> {
    let r = field.resolution;
    if r < 2 || field.values.len() != r * r * r {
        return Err(Error::ShapeMismatch(format!(
            "{} values for resolution {r}",
            field.values.len()
        )));
    }
    let above = field.values.iter().filter(|&&v| v > iso).count();
    if above == 0 || above == field.values.len() {
        return Err(Error::EmptySurface);
    }

    let mut mesh = Mesh::default();
    let mut vertex_ids: HashMap<usize, usize> = HashMap::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut gidx = [0usize; 8];
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    gidx[c] = field.index(i + off[0], j + off[1], k + off[2]);
                    vals[c] = field.values[gidx[c]];
                    if vals[c] <= iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut t = 0;
                while t < 16 && row[t] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in row[t..t + 3].iter().enumerate() {
                        let (ca, cb) = EDGES[e as usize];
                        tri[slot] = edge_vertex(field, iso, &mut mesh, &mut vertex_ids, gidx[ca], gidx[cb], vals[ca], vals[cb]);
                    }
                    mesh.triangles.push(tri);
                    t += 3;
                }
            }
        }
    }
    mesh.clean();
    if mesh.triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(mesh)
}

#[allow(clippy::too_many_arguments)]
fn edge_vertex(
    field: &ScalarField,
    iso: f64,
    mesh: &mut Mesh,
    ids: &mut HashMap<usize, usize>,
    ga: usize,
    gb: usize,
    va: f64,
    vb: f64,
) -> usize {
    let t = (iso - va) / (vb - va);
    let n = field.values.len();
    // Keys: corner g -> g; edge from lower corner g along axis a -> n * (1 + a) + g.
    let key = if t <= WELD_EPS {
        ga
    } else if t >= 1.0 - WELD_EPS {
        gb
    } else {
        let d = gb - ga;
        let axis = if d == 1 {
            0
        } else if d == field.resolution {
            1
        } else {
            2
        };
        n * (1 + axis) + ga
    };
    *ids.entry(key).or_insert_with(|| {
        let unpack = |g: usize| {
            let r = field.resolution;
            field.point(g % r, (g / r) % r, g / (r * r))
        };
        let (pa, pb) = (unpack(ga), unpack(gb));
        let t = t.clamp(0.0, 1.0);
        mesh.vertices
            .push(std::array::from_fn(|c| pa[c] + t * (pb[c] - pa[c])));
        mesh.vertices.len() - 1
    })
}

/// Grid evaluation followed by extraction at `iso` (0 is the decision boundary).
pub fn reconstruct(pred: &OccupancyPredictor, resolution: usize, iso: f64) -> Result<Mesh> {
    let field = predict_grid(pred, resolution, Aabb::UNIT)?;
    marching_cubes(&field, iso)
}
