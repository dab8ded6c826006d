//! Procedural ground-truth shapes.
//!
//! Every shape lives in the normalized domain `[-0.5, 0.5]^3` and exposes an exact
//! occupancy test and a signed distance. The two sampling regimes used to build test
//! sets (uniform over the domain, Gaussian-displaced surface samples) live here too.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Vec3};

/// Minimum clearance between any primitive and the domain boundary.
pub const DOMAIN_MARGIN: f64 = 0.02;

/// Length of the task descriptor fed to the feature encoder.
pub const DESCRIPTOR_LEN: usize = 16;

/// Default std of the Gaussian displacement used by [`sample_near_surface`].
pub const DEFAULT_NOISE_STD: f64 = 0.05;

const SURFACE_TOL: f64 = 1e-6;
const STALL_PROPOSALS: usize = 1_000_000;
const STALL_RATE: f64 = 1e-3;

/// A primitive solid. Tori are oriented with their axis along `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    Ellipsoid { center: Vec3, radii: Vec3 },
    Torus { center: Vec3, major: f64, minor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Ellipsoid,
    Torus,
    Union,
    Difference,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Ellipsoid,
        ShapeKind::Torus,
        ShapeKind::Union,
        ShapeKind::Difference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Ellipsoid => "ellipsoid",
            ShapeKind::Torus => "torus",
            ShapeKind::Union => "union",
            ShapeKind::Difference => "difference",
        }
    }

    fn index(self) -> usize {
        ShapeKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown shape kind `{s}`")))
    }
}

/// Description of a ground-truth shape: a primitive or a boolean of two primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSpec {
    Primitive(Primitive),
    Union(Primitive, Primitive),
    Difference(Primitive, Primitive),
}

impl Primitive {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Primitive::Sphere { .. } => ShapeKind::Sphere,
            Primitive::Box { .. } => ShapeKind::Box,
            Primitive::Ellipsoid { .. } => ShapeKind::Ellipsoid,
            Primitive::Torus { .. } => ShapeKind::Torus,
        }
    }

    pub fn center(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. }
            | Primitive::Box { center, .. }
            | Primitive::Ellipsoid { center, .. }
            | Primitive::Torus { center, .. } => center,
        }
    }

    /// Size parameters following the center, in file order.
    fn size_params(&self) -> Vec<f64> {
        match *self {
            Primitive::Sphere { radius, .. } => vec![radius],
            Primitive::Box { half_extents, .. } => half_extents.to_vec(),
            Primitive::Ellipsoid { radii, .. } => radii.to_vec(),
            Primitive::Torus { major, minor, .. } => vec![major, minor],
        }
    }

    fn half_size(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { radius, .. } => [radius; 3],
            Primitive::Box { half_extents, .. } => half_extents,
            Primitive::Ellipsoid { radii, .. } => radii,
            Primitive::Torus { major, minor, .. } => [major + minor, major + minor, minor],
        }
    }

    pub fn bounds(&self) -> Aabb {
        let c = self.center();
        let h = self.half_size();
        Aabb {
            min: geom::sub(c, h),
            max: geom::add(c, h),
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.center();
        let sizes = self.size_params();
        if c.iter().chain(sizes.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        if sizes.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "{} sizes must be positive, got {sizes:?}",
                self.kind().name()
            )));
        }
        if let Primitive::Torus { major, minor, .. } = *self {
            if minor >= major {
                return Err(Error::InvalidSpec(format!(
                    "torus minor radius {minor} must be below major radius {major}"
                )));
            }
        }
        let limit = 0.5 - DOMAIN_MARGIN;
        let b = self.bounds();
        if (0..3).any(|k| b.min[k] < -limit || b.max[k] > limit) {
            return Err(Error::InvalidSpec(format!(
                "{} extends to {:?}..{:?}, outside the unit cube minus margin {DOMAIN_MARGIN}",
                self.kind().name(),
                b.min,
                b.max
            )));
        }
        Ok(())
    }

    /// Cheap function with the same sign as the signed distance (exactly zero on the surface
    /// where the closed form allows it).
    fn classify(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Ellipsoid { center, radii } => {
                let q = geom::sub(p, center);
                (0..3).map(|k| (q[k] / radii[k]).powi(2)).sum::<f64>() - 1.0
            }
            _ => self.distance_estimate(p),
        }
    }

    /// Exact signed distance for closed-form primitives (sphere, box, torus).
    fn distance_estimate(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => geom::dist(p, center) - radius,
            Primitive::Box {
                center,
                half_extents,
            } => {
                let q: Vec3 = std::array::from_fn(|k| (p[k] - center[k]).abs() - half_extents[k]);
                let outside: Vec3 = std::array::from_fn(|k| q[k].max(0.0));
                geom::norm(outside) + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Torus {
                center,
                major,
                minor,
            } => {
                let q = geom::sub(p, center);
                let ring = (q[0] * q[0] + q[1] * q[1]).sqrt() - major;
                (ring * ring + q[2] * q[2]).sqrt() - minor
            }
            Primitive::Ellipsoid { center, radii } => {
                let q = geom::sub(p, center);
                ellipsoid_distance(radii, [q[0].abs(), q[1].abs(), q[2].abs()])
            }
        }
    }

    fn signed_distance(&self, p: Vec3) -> f64 {
        match self {
            Primitive::Ellipsoid { .. } => {
                let f = self.classify(p);
                let d = self.distance_estimate(p);
                if f == 0.0 {
                    0.0
                } else if f < 0.0 {
                    -d.max(f64::MIN_POSITIVE)
                } else {
                    d.max(f64::MIN_POSITIVE)
                }
            }
            _ => self.distance_estimate(p),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Box { half_extents: h, .. } => {
                8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
            }
            Primitive::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
            Primitive::Ellipsoid { radii, .. } => ellipsoid_area(radii),
        }
    }

    /// One area-uniform surface sample. Returns `None` on a rejected proposal.
    fn propose_surface<R: Rng>(&self, rng: &mut R) -> Option<Vec3> {
        match *self {
            Primitive::Sphere { center, radius } => {
                Some(geom::add(center, geom::scale(unit_direction(rng), radius)))
            }
            Primitive::Box {
                center,
                half_extents: h,
            } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total = areas.iter().sum::<f64>();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, &a) in areas.iter().enumerate() {
                    if pick < a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut q = [0.0; 3];
                for k in 0..3 {
                    q[k] = if k == axis {
                        side * h[k]
                    } else {
                        (2.0 * rng.random::<f64>() - 1.0) * h[k]
                    };
                }
                Some(geom::add(center, q))
            }
            Primitive::Ellipsoid { center, radii } => {
                let u = unit_direction(rng);
                let stretch = (0..3).map(|k| (u[k] / radii[k]).powi(2)).sum::<f64>().sqrt();
                let max_stretch = 1.0 / radii.iter().cloned().fold(f64::INFINITY, f64::min);
                if rng.random::<f64>() * max_stretch > stretch {
                    return None;
                }
                Some(geom::add(
                    center,
                    [u[0] * radii[0], u[1] * radii[1], u[2] * radii[2]],
                ))
            }
            Primitive::Torus {
                center,
                major,
                minor,
            } => {
                let theta = 2.0 * PI * rng.random::<f64>();
                let phi = 2.0 * PI * rng.random::<f64>();
                let ring = major + minor * phi.cos();
                if rng.random::<f64>() * (major + minor) > ring {
                    return None;
                }
                Some(geom::add(
                    center,
                    [ring * theta.cos(), ring * theta.sin(), minor * phi.sin()],
                ))
            }
        }
    }
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Primitive(p) => p.kind(),
            ShapeSpec::Union(..) => ShapeKind::Union,
            ShapeSpec::Difference(..) => ShapeKind::Difference,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ShapeSpec::Primitive(p) => p.validate(),
            ShapeSpec::Union(a, b) | ShapeSpec::Difference(a, b) => {
                a.validate()?;
                b.validate()
            }
        }
    }

    fn classify(&self, p: Vec3) -> f64 {
        match self {
            ShapeSpec::Primitive(a) => a.classify(p),
            ShapeSpec::Union(a, b) => a.classify(p).min(b.classify(p)),
            ShapeSpec::Difference(a, b) => a.classify(p).max(-b.classify(p)),
        }
    }

    fn signed_distance(&self, p: Vec3) -> f64 {
        match self {
            ShapeSpec::Primitive(a) => a.signed_distance(p),
            ShapeSpec::Union(a, b) => a.signed_distance(p).min(b.signed_distance(p)),
            ShapeSpec::Difference(a, b) => a.signed_distance(p).max(-b.signed_distance(p)),
        }
    }

    /// Fixed-length task descriptor: kind one-hot followed by geometry parameters.
    ///
    /// Primitives contribute center and sizes; boolean shapes contribute, per child,
    /// a kind code, the center and the mean half size.
    pub fn descriptor(&self) -> [f64; DESCRIPTOR_LEN] {
        let mut d = [0.0; DESCRIPTOR_LEN];
        d[self.kind().index()] = 1.0;
        let mut tail: Vec<f64> = Vec::with_capacity(10);
        match self {
            ShapeSpec::Primitive(p) => {
                tail.extend(p.center());
                tail.extend(p.size_params());
            }
            ShapeSpec::Union(a, b) | ShapeSpec::Difference(a, b) => {
                for child in [a, b] {
                    let h = child.half_size();
                    tail.push((child.kind().index() as f64 + 1.0) / 4.0);
                    tail.extend(child.center());
                    tail.push((h[0] + h[1] + h[2]) / 3.0);
                }
            }
        }
        for (slot, v) in d[6..].iter_mut().zip(tail) {
            *slot = v;
        }
        d
    }

    /// Serializes to the key-value shape file format.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind={}", self.kind().name());
        match self {
            ShapeSpec::Primitive(p) => write_primitive(&mut out, "", p),
            ShapeSpec::Union(a, b) | ShapeSpec::Difference(a, b) => {
                write_primitive(&mut out, "a.", a);
                write_primitive(&mut out, "b.", b);
            }
        }
        out
    }

    pub fn from_kv_str(text: &str, source: &Path) -> Result<ShapeSpec> {
        let mut pairs: Vec<(String, String, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, idx + 1, "expected `key=value`"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string(), idx + 1));
        }
        let lookup = |key: &str| -> Option<(&str, usize)> {
            pairs
                .iter()
                .find(|(k, _, _)| k == key)
                .map(|(_, v, l)| (v.as_str(), *l))
        };
        let (kind_str, kind_line) =
            lookup("kind").ok_or_else(|| Error::parse(source, 0, "missing `kind`"))?;
        let kind: ShapeKind = kind_str
            .parse()
            .map_err(|e: Error| Error::parse(source, kind_line, e.to_string()))?;
        let spec = match kind {
            ShapeKind::Union | ShapeKind::Difference => {
                let a = read_primitive(&lookup, "a.", source)?;
                let b = read_primitive(&lookup, "b.", source)?;
                if kind == ShapeKind::Union {
                    ShapeSpec::Union(a, b)
                } else {
                    ShapeSpec::Difference(a, b)
                }
            }
            _ => ShapeSpec::Primitive(read_primitive(&lookup, "", source)?),
        };
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<ShapeSpec> {
        let text = std::fs::read_to_string(path)?;
        ShapeSpec::from_kv_str(&text, path)
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn write_primitive(out: &mut String, prefix: &str, p: &Primitive) {
    if !prefix.is_empty() {
        let _ = writeln!(out, "{prefix}kind={}", p.kind().name());
    }
    let _ = writeln!(out, "{prefix}center={}", fmt_vec(&p.center()));
    match *p {
        Primitive::Sphere { radius, .. } => {
            let _ = writeln!(out, "{prefix}radius={radius}");
        }
        Primitive::Box { half_extents, .. } => {
            let _ = writeln!(out, "{prefix}half_extents={}", fmt_vec(&half_extents));
        }
        Primitive::Ellipsoid { radii, .. } => {
            let _ = writeln!(out, "{prefix}radii={}", fmt_vec(&radii));
        }
        Primitive::Torus { major, minor, .. } => {
            let _ = writeln!(out, "{prefix}major={major}");
            let _ = writeln!(out, "{prefix}minor={minor}");
        }
    }
}

fn read_primitive<'a>(
    lookup: &dyn Fn(&str) -> Option<(&'a str, usize)>,
    prefix: &str,
    source: &Path,
) -> Result<Primitive> {
    let get = |name: &str| -> Result<(&'a str, usize)> {
        lookup(&format!("{prefix}{name}"))
            .ok_or_else(|| Error::parse(source, 0, format!("missing `{prefix}{name}`")))
    };
    let floats = |name: &str, count: usize| -> Result<Vec<f64>> {
        let (v, line) = get(name)?;
        let vals: Vec<f64> = v
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(source, line, format!("`{prefix}{name}`: {e}")))?;
        if vals.len() != count {
            return Err(Error::parse(
                source,
                line,
                format!("`{prefix}{name}` expects {count} values, got {}", vals.len()),
            ));
        }
        Ok(vals)
    };
    let vec3 = |name: &str| -> Result<Vec3> {
        let v = floats(name, 3)?;
        Ok([v[0], v[1], v[2]])
    };
    let kind: ShapeKind = if prefix.is_empty() {
        get("kind")?.0.parse()?
    } else {
        let (k, line) = get("kind")?;
        k.parse().map_err(|e: Error| Error::parse(source, line, e.to_string()))?
    };
    let center = match lookup(&format!("{prefix}center")) {
        Some(_) => vec3("center")?,
        None => [0.0; 3],
    };
    Ok(match kind {
        ShapeKind::Sphere => Primitive::Sphere {
            center,
            radius: floats("radius", 1)?[0],
        },
        ShapeKind::Box => Primitive::Box {
            center,
            half_extents: vec3("half_extents")?,
        },
        ShapeKind::Ellipsoid => Primitive::Ellipsoid {
            center,
            radii: vec3("radii")?,
        },
        ShapeKind::Torus => Primitive::Torus {
            center,
            major: floats("major", 1)?[0],
            minor: floats("minor", 1)?[0],
        },
        ShapeKind::Union | ShapeKind::Difference => {
            return Err(Error::parse(
                source,
                0,
                "boolean shapes take primitive children only",
            ))
        }
    })
}

/// Validated ground-truth shape with its task descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOracle {
    spec: ShapeSpec,
    descriptor: [f64; DESCRIPTOR_LEN],
    child_areas: [f64; 2],
}

/// Validates `spec` and builds its oracle.
pub fn make_shape(spec: ShapeSpec) -> Result<ShapeOracle> {
    spec.validate()?;
    let child_areas = match &spec {
        ShapeSpec::Primitive(p) => [p.surface_area(), 0.0],
        ShapeSpec::Union(a, b) | ShapeSpec::Difference(a, b) => {
            [a.surface_area(), b.surface_area()]
        }
    };
    Ok(ShapeOracle {
        descriptor: spec.descriptor(),
        spec,
        child_areas,
    })
}

impl ShapeOracle {
    pub fn spec(&self) -> &ShapeSpec {
        &self.spec
    }

    pub fn descriptor(&self) -> &[f64; DESCRIPTOR_LEN] {
        &self.descriptor
    }

    /// Occupancy: 1 inside or on the surface, 0 outside.
    pub fn indicator(&self, p: Vec3) -> u8 {
        u8::from(self.spec.classify(p) <= 0.0)
    }

    pub fn is_inside(&self, p: Vec3) -> bool {
        self.spec.classify(p) <= 0.0
    }

    /// Signed distance, negative inside. Exact for primitives; for booleans this is the
    /// usual min/max combination, which is a lower bound on the true distance.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        self.spec.signed_distance(p)
    }

    /// Area-weighted samples on the surface.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<Vec<Vec3>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut proposals = 0usize;
        let total_area = self.child_areas[0] + self.child_areas[1];
        while out.len() < count {
            if proposals >= STALL_PROPOSALS
                && (out.len() as f64) < STALL_RATE * proposals as f64
            {
                return Err(Error::SamplingStalled {
                    accepted: out.len(),
                    proposals,
                });
            }
            proposals += 1;
            let candidate = match &self.spec {
                ShapeSpec::Primitive(p) => p.propose_surface(&mut rng),
                ShapeSpec::Union(a, b) => {
                    if rng.random::<f64>() * total_area < self.child_areas[0] {
                        a.propose_surface(&mut rng).filter(|&q| b.classify(q) >= 0.0)
                    } else {
                        b.propose_surface(&mut rng).filter(|&q| a.classify(q) >= 0.0)
                    }
                }
                ShapeSpec::Difference(a, b) => {
                    if rng.random::<f64>() * total_area < self.child_areas[0] {
                        a.propose_surface(&mut rng).filter(|&q| b.classify(q) >= 0.0)
                    } else {
                        b.propose_surface(&mut rng).filter(|&q| a.classify(q) <= 0.0)
                    }
                }
            };
            if let Some(q) = candidate {
                debug_assert!(self.signed_distance(q).abs() <= SURFACE_TOL);
                out.push(q);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelConvention {
    /// SVM labels in {-1, +1}.
    SvmPm1,
    /// Occupancy labels in {0, 1}.
    Occupancy01,
}

impl LabelConvention {
    pub fn name(self) -> &'static str {
        match self {
            LabelConvention::SvmPm1 => "svm_pm1",
            LabelConvention::Occupancy01 => "occupancy_01",
        }
    }

    fn admits(self, label: i32) -> bool {
        match self {
            LabelConvention::SvmPm1 => label == -1 || label == 1,
            LabelConvention::Occupancy01 => label == 0 || label == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    points: Vec<Vec3>,
    labels: Vec<i32>,
    convention: LabelConvention,
}

impl LabeledPointSet {
    pub fn new(points: Vec<Vec3>, labels: Vec<i32>, convention: LabelConvention) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| !convention.admits(l)) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} not allowed under {}",
                convention.name()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point set".into()));
        }
        Ok(LabeledPointSet {
            points,
            labels,
            convention,
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn convention(&self) -> LabelConvention {
        self.convention
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Converts occupancy labels to SVM labels via `y = 2 * o - 1` (and back).
    pub fn to_convention(&self, target: LabelConvention) -> LabeledPointSet {
        let labels = match (self.convention, target) {
            (a, b) if a == b => self.labels.clone(),
            (LabelConvention::Occupancy01, LabelConvention::SvmPm1) => {
                self.labels.iter().map(|&o| 2 * o - 1).collect()
            }
            _ => self.labels.iter().map(|&y| (y + 1) / 2).collect(),
        };
        LabeledPointSet {
            points: self.points.clone(),
            labels,
            convention: target,
        }
    }

    /// Labels as floating-point values, for the solver.
    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# labels={}\n", self.convention.name());
        for (p, l) in self.points.iter().zip(&self.labels) {
            let _ = writeln!(out, "{} {} {} {}", p[0], p[1], p[2], l);
        }
        out
    }

    pub fn from_text(text: &str, source: &Path) -> Result<Self> {
        let mut convention = None;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(value) = comment.trim().strip_prefix("labels=") {
                    convention = Some(match value.trim() {
                        "svm_pm1" => LabelConvention::SvmPm1,
                        "occupancy_01" => LabelConvention::Occupancy01,
                        other => {
                            return Err(Error::parse(
                                source,
                                idx + 1,
                                format!("unknown label convention `{other}`"),
                            ))
                        }
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(source, idx + 1, "expected `x y z label`"));
            }
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = fields[k]
                    .parse()
                    .map_err(|e| Error::parse(source, idx + 1, format!("{e}")))?;
            }
            let label: i32 = fields[3]
                .parse()
                .map_err(|e| Error::parse(source, idx + 1, format!("{e}")))?;
            points.push(p);
            labels.push(label);
        }
        let convention = convention
            .ok_or_else(|| Error::parse(source, 1, "missing `# labels=...` header"))?;
        LabeledPointSet::new(points, labels, convention)
            .map_err(|e| Error::parse(source, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        LabeledPointSet::from_text(&text, path)
    }
}

/// Uniform samples over the unit cube labeled by occupancy.
pub fn sample_uniform(oracle: &ShapeOracle, count: usize, seed: u64) -> LabeledPointSet {
    let points = uniform_points(count, seed);
    let labels = points.iter().map(|&p| oracle.indicator(p) as i32).collect();
    LabeledPointSet {
        points,
        labels,
        convention: LabelConvention::Occupancy01,
    }
}

/// I.i.d. uniform points on the unit cube.
pub fn uniform_points(count: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() - 0.5))
        .collect()
}

/// Surface samples displaced by isotropic Gaussian noise, clamped to the unit cube.
pub fn sample_near_surface(
    oracle: &ShapeOracle,
    count: usize,
    noise_std: f64,
    seed: u64,
) -> Result<LabeledPointSet> {
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be positive, got {noise_std}"
        )));
    }
    let surface = oracle.sample_surface(count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, noise_std).expect("positive std");
    let points: Vec<Vec3> = surface
        .into_iter()
        .map(|p| {
            let q = std::array::from_fn(|k| p[k] + normal.sample(&mut rng));
            Aabb::UNIT.clamp(q)
        })
        .collect();
    let labels = points.iter().map(|&p| oracle.indicator(p) as i32).collect();
    Ok(LabeledPointSet {
        points,
        labels,
        convention: LabelConvention::Occupancy01,
    })
}

fn unit_direction<R: Rng>(rng: &mut R) -> Vec3 {
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Surface area of an ellipsoid by midpoint quadrature over the parameter sphere.
fn ellipsoid_area(radii: Vec3) -> f64 {
    const NZ: usize = 256;
    const NPHI: usize = 512;
    let [a, b, c] = radii;
    let mut sum = 0.0;
    for i in 0..NZ {
        let z = -1.0 + (i as f64 + 0.5) * 2.0 / NZ as f64;
        let r = (1.0 - z * z).sqrt();
        for j in 0..NPHI {
            let phi = (j as f64 + 0.5) * 2.0 * PI / NPHI as f64;
            let u = [r * phi.cos(), r * phi.sin(), z];
            sum += ((u[0] / a).powi(2) + (u[1] / b).powi(2) + (u[2] / c).powi(2)).sqrt();
        }
    }
    a * b * c * sum * (2.0 / NZ as f64) * (2.0 * PI / NPHI as f64)
}

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

const ROOT_ITERS: usize = 1100;

fn ellipse_root(r0: f64, z0: f64, z1: f64, mut g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        robust_length(&[n0, z1]) - 1.0
    };
    let mut s = 0.0;
    for _ in 0..ROOT_ITERS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        g = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Distance from `y >= 0` to the ellipse with semi-axes `e0 >= e1`.
fn ellipse_distance(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1).powi(2);
                let sbar = ellipse_root(r0, z0, z1, g);
                let x0 = r0 * y0 / (sbar + r0);
                let x1 = y1 / (sbar + 1.0);
                ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
            } else {
                0.0
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).max(0.0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipsoid_root(r0: f64, r1: f64, z0: f64, z1: f64, z2: f64, mut g: f64) -> f64 {
    let n0 = r0 * z0;
    let n1 = r1 * z1;
    let mut s0 = z2 - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        robust_length(&[n0, n1, z2]) - 1.0
    };
    let mut s = 0.0;
    for _ in 0..ROOT_ITERS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = n1 / (s + r1);
        let ratio2 = z2 / (s + 1.0);
        g = ratio0 * ratio0 + ratio1 * ratio1 + ratio2 * ratio2 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Unsigned distance from a first-octant point to an axis-aligned ellipsoid, using the
/// bisection root finder on the closest-point parameter.
fn ellipsoid_distance(radii: Vec3, y: Vec3) -> f64 {
    // sort axes in decreasing order
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| radii[j].partial_cmp(&radii[i]).unwrap());
    let e = [radii[order[0]], radii[order[1]], radii[order[2]]];
    let y = [y[order[0]], y[order[1]], y[order[2]]];

    if y[2] > 0.0 {
        if y[1] > 0.0 {
            if y[0] > 0.0 {
                let z = [y[0] / e[0], y[1] / e[1], y[2] / e[2]];
                let g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
                if g != 0.0 {
                    let r0 = (e[0] / e[2]).powi(2);
                    let r1 = (e[1] / e[2]).powi(2);
                    let sbar = ellipsoid_root(r0, r1, z[0], z[1], z[2], g);
                    let x = [
                        r0 * y[0] / (sbar + r0),
                        r1 * y[1] / (sbar + r1),
                        y[2] / (sbar + 1.0),
                    ];
                    geom::dist(x, y)
                } else {
                    0.0
                }
            } else {
                ellipse_distance(e[1], e[2], y[1], y[2])
            }
        } else if y[0] > 0.0 {
            ellipse_distance(e[0], e[2], y[0], y[2])
        } else {
            (y[2] - e[2]).abs()
        }
    } else {
        let denom0 = e[0] * e[0] - e[2] * e[2];
        let denom1 = e[1] * e[1] - e[2] * e[2];
        let numer0 = e[0] * y[0];
        let numer1 = e[1] * y[1];
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x = [e[0] * xde0, e[1] * xde1, e[2] * discr.sqrt()];
                return geom::dist(x, y);
            }
        }
        ellipse_distance(e[0], e[1], y[0], y[1])
    }
}

/// Shape families for procedural datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sphere,
    Box,
    Ellipsoid,
    Torus,
    Union,
    Difference,
    /// Alternating ellipsoids and boxes.
    EllipsoidBox,
    /// All six kinds, drawn uniformly.
    Mixed,
}

impl Family {
    pub const NAMES: [&'static str; 8] = [
        "sphere",
        "box",
        "ellipsoid",
        "torus",
        "union",
        "difference",
        "ellipsoid-box",
        "mixed",
    ];
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sphere" => Family::Sphere,
            "box" => Family::Box,
            "ellipsoid" => Family::Ellipsoid,
            "torus" => Family::Torus,
            "union" => Family::Union,
            "difference" => Family::Difference,
            "ellipsoid-box" => Family::EllipsoidBox,
            "mixed" => Family::Mixed,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown family `{other}` (expected one of {})",
                    Family::NAMES.join(", ")
                )))
            }
        })
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn jitter<R: Rng>(rng: &mut R, amount: f64) -> Vec3 {
    std::array::from_fn(|_| uniform(rng, -amount, amount))
}

fn random_primitive<R: Rng>(rng: &mut R, kind: ShapeKind, scale: f64, offset: Vec3) -> Primitive {
    let center = geom::add(offset, jitter(rng, 0.04 * scale));
    match kind {
        ShapeKind::Sphere => Primitive::Sphere {
            center,
            radius: uniform(rng, 0.15, 0.4) * scale,
        },
        ShapeKind::Box => Primitive::Box {
            center,
            half_extents: std::array::from_fn(|_| uniform(rng, 0.12, 0.38) * scale),
        },
        ShapeKind::Ellipsoid => Primitive::Ellipsoid {
            center,
            radii: std::array::from_fn(|_| uniform(rng, 0.12, 0.4) * scale),
        },
        ShapeKind::Torus => {
            let minor = uniform(rng, 0.06, 0.13) * scale;
            Primitive::Torus {
                center,
                major: uniform(rng, 0.2, 0.3) * scale,
                minor,
            }
        }
        ShapeKind::Union | ShapeKind::Difference => unreachable!("primitive kinds only"),
    }
}

fn random_solid_kind<R: Rng>(rng: &mut R) -> ShapeKind {
    [ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Ellipsoid][rng.random_range(0..3)]
}

/// Draws one valid shape of the family. Retries internally until the margin rule holds.
pub fn random_shape<R: Rng>(family: Family, rng: &mut R) -> ShapeSpec {
    loop {
        let spec = match family {
            Family::Sphere => {
                ShapeSpec::Primitive(random_primitive(rng, ShapeKind::Sphere, 1.0, [0.0; 3]))
            }
            Family::Box => ShapeSpec::Primitive(random_primitive(rng, ShapeKind::Box, 1.0, [0.0; 3])),
            Family::Ellipsoid => {
                ShapeSpec::Primitive(random_primitive(rng, ShapeKind::Ellipsoid, 1.0, [0.0; 3]))
            }
            Family::Torus => {
                ShapeSpec::Primitive(random_primitive(rng, ShapeKind::Torus, 1.0, [0.0; 3]))
            }
            Family::EllipsoidBox => {
                let kind = if rng.random::<bool>() {
                    ShapeKind::Ellipsoid
                } else {
                    ShapeKind::Box
                };
                ShapeSpec::Primitive(random_primitive(rng, kind, 1.0, [0.0; 3]))
            }
            Family::Union => {
                let axis = rng.random_range(0..3);
                let mut off = [0.0; 3];
                off[axis] = uniform(rng, 0.08, 0.18);
                let ka = random_solid_kind(rng);
                let kb = random_solid_kind(rng);
                ShapeSpec::Union(
                    random_primitive(rng, ka, 0.7, geom::scale(off, -1.0)),
                    random_primitive(rng, kb, 0.7, off),
                )
            }
            Family::Difference => {
                let ka = random_solid_kind(rng);
                let kb = random_solid_kind(rng);
                let off = jitter(rng, 0.2);
                ShapeSpec::Difference(
                    random_primitive(rng, ka, 1.0, [0.0; 3]),
                    random_primitive(rng, kb, 0.6, off),
                )
            }
            Family::Mixed => {
                let pick = [
                    Family::Sphere,
                    Family::Box,
                    Family::Ellipsoid,
                    Family::Torus,
                    Family::Union,
                    Family::Difference,
                ][rng.random_range(0..6)];
                return random_shape(pick, rng);
            }
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(r: f64) -> ShapeOracle {
        make_shape(ShapeSpec::Primitive(Primitive::Sphere {
            center: [0.0; 3],
            radius: r,
        }))
        .unwrap()
    }

    fn box_shape(h: Vec3) -> ShapeOracle {
        make_shape(ShapeSpec::Primitive(Primitive::Box {
            center: [0.0; 3],
            half_extents: h,
        }))
        .unwrap()
    }

    #[test]
    fn sphere_indicator_and_boundary() {
        let s = sphere(0.4);
        assert_eq!(s.indicator([0.0; 3]), 1);
        assert_eq!(s.indicator([0.0, 0.0, 0.39]), 1);
        assert_eq!(s.indicator([0.0, 0.0, 0.41]), 0);
        assert_eq!(s.indicator([0.0, 0.0, 0.4]), 1);
    }

    #[test]
    fn signed_distance_examples() {
        let s = sphere(0.4);
        assert_eq!(s.signed_distance([0.0; 3]), -0.4);
        assert_eq!(s.signed_distance([0.4, 0.0, 0.0]), 0.0);
        let b = box_shape([0.3; 3]);
        assert!((b.signed_distance([0.4, 0.0, 0.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn margin_rule_rejects_oversized_box() {
        let err = make_shape(ShapeSpec::Primitive(Primitive::Box {
            center: [0.0; 3],
            half_extents: [0.6, 0.2, 0.2],
        }))
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
        // touching the margin exactly is fine, crossing it is not
        assert!(make_shape(ShapeSpec::Primitive(Primitive::Sphere {
            center: [0.0; 3],
            radius: 0.48
        }))
        .is_ok());
        assert!(make_shape(ShapeSpec::Primitive(Primitive::Sphere {
            center: [0.0; 3],
            radius: 0.481
        }))
        .is_err());
    }

    #[test]
    fn union_contains_overlap() {
        let u = make_shape(ShapeSpec::Union(
            Primitive::Sphere {
                center: [-0.1, 0.0, 0.0],
                radius: 0.3,
            },
            Primitive::Sphere {
                center: [0.1, 0.0, 0.0],
                radius: 0.3,
            },
        ))
        .unwrap();
        assert_eq!(u.indicator([0.0; 3]), 1);
        assert_eq!(u.indicator([0.39, 0.0, 0.0]), 1);
        assert_eq!(u.indicator([0.41, 0.0, 0.0]), 0);
    }

    #[test]
    fn difference_removes_subtrahend() {
        let d = make_shape(ShapeSpec::Difference(
            Primitive::Sphere {
                center: [0.0; 3],
                radius: 0.4,
            },
            Primitive::Sphere {
                center: [0.2, 0.0, 0.0],
                radius: 0.15,
            },
        ))
        .unwrap();
        assert_eq!(d.indicator([0.0; 3]), 1);
        assert_eq!(d.indicator([0.2, 0.0, 0.0]), 0);
        assert_eq!(d.indicator([-0.3, 0.0, 0.0]), 1);
        // the subtrahend's surface inside the minuend belongs to the result
        assert_eq!(d.indicator([0.05, 0.0, 0.0]), 1);
    }

    #[test]
    fn ellipsoid_distance_matches_dense_surface_search() {
        let radii = [0.35, 0.2, 0.12];
        let e = make_shape(ShapeSpec::Primitive(Primitive::Ellipsoid {
            center: [0.02, -0.01, 0.0],
            radii,
        }))
        .unwrap();
        // dense parametric sampling of the surface as the oracle
        let mut surface = Vec::new();
        let (nt, np) = (400, 800);
        for i in 0..=nt {
            let t = PI * i as f64 / nt as f64;
            for j in 0..np {
                let p = 2.0 * PI * j as f64 / np as f64;
                surface.push([
                    0.02 + radii[0] * t.sin() * p.cos(),
                    -0.01 + radii[1] * t.sin() * p.sin(),
                    radii[2] * t.cos(),
                ]);
            }
        }
        let queries = [
            [0.4, 0.1, 0.05],
            [0.0, 0.0, 0.0],
            [0.1, 0.05, -0.02],
            [-0.3, -0.3, 0.3],
            [0.02, -0.01, 0.3],
            [0.2, 0.0, 0.0],
        ];
        for q in queries {
            let brute = surface
                .iter()
                .map(|&s| geom::dist(s, q))
                .fold(f64::INFINITY, f64::min);
            let sd = e.signed_distance(q);
            assert!(
                (sd.abs() - brute).abs() < 2e-3,
                "q={q:?} sd={sd} brute={brute}"
            );
            assert_eq!(sd <= 0.0, e.indicator(q) == 1);
        }
    }

    #[test]
    fn indicator_agrees_with_signed_distance_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fam in [Family::Mixed, Family::EllipsoidBox, Family::Torus] {
            for _ in 0..20 {
                let o = make_shape(random_shape(fam, &mut rng)).unwrap();
                for p in uniform_points(500, rng.random()) {
                    assert_eq!(o.indicator(p) == 1, o.signed_distance(p) <= 0.0);
                }
                for p in o.sample_surface(50, 1).unwrap() {
                    assert_eq!(o.indicator(p) == 1, o.signed_distance(p) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn uniform_sampling_matches_sphere_volume() {
        let s = sphere(0.4);
        let n = 100_000;
        let set = sample_uniform(&s, n, 11);
        let frac = set.labels().iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let p = 4.0 / 3.0 * PI * 0.4f64.powi(3);
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 3.0 * sigma, "frac={frac} p={p}");
        assert!(set.points().iter().all(|&q| Aabb::UNIT.contains(q)));
    }

    #[test]
    fn sampling_single_point_and_determinism() {
        let s = sphere(0.4);
        assert_eq!(sample_uniform(&s, 1, 0).len(), 1);
        assert_eq!(sample_uniform(&s, 64, 5), sample_uniform(&s, 64, 5));
        assert_eq!(
            sample_near_surface(&s, 64, 0.05, 5).unwrap(),
            sample_near_surface(&s, 64, 0.05, 5).unwrap()
        );
    }

    #[test]
    fn near_surface_label_fraction_for_sphere() {
        let s = sphere(0.4);
        let n = 10_000;
        let sigma = (0.25 / n as f64).sqrt();
        let frac = |noise: f64| {
            let set = sample_near_surface(&s, n, noise, 2).unwrap();
            set.labels().iter().filter(|&&l| l == 1).count() as f64 / n as f64
        };
        // Inside iff |p + e|^2 <= r^2 with e ~ N(0, s^2 I): a noncentral chi-square with
        // 3 dof and noncentrality r^2/s^2, evaluated at r^2/s^2. Curvature pulls the
        // fraction below 1/2: P = 0.450132 at s = 0.05 and 0.495013 at s = 0.005.
        let f = frac(0.05);
        assert!((f - 0.450132).abs() < 3.0 * sigma, "frac={f}");
        let f = frac(0.005);
        assert!((f - 0.5).abs() < 3.0 * sigma, "frac={f}");
    }

    #[test]
    fn degenerate_noise_stays_on_surface() {
        let s = sphere(0.4);
        let set = sample_near_surface(&s, 1000, 1e-9, 4).unwrap();
        assert!(set
            .points()
            .iter()
            .all(|&p| s.signed_distance(p).abs() <= 1e-8));
        assert!(sample_near_surface(&s, 10, 0.0, 4).is_err());
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        let s = sphere(0.4);
        let pts = s.sample_surface(100_000, 9).unwrap();
        assert!(pts.iter().all(|&p| (geom::norm(p) - 0.4).abs() <= 1e-6));
        let mean = pts
            .iter()
            .fold([0.0; 3], |acc, &p| geom::add(acc, p))
            .map(|v| v / pts.len() as f64);
        assert!(geom::norm(mean) < 0.01);

        let b = box_shape([0.3, 0.2, 0.1]);
        for p in b.sample_surface(2000, 1).unwrap() {
            let on_face = (0..3).any(|k| (p[k].abs() - [0.3, 0.2, 0.1][k]).abs() < 1e-12);
            assert!(on_face, "{p:?}");
        }
    }

    #[test]
    fn csg_surface_samples_lie_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for fam in [Family::Union, Family::Difference, Family::Torus, Family::Ellipsoid] {
            for _ in 0..5 {
                let o = make_shape(random_shape(fam, &mut rng)).unwrap();
                for p in o.sample_surface(500, 2).unwrap() {
                    assert!(o.signed_distance(p).abs() <= 1e-6, "{fam:?} {p:?}");
                    assert!(Aabb::UNIT.contains(p));
                }
            }
        }
    }

    #[test]
    fn ellipsoid_area_against_sphere_closed_form() {
        let a = ellipsoid_area([0.3; 3]);
        assert!((a - 4.0 * PI * 0.09).abs() < 1e-6);
    }

    #[test]
    fn descriptor_is_deterministic_and_distinguishes_shapes() {
        let a = sphere(0.3);
        let b = sphere(0.35);
        assert_eq!(a.descriptor(), sphere(0.3).descriptor());
        assert_ne!(a.descriptor(), b.descriptor());
        assert_eq!(a.descriptor()[0], 1.0);
    }

    #[test]
    fn spec_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let spec = random_shape(Family::Mixed, &mut rng);
            let text = spec.to_kv_string();
            let back = ShapeSpec::from_kv_str(&text, Path::new("mem")).unwrap();
            assert_eq!(spec, back);
        }
        let bad = ShapeSpec::from_kv_str("kind=blob\n", Path::new("mem"));
        assert!(bad.is_err());
    }

    #[test]
    fn point_set_text_format() {
        let set = LabeledPointSet::new(
            vec![[0.1, -0.2, 0.3], [0.0, 0.0, 0.0]],
            vec![1, -1],
            LabelConvention::SvmPm1,
        )
        .unwrap();
        let text = set.to_text();
        assert!(text.starts_with("# labels=svm_pm1\n"));
        let back = LabeledPointSet::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(set, back);
        let occ = set.to_convention(LabelConvention::Occupancy01);
        assert_eq!(occ.labels(), &[1, 0]);
        assert_eq!(occ.to_convention(LabelConvention::SvmPm1), set);
        assert!(LabeledPointSet::new(vec![[0.0; 3]], vec![0], LabelConvention::SvmPm1).is_err());
        assert!(LabeledPointSet::new(vec![[0.0; 3]], vec![], LabelConvention::SvmPm1).is_err());
    }
}
