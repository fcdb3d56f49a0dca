//! Microstructure shapes built from circular arcs.
//!
//! Every microstructure lives in a local frame: the open side runs from
//! `(0, 0)` to `(1, 0)` and the cavity lies in `y < 0`. The closed part of
//! the boundary is an ordered chain of arcs `[left cheek, inner.., right
//! cheek]` traversed with the cavity on the left, so each arc bulges into
//! the cavity and is traversed clockwise around its own center.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Flights shorter than this are treated as re-hits of the departed arc.
pub const T_MIN_TOLERANCE: f64 = 1e-9;

/// Angular slack when deciding whether a circle point lies on an arc.
const SECTOR_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, y: s }
    }

    #[inline]
    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    #[inline]
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    /// Rotation by +π/2.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Clockwise,
    CounterClockwise,
}

/// A circular arc `center + radius·(cos φ, sin φ)` for φ running from
/// `angle_start` to `angle_end` in the direction given by `orientation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center: Vec2,
    pub radius: f64,
    pub angle_start: f64,
    pub angle_end: f64,
    pub orientation: Orientation,
}

impl Arc {
    /// Clockwise arc, the only orientation that bulges into the cavity.
    pub fn clockwise(center: Vec2, radius: f64, angle_start: f64, angle_end: f64) -> Self {
        Self {
            center,
            radius,
            angle_start,
            angle_end,
            orientation: Orientation::Clockwise,
        }
    }

    pub fn full_circle(center: Vec2, radius: f64) -> Self {
        Self::clockwise(center, radius, PI, PI - TAU)
    }

    pub fn curvature(&self) -> f64 {
        1.0 / self.radius
    }

    /// Unsigned angle swept by the arc, in `[0, 2π]`.
    pub fn sweep(&self) -> f64 {
        match self.orientation {
            Orientation::Clockwise => self.angle_start - self.angle_end,
            Orientation::CounterClockwise => self.angle_end - self.angle_start,
        }
    }

    pub fn length(&self) -> f64 {
        self.radius * self.sweep()
    }

    pub fn point_at(&self, angle: f64) -> Vec2 {
        self.center + Vec2::from_angle(angle) * self.radius
    }

    pub fn start(&self) -> Vec2 {
        self.point_at(self.angle_start)
    }

    pub fn end(&self) -> Vec2 {
        self.point_at(self.angle_end)
    }

    /// Angle travelled from the start of the arc to polar angle `angle`,
    /// reduced to `[0, 2π)`.
    fn offset_of(&self, angle: f64) -> f64 {
        let raw = match self.orientation {
            Orientation::Clockwise => self.angle_start - angle,
            Orientation::CounterClockwise => angle - self.angle_start,
        };
        raw.rem_euclid(TAU)
    }

    pub fn contains_angle(&self, angle: f64) -> bool {
        let off = self.offset_of(angle);
        off <= self.sweep() + SECTOR_SLACK || off >= TAU - SECTOR_SLACK
    }

    /// Arclength coordinate of the point at polar angle `angle`.
    pub fn arclength_at(&self, angle: f64) -> f64 {
        let off = self.offset_of(angle);
        let off = if off > self.sweep() + SECTOR_SLACK { off - TAU } else { off };
        self.radius * off
    }

    /// Unit tangent in the direction of traversal.
    pub fn tangent_at(&self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        match self.orientation {
            Orientation::Clockwise => Vec2::new(s, -c),
            Orientation::CounterClockwise => Vec2::new(-s, c),
        }
    }

    /// Unit normal on the left of the traversal direction.
    pub fn left_normal_at(&self, angle: f64) -> Vec2 {
        self.tangent_at(angle).perp()
    }
}

/// Which piece of the boundary a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitTarget {
    Arc(usize),
    OpenSide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub target: HitTarget,
    pub t: f64,
    pub point: Vec2,
    /// Unit normal pointing into the cavity (for the open side: `(0, -1)`).
    pub inward_normal: Vec2,
    /// Arclength coordinate on the hit arc, or the x coordinate on the open side.
    pub r: f64,
    pub curvature: f64,
}

/// `|v|² − r²`, factored along the dominant coordinate so points close to
/// the circle keep full relative accuracy.
#[inline]
fn power(v: Vec2, r: f64) -> f64 {
    if v.x.abs() > v.y.abs() {
        (v.x - r) * (v.x + r) + v.y * v.y
    } else {
        v.x * v.x + (v.y - r) * (v.y + r)
    }
}

/// Ray/circle intersection for the arc's full circle. Returns the smallest
/// root `t > t_min` whose point lies on the arc, with the outward normal of
/// the circle at that point.
pub fn ray_arc_intersection(origin: Vec2, direction: Vec2, arc: &Arc, t_min: f64) -> Option<(f64, Vec2, f64)> {
    let oc = origin - arc.center;
    let b = oc.dot(direction);
    let c = power(oc, arc.radius);
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable pair of roots: the product of the roots is c.
    let (t1, t2) = if b > 0.0 {
        let q = -b - sq;
        (q, if q != 0.0 { c / q } else { 0.0 })
    } else {
        let q = -b + sq;
        (if q != 0.0 { c / q } else { 0.0 }, q)
    };
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    for t in [lo, hi] {
        if t > t_min {
            let p = origin + direction * t;
            let angle = (p - arc.center).angle();
            if arc.contains_angle(angle) {
                return Some((t, p, angle));
            }
        }
    }
    None
}

/// Public form of [`ray_arc_intersection`] returning a full [`HitRecord`].
pub fn ray_arc_hit(origin: Vec2, direction: Vec2, arc: &Arc, index: usize) -> Option<HitRecord> {
    ray_arc_intersection(origin, direction, arc, T_MIN_TOLERANCE).map(|(t, point, angle)| HitRecord {
        target: HitTarget::Arc(index),
        t,
        point,
        inward_normal: arc.left_normal_at(angle),
        r: arc.arclength_at(angle),
        curvature: arc.curvature(),
    })
}

/// Specular reflection of `v` about the line with unit normal `n`.
#[inline]
pub fn reflect(v: Vec2, n: Vec2) -> Vec2 {
    v - n * (2.0 * v.dot(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TwoCheeksOneBottom,
    TwoCheeksThreeBottom,
}

impl Preset {
    pub fn build(self) -> Result<Microstructure, GeometryError> {
        build_microstructure(&ShapeSpec::preset(self))
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoCheeksOneBottom => "two-cheeks-one-bottom",
            Preset::TwoCheeksThreeBottom => "two-cheeks-three-bottom",
        }
    }

    pub fn params(self) -> ParametricShape {
        match self {
            Preset::TwoCheeksOneBottom => ParametricShape {
                left_cheek: Cheek { radius: 0.5, span: std::f64::consts::FRAC_PI_4 },
                right_cheek: Cheek { radius: 0.5, span: std::f64::consts::FRAC_PI_4 },
                inner: vec![InnerArc { radius: 0.5, end: None }],
            },
            Preset::TwoCheeksThreeBottom => ParametricShape {
                left_cheek: Cheek { radius: 0.35, span: 0.9 },
                right_cheek: Cheek { radius: 0.6, span: 0.7 },
                inner: vec![
                    InnerArc { radius: 0.3, end: Some([0.40, -0.19]) },
                    InnerArc { radius: 0.4, end: Some([0.52, -0.185]) },
                    InnerArc { radius: 0.25, end: None },
                ],
            },
        }
    }
}

/// A cheek is a circle segment tangent to the wall at its open-side corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cheek {
    pub radius: f64,
    /// Angle subtended by the cheek, measured from the tangency point.
    pub span: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerArc {
    pub radius: f64,
    /// End vertex; must be omitted on the last inner arc, which ends where
    /// the right cheek starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricShape {
    pub left_cheek: Cheek,
    pub right_cheek: Cheek,
    #[serde(default)]
    pub inner: Vec<InnerArc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationTolerances {
    /// Minimum corner-angle margin γ₀ (radians).
    pub gamma0: f64,
    /// Normal-cone half width α₀ (radians, below π/2).
    pub alpha0: f64,
    /// Allowed curvature range `[κ_lo, κ_hi]`.
    pub kappa_bounds: [f64; 2],
    pub tangency_tol: f64,
    pub closure_tol: f64,
    pub normal_samples: usize,
}

impl Default for ValidationTolerances {
    fn default() -> Self {
        Self {
            gamma0: 0.2,
            alpha0: 1.2,
            kappa_bounds: [0.05, 1000.0],
            tangency_tol: 1e-10,
            closure_tol: 1e-9,
            normal_samples: 10_000,
        }
    }
}

/// Shape specification as read from the run configuration. Exactly one of
/// `preset`, `parametric` or `arcs` must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric: Option<ParametricShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<Vec<Arc>>,
    #[serde(default)]
    pub tolerances: ValidationTolerances,
}

impl ShapeSpec {
    pub fn preset(preset: Preset) -> Self {
        Self { preset: Some(preset), ..Default::default() }
    }

    pub fn from_arcs(arcs: Vec<Arc>) -> Self {
        Self { arcs: Some(arcs), ..Default::default() }
    }

    pub fn from_params(params: ParametricShape) -> Self {
        Self { parametric: Some(params), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    pub role: String,
    pub center: Vec2,
    pub radius: f64,
    pub angle_start: f64,
    pub angle_end: f64,
    pub kappa: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub gamma0: f64,
    pub alpha0: f64,
    /// Smallest distance of any corner angle to the ends of `(γ₀, π−γ₀)`.
    pub gamma_margin: f64,
    /// `α₀` minus the largest normal deviation from the vertical.
    pub alpha_margin: f64,
    pub corner_angles: Vec<f64>,
    pub max_normal_deviation: f64,
    pub tangency_deviation: [f64; 2],
    pub arcs: Vec<ArcReport>,
}

/// Immutable validated microstructure.
#[derive(Debug, Clone, PartialEq)]
pub struct Microstructure {
    arcs: Vec<Arc>,
    /// Precomputed per-arc data for the hot intersection loop.
    fast: Vec<FastArc>,
    pub gamma0: f64,
    pub alpha0: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    report: ValidationReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FastArc {
    center: Vec2,
    radius: f64,
    start_dir: Vec2,
    end_dir: Vec2,
    curvature: f64,
    minor: bool,
}

impl Microstructure {
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn left_cheek(&self) -> usize {
        0
    }

    pub fn right_cheek(&self) -> usize {
        self.arcs.len() - 1
    }

    /// Number of inner (non-cheek) arcs.
    pub fn inner_count(&self) -> usize {
        self.arcs.len() - 2
    }

    /// Mirror image under `x ↦ 1 − x`, re-ordered so the chain again runs
    /// from `(0,0)` to `(1,0)`.
    pub fn mirrored(&self) -> Result<Microstructure, GeometryError> {
        let arcs = self
            .arcs
            .iter()
            .rev()
            .map(|a| Arc::clockwise(Vec2::new(1.0 - a.center.x, a.center.y), a.radius, PI - a.angle_end, PI - a.angle_start))
            .collect();
        let tol = ValidationTolerances {
            gamma0: self.gamma0,
            alpha0: self.alpha0,
            ..Default::default()
        };
        validate_arcs(arcs, &tol)
    }

    /// Minimal-t hit of the ray over all arcs and the open side. `skip` is
    /// the boundary piece the ray departs from and is never reported.
    pub fn first_hit(&self, origin: Vec2, direction: Vec2, skip: Option<HitTarget>) -> Result<HitRecord, GeometryError> {
        let (target, t) = self
            .first_hit_fast(origin, direction, skip)
            .ok_or(GeometryError::NoIntersection { origin, direction })?;
        let point = origin + direction * t;
        Ok(match target {
            HitTarget::OpenSide => HitRecord {
                target,
                t,
                point,
                inward_normal: Vec2::new(0.0, -1.0),
                r: point.x,
                curvature: 0.0,
            },
            HitTarget::Arc(i) => {
                let arc = &self.arcs[i];
                let angle = (point - arc.center).angle();
                HitRecord {
                    target,
                    t,
                    point,
                    inward_normal: self.inward_normal_at(i, point),
                    r: arc.arclength_at(angle),
                    curvature: arc.curvature(),
                }
            }
        })
    }

    /// Hot-path variant of [`Microstructure::first_hit`]: only the target
    /// and flight length. Arcs are only hit from the cavity side. The
    /// departed piece is excluded by index (a dispersing arc cannot be hit
    /// twice in a row), so any positive flight counts; near the cusps at
    /// the open-side corners genuine flights are far below
    /// [`T_MIN_TOLERANCE`].
    #[inline]
    pub(crate) fn first_hit_fast(&self, origin: Vec2, direction: Vec2, skip: Option<HitTarget>) -> Option<(HitTarget, f64)> {
        let mut best: Option<(HitTarget, f64)> = None;
        let mut best_t = f64::INFINITY;
        for (i, fa) in self.fast.iter().enumerate() {
            if skip == Some(HitTarget::Arc(i)) {
                continue;
            }
            let oc = origin - fa.center;
            let b = oc.dot(direction);
            if b >= 0.0 {
                // moving away from the center: cannot enter the disk
                continue;
            }
            let c = power(oc, fa.radius);
            let disc = b * b - c;
            if disc < 0.0 {
                continue;
            }
            // entering root, computed without cancellation
            let t = c / (-b + disc.sqrt());
            if t <= 0.0 || t >= best_t {
                continue;
            }
            let rel = oc + direction * t;
            if fa.contains(rel) {
                best_t = t;
                best = Some((HitTarget::Arc(i), t));
            }
        }
        if skip != Some(HitTarget::OpenSide) && direction.y > 0.0 {
            let t = -origin.y / direction.y;
            if t >= 0.0 && t < best_t {
                let x = origin.x + direction.x * t;
                if (-1e-12..=1.0 + 1e-12).contains(&x) {
                    best = Some((HitTarget::OpenSide, t));
                }
            }
        }
        best
    }

    /// Inward normal of arc `i` at a point on it. All arcs are clockwise, so
    /// this is the outward radial direction of the arc's circle.
    #[inline]
    pub fn inward_normal_at(&self, i: usize, p: Vec2) -> Vec2 {
        let fa = &self.fast[i];
        (p - fa.center) * fa.curvature
    }

    /// Sample points along the closed boundary with their inward normals.
    pub fn sample_boundary(&self, n: usize) -> Vec<(usize, Vec2, Vec2)> {
        let total: f64 = self.arcs.iter().map(Arc::length).sum();
        let mut out = Vec::with_capacity(n + self.arcs.len());
        for (i, arc) in self.arcs.iter().enumerate() {
            let k = ((arc.length() / total) * n as f64).ceil().max(2.0) as usize;
            for j in 0..=k {
                let frac = j as f64 / k as f64;
                let angle = match arc.orientation {
                    Orientation::Clockwise => arc.angle_start - frac * arc.sweep(),
                    Orientation::CounterClockwise => arc.angle_start + frac * arc.sweep(),
                };
                out.push((i, arc.point_at(angle), arc.left_normal_at(angle)));
            }
        }
        out
    }
}

impl FastArc {
    #[inline]
    fn contains(&self, rel: Vec2) -> bool {
        // clockwise sector from start_dir to end_dir
        if self.minor {
            let slack = SECTOR_SLACK * self.radius;
            self.start_dir.cross(rel) <= slack && rel.cross(self.end_dir) <= slack
        } else {
            !(self.start_dir.cross(rel) > 0.0 && rel.cross(self.end_dir) > 0.0)
        }
    }
}

/// Builds the arc chain for a parametric shape (cheeks plus inner arcs).
pub fn parametric_arcs(p: &ParametricShape) -> Result<Vec<Arc>, GeometryError> {
    let lc = p.left_cheek;
    let rc = p.right_cheek;
    for c in [lc, rc] {
        if !(c.radius > 0.0 && c.radius.is_finite()) {
            return Err(GeometryError::CurvatureOutOfRange { arc: 0, kappa: 1.0 / c.radius });
        }
    }
    let left = Arc::clockwise(Vec2::new(0.0, -lc.radius), lc.radius, FRAC_PI_2, FRAC_PI_2 - lc.span);
    let right = Arc::clockwise(Vec2::new(1.0, -rc.radius), rc.radius, FRAC_PI_2 + rc.span, FRAC_PI_2);
    let mut arcs = vec![left];
    let mut from = left.end();
    for (k, inner) in p.inner.iter().enumerate() {
        let last = k + 1 == p.inner.len();
        let to = match (inner.end, last) {
            (Some(e), false) => Vec2::new(e[0], e[1]),
            (None, true) => right.start(),
            (Some(_), true) => {
                return Err(GeometryError::OpenBoundary {
                    detail: "last inner arc must end at the right cheek; omit its `end`".into(),
                })
            }
            (None, false) => {
                return Err(GeometryError::OpenBoundary {
                    detail: format!("inner arc {k} has no end vertex"),
                })
            }
        };
        arcs.push(arc_through(from, to, inner.radius, k + 1)?);
        from = to;
    }
    arcs.push(right);
    Ok(arcs)
}

/// Minor clockwise arc of the given radius from `from` to `to`.
fn arc_through(from: Vec2, to: Vec2, radius: f64, index: usize) -> Result<Arc, GeometryError> {
    let chord = to - from;
    let len = chord.norm();
    if !(radius > 0.0) || len > 2.0 * radius || len == 0.0 {
        return Err(GeometryError::OpenBoundary {
            detail: format!("arc {index}: radius {radius} cannot span a chord of length {len}"),
        });
    }
    let mid = from + chord * 0.5;
    let right = Vec2::new(chord.y, -chord.x) * (1.0 / len);
    let h = (radius * radius - 0.25 * len * len).sqrt();
    let center = mid + right * h;
    let a0 = (from - center).angle();
    let mut a1 = (to - center).angle();
    while a1 >= a0 {
        a1 -= TAU;
    }
    Ok(Arc::clockwise(center, radius, a0, a1))
}

/// Builds and validates a microstructure from a shape specification.
pub fn build_microstructure(spec: &ShapeSpec) -> Result<Microstructure, GeometryError> {
    let given = spec.preset.is_some() as u8 + spec.parametric.is_some() as u8 + spec.arcs.is_some() as u8;
    if given != 1 {
        return Err(GeometryError::AmbiguousShape);
    }
    let arcs = if let Some(p) = spec.preset {
        parametric_arcs(&p.params())?
    } else if let Some(p) = &spec.parametric {
        parametric_arcs(p)?
    } else {
        spec.arcs.clone().unwrap_or_default()
    };
    validate_arcs(arcs, &spec.tolerances)
}

fn corner_turn(a: &Arc, b: &Arc) -> f64 {
    let t_in = a.tangent_at(a.angle_end);
    let t_out = b.tangent_at(b.angle_start);
    t_in.cross(t_out).atan2(t_in.dot(t_out))
}

/// Checks closure, (M1)-(M4) and simplicity, in that order.
pub fn validate_arcs(arcs: Vec<Arc>, tol: &ValidationTolerances) -> Result<Microstructure, GeometryError> {
    if arcs.len() < 2 {
        return Err(GeometryError::OpenBoundary {
            detail: format!("need at least two cheeks, got {} arcs", arcs.len()),
        });
    }
    if !(tol.alpha0 > 0.0 && tol.alpha0 < FRAC_PI_2) || !(tol.gamma0 > 0.0 && tol.gamma0 < FRAC_PI_2) {
        return Err(GeometryError::BadTolerance {
            detail: format!("need 0 < gamma0 < π/2 and 0 < alpha0 < π/2, got {} and {}", tol.gamma0, tol.alpha0),
        });
    }

    for (i, a) in arcs.iter().enumerate() {
        if a.orientation != Orientation::Clockwise {
            return Err(GeometryError::NotConvex { arc: i });
        }
        let sweep = a.sweep();
        if !(sweep > 0.0 && sweep < TAU) {
            return Err(GeometryError::DegenerateArc { arc: i, sweep });
        }
    }

    // closure
    let first = arcs[0].start();
    if first.norm() > tol.closure_tol {
        return Err(GeometryError::OpenBoundary {
            detail: format!("left cheek starts at ({}, {}), not (0,0)", first.x, first.y),
        });
    }
    for i in 0..arcs.len() - 1 {
        let gap = (arcs[i].end() - arcs[i + 1].start()).norm();
        if gap > tol.closure_tol {
            return Err(GeometryError::OpenBoundary {
                detail: format!("gap of {gap:e} between arcs {i} and {}", i + 1),
            });
        }
    }
    let last = arcs[arcs.len() - 1].end();
    if (last - Vec2::new(1.0, 0.0)).norm() > tol.closure_tol {
        return Err(GeometryError::OpenBoundary {
            detail: format!("right cheek ends at ({}, {}), not (1,0)", last.x, last.y),
        });
    }

    // (M1)
    let [k_lo, k_hi] = tol.kappa_bounds;
    for (i, a) in arcs.iter().enumerate() {
        let kappa = a.curvature();
        if !(kappa.is_finite() && kappa >= k_lo && kappa <= k_hi) {
            return Err(GeometryError::CurvatureOutOfRange { arc: i, kappa });
        }
    }

    // (M2)
    let left_t = arcs[0].tangent_at(arcs[0].angle_start);
    let right = &arcs[arcs.len() - 1];
    let right_t = right.tangent_at(right.angle_end);
    let tangency_deviation = [left_t.angle().abs(), right_t.angle().abs()];
    for (side, dev) in ["left", "right"].into_iter().zip(tangency_deviation) {
        if dev > tol.tangency_tol {
            return Err(GeometryError::TangencyViolation { side, deviation: dev });
        }
    }

    // (M3)
    let mut corner_angles = Vec::with_capacity(arcs.len() - 1);
    for i in 0..arcs.len() - 1 {
        let gamma = PI - corner_turn(&arcs[i], &arcs[i + 1]);
        if !(gamma > tol.gamma0 && gamma < PI - tol.gamma0) {
            return Err(GeometryError::CornerAngleViolation { corner: i, gamma, gamma0: tol.gamma0 });
        }
        corner_angles.push(gamma);
    }
    let gamma_margin = corner_angles
        .iter()
        .map(|&g| (g - tol.gamma0).min(PI - tol.gamma0 - g))
        .fold(f64::INFINITY, f64::min);

    let mut ms = Microstructure {
        fast: arcs
            .iter()
            .map(|a| FastArc {
                center: a.center,
                radius: a.radius,
                start_dir: Vec2::from_angle(a.angle_start),
                end_dir: Vec2::from_angle(a.angle_end),
                curvature: a.curvature(),
                minor: a.sweep() < PI,
            })
            .collect(),
        kappa_min: arcs.iter().map(Arc::curvature).fold(f64::INFINITY, f64::min),
        kappa_max: arcs.iter().map(Arc::curvature).fold(0.0, f64::max),
        gamma0: tol.gamma0,
        alpha0: tol.alpha0,
        arcs,
        report: ValidationReport {
            kappa_min: 0.0,
            kappa_max: 0.0,
            gamma0: tol.gamma0,
            alpha0: tol.alpha0,
            gamma_margin,
            alpha_margin: 0.0,
            corner_angles,
            max_normal_deviation: 0.0,
            tangency_deviation,
            arcs: Vec::new(),
        },
    };

    // (M4), sampled
    let samples = ms.sample_boundary(tol.normal_samples);
    let mut max_dev: f64 = 0.0;
    for &(i, p, n) in &samples {
        let dev = n.x.abs().atan2(n.y);
        if dev > tol.alpha0 {
            return Err(GeometryError::NormalConeViolation { arc: i, at: p, deviation: dev, alpha0: tol.alpha0 });
        }
        max_dev = max_dev.max(dev);
    }

    // simple closed curve: stays below the open side, no crossings
    for &(i, p, _) in &samples {
        if p.y > tol.closure_tol {
            return Err(GeometryError::SelfIntersection {
                detail: format!("arc {i} rises above the open side at ({}, {})", p.x, p.y),
            });
        }
    }
    check_simple(&ms.arcs, tol.closure_tol)?;

    let roles = arc_roles(ms.arcs.len());
    ms.report.kappa_min = ms.kappa_min;
    ms.report.kappa_max = ms.kappa_max;
    ms.report.max_normal_deviation = max_dev;
    ms.report.alpha_margin = tol.alpha0 - max_dev;
    ms.report.arcs = ms
        .arcs
        .iter()
        .zip(roles)
        .map(|(a, role)| ArcReport {
            role,
            center: a.center,
            radius: a.radius,
            angle_start: a.angle_start,
            angle_end: a.angle_end,
            kappa: a.curvature(),
            length: a.length(),
        })
        .collect();
    Ok(ms)
}

fn arc_roles(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i {
            0 => "left_cheek".to_string(),
            i if i + 1 == n => "right_cheek".to_string(),
            i => format!("inner_{i}"),
        })
        .collect()
}

/// Pairwise circle intersections restricted to the arcs. Adjacent arcs may
/// only share their common vertex.
fn check_simple(arcs: &[Arc], tol: f64) -> Result<(), GeometryError> {
    for i in 0..arcs.len() {
        for j in i + 1..arcs.len() {
            let (a, b) = (&arcs[i], &arcs[j]);
            let d = b.center - a.center;
            let dist = d.norm();
            if dist == 0.0 || dist > a.radius + b.radius || dist < (a.radius - b.radius).abs() {
                continue;
            }
            let along = (a.radius * a.radius - b.radius * b.radius + dist * dist) / (2.0 * dist);
            let h = (a.radius * a.radius - along * along).max(0.0).sqrt();
            let base = a.center + d * (along / dist);
            let off = d.perp() * (h / dist);
            for p in [base + off, base - off] {
                let on_a = a.contains_angle((p - a.center).angle());
                let on_b = b.contains_angle((p - b.center).angle());
                if !(on_a && on_b) {
                    continue;
                }
                let shared = (j == i + 1 && (p - a.end()).norm() < 1e3 * tol.max(1e-12))
                    || (i == 0 && j == arcs.len() - 1 && false);
                if !shared {
                    return Err(GeometryError::SelfIntersection {
                        detail: format!("arcs {i} and {j} cross at ({}, {})", p.x, p.y),
                    });
                }
            }
        }
    }
    Ok(())
}
