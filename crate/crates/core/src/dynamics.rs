//! One visit to a microstructure, the random angle map Ψ_R and its derivative.
//!
//! Both tube walls are folded into the local frame of [`Microstructure`]: a
//! particle leaving through the open side with velocity `(cos θ, sin θ)`
//! enters the next cavity with velocity `(cos θ, −sin θ)` after drifting
//! `W / tan θ` along the wall.

use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;
use crate::geometry::{reflect, HitTarget, Microstructure, Vec2};

pub const DEFAULT_N_MAX: usize = 64;
pub const DEFAULT_SIN_FLOOR: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub n_max: usize,
    pub sin_floor: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX, sin_floor: DEFAULT_SIN_FLOOR }
    }
}

/// One boundary event of a visit. Open-side events (entry and exit) have
/// `arc_index = None`, `r` equal to the x coordinate and `theta` measured
/// from the +x direction. Wall collisions use clockwise arclength along the
/// arc and the angle to the outgoing velocity from the tangent that keeps
/// the cavity on its right, which is the convention the collision
/// Jacobian is written in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub arc_index: Option<usize>,
    pub r: f64,
    pub theta: f64,
    pub kappa: f64,
    pub tau: f64,
    pub position: Vec2,
    pub velocity_out: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitTrace {
    #[serde(rename = "R")]
    pub entry_offset: f64,
    pub theta_in: f64,
    /// `[entry, wall collisions.., exit]`.
    pub events: Vec<CollisionEvent>,
    pub theta_out: f64,
    pub n_collisions: usize,
}

impl VisitTrace {
    pub fn collisions(&self) -> &[CollisionEvent] {
        &self.events[1..self.events.len() - 1]
    }

    pub fn arc_sequence(&self) -> Vec<usize> {
        self.collisions().iter().filter_map(|e| e.arc_index).collect()
    }

    pub fn exit_x(&self) -> f64 {
        self.events[self.events.len() - 1].r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub theta_out: f64,
    pub xi: i64,
    pub x_disp: f64,
    pub trace: VisitTrace,
}

/// Angle of `v` from the tangent `t`, turning toward the cavity normal `n`.
#[inline]
fn tangent_angle(v: Vec2, t: Vec2, n: Vec2) -> f64 {
    v.dot(n).atan2(v.dot(t))
}

/// `(sin θ, cos θ)`, or an error inside the grazing band.
#[inline]
fn checked_sin_cos(theta: f64, sin_floor: f64) -> Result<(f64, f64), DynamicsError> {
    let (s, c) = theta.sin_cos();
    if !(theta > 0.0 && theta < std::f64::consts::PI) || s <= sin_floor {
        return Err(DynamicsError::GrazingDegenerate { theta, sin_floor });
    }
    Ok((s, c))
}

/// Traces a particle entering at `(offset, 0)` with velocity
/// `(cos θ_in, −sin θ_in)` until it leaves through the open side.
pub fn trace_visit(m: &Microstructure, offset: f64, theta_in: f64, params: &DynamicsParams) -> Result<VisitTrace, DynamicsError> {
    let (s, c) = checked_sin_cos(theta_in, params.sin_floor)?;
    if !(0.0..=1.0).contains(&offset) {
        return Err(DynamicsError::InvalidArgument(format!("entry offset {offset} outside [0, 1]")));
    }
    let mut pos = Vec2::new(offset, 0.0);
    let mut vel = Vec2::new(c, -s);
    let mut events = Vec::with_capacity(6);
    events.push(CollisionEvent {
        arc_index: None,
        r: offset,
        theta: theta_in,
        kappa: 0.0,
        tau: 0.0,
        position: pos,
        velocity_out: vel,
    });
    let mut skip = Some(HitTarget::OpenSide);
    let mut n = 0usize;
    loop {
        let hit = m.first_hit(pos, vel, skip)?;
        match hit.target {
            HitTarget::OpenSide => {
                let theta_out = vel.y.atan2(vel.x);
                events.push(CollisionEvent {
                    arc_index: None,
                    r: hit.point.x,
                    theta: theta_out,
                    kappa: 0.0,
                    tau: hit.t,
                    position: hit.point,
                    velocity_out: vel,
                });
                return Ok(VisitTrace { entry_offset: offset, theta_in, events, theta_out, n_collisions: n });
            }
            HitTarget::Arc(i) => {
                n += 1;
                if n > params.n_max {
                    return Err(DynamicsError::CollisionCapExceeded { cap: params.n_max, theta_in, offset });
                }
                vel = reflect(vel, hit.inward_normal);
                vel = vel * (1.0 / vel.norm());
                // tangent against the arclength direction, cavity on its right
                let tangent = hit.inward_normal.perp();
                events.push(CollisionEvent {
                    arc_index: Some(i),
                    r: hit.r,
                    theta: tangent_angle(vel, tangent, hit.inward_normal),
                    kappa: hit.curvature,
                    tau: hit.t,
                    position: hit.point,
                    velocity_out: vel,
                });
                pos = hit.point;
                skip = Some(hit.target);
            }
        }
    }
}

/// Allocation-free visit summary for Monte Carlo loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastVisit {
    pub theta_out: f64,
    pub exit_x: f64,
    /// Exit velocity `(cos θ_out, sin θ_out)`.
    pub exit_velocity: Vec2,
    pub n_collisions: usize,
    /// First two wall arcs hit.
    pub first_arcs: [Option<usize>; 2],
}

pub fn visit_fast(m: &Microstructure, offset: f64, theta_in: f64, params: &DynamicsParams) -> Result<FastVisit, DynamicsError> {
    let (s, c) = checked_sin_cos(theta_in, params.sin_floor)?;
    visit_fast_sc(m, offset, theta_in, s, c, params)
}

#[inline]
fn visit_fast_sc(m: &Microstructure, offset: f64, theta_in: f64, s: f64, c: f64, params: &DynamicsParams) -> Result<FastVisit, DynamicsError> {
    let mut pos = Vec2::new(offset, 0.0);
    let mut vel = Vec2::new(c, -s);
    let mut skip = Some(HitTarget::OpenSide);
    let mut n = 0usize;
    let mut first_arcs = [None; 2];
    loop {
        let (target, t) = m
            .first_hit_fast(pos, vel, skip)
            .ok_or(crate::error::GeometryError::NoIntersection { origin: pos, direction: vel })?;
        let p = pos + vel * t;
        match target {
            HitTarget::OpenSide => {
                return Ok(FastVisit {
                    theta_out: vel.y.atan2(vel.x),
                    exit_x: p.x,
                    exit_velocity: vel,
                    n_collisions: n,
                    first_arcs,
                });
            }
            HitTarget::Arc(i) => {
                if n < 2 {
                    first_arcs[n] = Some(i);
                }
                n += 1;
                if n > params.n_max {
                    return Err(DynamicsError::CollisionCapExceeded { cap: params.n_max, theta_in, offset });
                }
                let normal = m.inward_normal_at(i, p);
                vel = reflect(vel, normal);
                // renormalise so rounding never accumulates over long visits
                vel = vel * (1.0 / vel.norm());
                pos = p;
                skip = Some(target);
            }
        }
    }
}

/// Entry offset and cell displacement for a particle that left the previous
/// cavity at offset `r` with angle θ, given `(sin θ, cos θ)`.
#[inline]
pub fn entry_after_flight(r: f64, sin_theta: f64, cos_theta: f64, w: f64) -> (f64, i64) {
    let pos = r + w * cos_theta / sin_theta;
    let cell = pos.floor();
    let mut offset = pos - cell;
    if offset >= 1.0 {
        offset = 0.0;
    }
    (offset, cell as i64)
}

/// One step of the random angle map: flight across the tube from phase `r`,
/// then a full visit.
pub fn psi_step(m: &Microstructure, theta: f64, r: f64, w: f64, params: &DynamicsParams) -> Result<StepResult, DynamicsError> {
    let (s, c) = checked_sin_cos(theta, params.sin_floor)?;
    if !(w > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("tube width {w} must be positive")));
    }
    let (offset, xi) = entry_after_flight(r, s, c, w);
    let trace = trace_visit(m, offset, theta, params)?;
    let theta_out = trace.theta_out;
    let v = trace.events[trace.events.len() - 1].velocity_out;
    Ok(StepResult { theta_out, xi, x_disp: exit_displacement(v, w), trace })
}

/// `W / tan θ_out` from the exit velocity `(cos θ_out, sin θ_out)`.
#[inline]
pub fn exit_displacement(v: Vec2, w: f64) -> f64 {
    w * v.x / v.y
}

/// Angle-only version of [`psi_step`] for the hot loops.
#[inline]
pub fn psi_fast(m: &Microstructure, theta: f64, r: f64, w: f64, params: &DynamicsParams) -> Result<FastVisit, DynamicsError> {
    let (s, c) = checked_sin_cos(theta, params.sin_floor)?;
    let (offset, _) = entry_after_flight(r, s, c, w);
    visit_fast_sc(m, offset, theta, s, c, params)
}

pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Derivative of the collision map `(r_prev, θ_prev) ↦ (r_cur, θ_cur)`.
pub fn collision_jacobian(
    tau: f64,
    kappa_prev: f64,
    kappa_cur: f64,
    theta_prev: f64,
    theta_cur: f64,
    sin_floor: f64,
) -> Result<Mat2, DynamicsError> {
    let sc = theta_cur.sin();
    if sc <= sin_floor {
        return Err(DynamicsError::SingularCollision { sin_theta: sc });
    }
    let sp = theta_prev.sin();
    let f = -1.0 / sc;
    Ok([
        [f * (tau * kappa_prev + sp), f * tau],
        [f * (tau * kappa_cur * kappa_prev + kappa_prev * sc + kappa_cur * sp), f * (tau * kappa_cur + sc)],
    ])
}

/// Derivative of the flight across the tube.
pub fn flight_jacobian(theta: f64, w: f64, sin_floor: f64) -> Result<Mat2, DynamicsError> {
    let s = theta.sin();
    if s <= sin_floor {
        return Err(DynamicsError::SingularFlight { sin_theta: s });
    }
    Ok([[1.0, w / (s * s)], [0.0, 1.0]])
}

/// Full Jacobian `DF_exit ⋯ DF_1 · Dh` of a traced visit, in the
/// coordinates `(r, θ)` of the events.
pub fn visit_jacobian(trace: &VisitTrace, w: f64, sin_floor: f64) -> Result<Mat2, DynamicsError> {
    let mut acc = flight_jacobian(trace.theta_in, w, sin_floor)?;
    let ev = &trace.events;
    for k in 1..ev.len() {
        let prev = &ev[k - 1];
        let cur = &ev[k];
        let df = collision_jacobian(cur.tau, prev.kappa, cur.kappa, prev.theta, cur.theta, sin_floor)?;
        acc = mat_mul(&df, &acc);
    }
    Ok(acc)
}

/// Sensitivities `(dr_j/dθ, dθ_j/dθ)` of every event of the visit to the
/// incoming angle, in chain coordinates; index 0 is the entry.
pub fn chain_sensitivities(trace: &VisitTrace, w: f64, sin_floor: f64) -> Result<Vec<[f64; 2]>, DynamicsError> {
    let mut acc = flight_jacobian(trace.theta_in, w, sin_floor)?;
    let ev = &trace.events;
    let mut out = Vec::with_capacity(ev.len());
    out.push([acc[0][1], acc[1][1]]);
    for k in 1..ev.len() {
        let (prev, cur) = (&ev[k - 1], &ev[k]);
        let df = collision_jacobian(cur.tau, prev.kappa, cur.kappa, prev.theta, cur.theta, sin_floor)?;
        acc = mat_mul(&df, &acc);
        out.push([acc[0][1], acc[1][1]]);
    }
    Ok(out)
}

/// `dθ_out/dθ` of Ψ_R at θ, from the chain of Jacobians. Fails with
/// [`DynamicsError::BranchBoundary`] if the collision sequence changes
/// within `±10·FD_STEP`.
pub fn step_derivative(m: &Microstructure, theta: f64, r: f64, w: f64, params: &DynamicsParams) -> Result<f64, DynamicsError> {
    let step = psi_step(m, theta, r, w, params)?;
    let probe = 10.0 * FD_STEP;
    let seq = step.trace.arc_sequence();
    for th in [theta - probe, theta + probe] {
        let other = psi_step(m, th, r, w, params)?;
        if other.trace.arc_sequence() != seq || other.xi != step.xi {
            return Err(DynamicsError::BranchBoundary { theta, probe });
        }
    }
    let jac = visit_jacobian(&step.trace, w, params.sin_floor)?;
    Ok(jac[1][1])
}

/// Central finite difference of Ψ_R at θ.
pub fn step_derivative_fd(m: &Microstructure, theta: f64, r: f64, w: f64, h: f64, params: &DynamicsParams) -> Result<f64, DynamicsError> {
    let up = psi_step(m, theta + h, r, w, params)?.theta_out;
    let down = psi_step(m, theta - h, r, w, params)?.theta_out;
    Ok((up - down) / (2.0 * h))
}

/// Lower bound on `|Ψ'_R|` in terms of the first curvature and the entry
/// and exit angles.
pub fn expansion_lower_bound(trace: &VisitTrace, w: f64) -> f64 {
    let kappa1 = trace.collisions().first().map_or(0.0, |e| e.kappa);
    let si = trace.theta_in.sin();
    let so = trace.theta_out.sin();
    1.0 + w * kappa1 / (si * si.max(so))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrazingPattern {
    LeftOnly,
    RightOnly,
    DoubleCheek,
    Other,
}

/// Classifies a visit by its wall-collision sequence.
pub fn classify_pattern(m: &Microstructure, n_collisions: usize, first_arcs: [Option<usize>; 2]) -> GrazingPattern {
    let (l, r) = (m.left_cheek(), m.right_cheek());
    match (n_collisions, first_arcs) {
        (1, [Some(a), _]) if a == l => GrazingPattern::LeftOnly,
        (1, [Some(a), _]) if a == r => GrazingPattern::RightOnly,
        (2, [Some(a), Some(b)]) if (a == l && b == r) || (a == r && b == l) => GrazingPattern::DoubleCheek,
        _ => GrazingPattern::Other,
    }
}

/// `τκκ′ + κ′ sin θ + κ sin θ′` over consecutive wall collisions; the
/// smallest value over a visit, or `None` if it has fewer than two.
pub fn triangle_min(trace: &VisitTrace) -> Option<f64> {
    trace
        .collisions()
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            b.tau * a.kappa * b.kappa + a.kappa * b.theta.sin() + b.kappa * a.theta.sin()
        })
        .reduce(f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_microstructure, Preset, ShapeSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn preset(p: Preset) -> Microstructure {
        build_microstructure(&ShapeSpec::preset(p)).unwrap()
    }

    #[test]
    fn normal_incidence_on_symmetric_preset() {
        let m = preset(Preset::TwoCheeksOneBottom);
        let tr = trace_visit(&m, 0.5, FRAC_PI_2, &DynamicsParams::default()).unwrap();
        assert_eq!(tr.n_collisions, 1);
        assert_eq!(tr.arc_sequence(), vec![1]);
        assert_relative_eq!(tr.theta_out, FRAC_PI_2, epsilon = 1e-14);
        let st = psi_step(&m, FRAC_PI_2, 0.5, 10.0, &DynamicsParams::default()).unwrap();
        assert_relative_eq!(st.theta_out, FRAC_PI_2, epsilon = 1e-14);
        assert!(st.x_disp.abs() < 1e-12);
    }

    #[test]
    fn vertical_flight_has_no_drift() {
        let m = preset(Preset::TwoCheeksOneBottom);
        for r in [0.01, 0.3, 0.999] {
            let st = psi_step(&m, FRAC_PI_2, r, 10.0, &DynamicsParams::default()).unwrap();
            assert!(st.xi == 0 || st.xi == -1);
            assert_relative_eq!(st.trace.entry_offset, r, epsilon = 1e-12);
        }
    }

    #[test]
    fn collision_jacobian_examples() {
        let a = collision_jacobian(1.0, 1.0, 1.0, FRAC_PI_2, FRAC_PI_2, 1e-12).unwrap();
        let expect = [[-2.0, -1.0], [-3.0, -2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(a[i][j], expect[i][j], epsilon = 1e-15);
            }
        }
        let b = collision_jacobian(2.0, 0.0, 1.0, FRAC_PI_2, FRAC_PI_2, 1e-12).unwrap();
        let expect = [[-1.0, -2.0], [-1.0, -3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(b[i][j], expect[i][j], epsilon = 1e-15);
            }
        }
        assert_relative_eq!(det(&a), 1.0, epsilon = 1e-15);
        assert_relative_eq!(det(&b), 1.0, epsilon = 1e-15);
        assert!(collision_jacobian(1.0, 1.0, 1.0, 1.0, 0.0, 1e-12).is_err());
    }

    #[test]
    fn flight_jacobian_examples() {
        assert_eq!(flight_jacobian(FRAC_PI_2, 10.0, 1e-12).unwrap(), [[1.0, 10.0], [0.0, 1.0]]);
        let f = flight_jacobian(FRAC_PI_6, 1.0, 1e-12).unwrap();
        assert_relative_eq!(f[0][1], 4.0, epsilon = 1e-14);
        assert_eq!(det(&f), 1.0);
        assert!(matches!(flight_jacobian(0.0, 1.0, 1e-12), Err(DynamicsError::SingularFlight { .. })));
    }

    #[test]
    fn grazing_entry_is_rejected() {
        let m = preset(Preset::TwoCheeksOneBottom);
        assert!(matches!(
            trace_visit(&m, 0.5, 1e-13, &DynamicsParams::default()),
            Err(DynamicsError::GrazingDegenerate { .. })
        ));
        assert!(trace_visit(&m, 0.5, PI, &DynamicsParams::default()).is_err());
    }

    #[test]
    fn fast_path_matches_full_trace() {
        let m = preset(Preset::TwoCheeksThreeBottom);
        let p = DynamicsParams::default();
        for k in 0..500 {
            let theta = 0.01 + (PI - 0.02) * (k as f64 * 0.618034).fract();
            let off = (k as f64 * 0.41421356).fract();
            let full = trace_visit(&m, off, theta, &p).unwrap();
            let fast = visit_fast(&m, off, theta, &p).unwrap();
            assert_eq!(full.n_collisions, fast.n_collisions);
            assert_relative_eq!(full.theta_out, fast.theta_out, epsilon = 1e-12);
            assert_relative_eq!(full.exit_x(), fast.exit_x, epsilon = 1e-12);
        }
    }

    #[test]
    fn speed_is_conserved() {
        let m = preset(Preset::TwoCheeksThreeBottom);
        for k in 0..200 {
            let theta = 0.05 + 3.0 * (k as f64 * 0.754877).fract();
            let off = (k as f64 * 0.569840).fract();
            let tr = trace_visit(&m, off, theta, &DynamicsParams::default()).unwrap();
            for e in &tr.events {
                assert_relative_eq!(e.velocity_out.norm(), 1.0, epsilon = 1e-12);
                assert!(e.theta >= 0.0 && e.theta <= PI);
            }
        }
    }

    #[test]
    fn mirror_symmetry_of_symmetric_preset() {
        let m = preset(Preset::TwoCheeksOneBottom);
        let p = DynamicsParams::default();
        for k in 1..100 {
            let theta = 0.03 + 3.0 * (k as f64 * 0.7548776).fract();
            let off = (k as f64 * 0.5698402).fract();
            let a = trace_visit(&m, off, theta, &p).unwrap();
            let b = trace_visit(&m, 1.0 - off, PI - theta, &p).unwrap();
            assert_relative_eq!(a.theta_out, PI - b.theta_out, epsilon = 1e-9);
        }
    }
}
