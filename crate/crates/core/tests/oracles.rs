//! Independent oracles: a double-double ray/circle solver and a tracker
//! that follows the particle in the unfolded tube.

use microtube::dynamics::{psi_step, DynamicsParams};
use microtube::geometry::{ray_arc_intersection, Arc, Microstructure, Preset, Vec2};
use microtube::rng::{domain, stream, uniform_open};
use twofloat::TwoFloat;

fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// Entering root of |o + t d − c|² = r² in double-double arithmetic.
fn entering_root_dd(o: Vec2, d: Vec2, c: Vec2, r: f64) -> Option<TwoFloat> {
    let (ox, oy) = (tf(o.x) - tf(c.x), tf(o.y) - tf(c.y));
    let (dx, dy) = (tf(d.x), tf(d.y));
    let a = dx * dx + dy * dy;
    let b = ox * dx + oy * dy;
    let cc = ox * ox + oy * oy - tf(r) * tf(r);
    let disc = b * b - a * cc;
    if disc < tf(0.0) {
        return None;
    }
    Some((-b - disc.sqrt()) / a)
}

#[test]
fn ray_circle_roots_match_double_double() {
    let mut rng = stream(1, domain::DIAGNOSTICS, 100);
    let mut checked = 0;
    for _ in 0..20_000 {
        let r = 0.05 + 3.0 * uniform_open(&mut rng);
        let c = Vec2::new(10.0 * uniform_open(&mut rng) - 5.0, 10.0 * uniform_open(&mut rng) - 5.0);
        let phi = std::f64::consts::TAU * uniform_open(&mut rng);
        let dist = r * (1.5 + 20.0 * uniform_open(&mut rng));
        let o = c + Vec2::new(phi.cos(), phi.sin()) * dist;
        // impact parameter up to 0.98 r
        let b = 0.98 * r * (2.0 * uniform_open(&mut rng) - 1.0);
        let toward = (c - o) * (1.0 / dist);
        let side = Vec2::new(-toward.y, toward.x);
        let aim = c + side * b;
        let d = (aim - o) * (1.0 / (aim - o).norm());
        let want = entering_root_dd(o, d, c, r).expect("ray aimed inside the circle");
        let (t, p, _) = ray_arc_intersection(o, d, &Arc::full_circle(c, r), 0.0).expect("hit");
        let rel = ((tf(t) - want) / want).hi().abs();
        assert!(rel < 1e-13, "t = {t}, dd = {}, rel {rel:e}", want.hi());
        assert!(((p - c).norm() - r).abs() < 1e-12 * (r + dist));
        checked += 1;
    }
    assert_eq!(checked, 20_000);
}

#[test]
fn near_tangent_roots_are_backward_stable() {
    let mut rng = stream(2, domain::DIAGNOSTICS, 100);
    for _ in 0..20_000 {
        let r = 0.1 + uniform_open(&mut rng);
        let c = Vec2::new(0.3, -0.7);
        let o = c + Vec2::new(-5.0 * r, 0.0);
        // impact parameter within 1e-6 r of grazing
        let b = r * (1.0 - 1e-6 * uniform_open(&mut rng));
        let aim = c + Vec2::new(0.0, b);
        let d = (aim - o) * (1.0 / (aim - o).norm());
        let Some((t, _, _)) = ray_arc_intersection(o, d, &Arc::full_circle(c, r), 0.0) else { continue };
        let (px, py) = (tf(o.x) + tf(t) * tf(d.x) - tf(c.x), tf(o.y) + tf(t) * tf(d.y) - tf(c.y));
        let resid = (px * px + py * py - tf(r) * tf(r)).hi().abs();
        assert!(resid < 1e-13 * r * r * 25.0, "residual {resid:e}");
    }
}

/// Particle state in the unfolded tube.
#[derive(Debug, Clone, Copy)]
struct Ray {
    p: Vec2,
    v: Vec2,
}

struct Unfolded {
    result_theta: f64,
    displacement: f64,
    cell: i64,
    exit_x: f64,
}

/// Leaves the bottom wall at x = 0 with angle θ, crosses the tube, enters
/// the top-wall cavity of the lattice shifted by `−shift`, bounces off the
/// reflected arcs, and returns when it crosses `y = W` downwards.
fn unfolded_step(m: &Microstructure, theta: f64, shift: f64, w: f64) -> Option<Unfolded> {
    let (s, c) = theta.sin_cos();
    let x_hit = w * c / s;
    let cell = (x_hit + shift).floor();
    let x0 = cell - shift;
    // local (u, v) ↦ physical (x0 + u, W − v)
    let to_phys = |q: Vec2| Vec2::new(x0 + q.x, w - q.y);
    let circles: Vec<(Vec2, f64, &Arc)> = m.arcs().iter().map(|a| (to_phys(a.center), a.radius, a)).collect();
    let mut ray = Ray { p: Vec2::new(x_hit, w), v: Vec2::new(c, s) };
    let mut last: Option<usize> = None;
    for _ in 0..64 {
        let mut best: Option<(f64, usize)> = None;
        for (i, (cen, r, arc)) in circles.iter().enumerate() {
            if Some(i) == last {
                continue;
            }
            let oc = ray.p - *cen;
            let b = oc.x * ray.v.x + oc.y * ray.v.y;
            let cc = oc.x * oc.x + oc.y * oc.y - r * r;
            let disc = b * b - cc;
            if disc < 0.0 {
                continue;
            }
            for t in [-b - disc.sqrt(), -b + disc.sqrt()] {
                if t <= 1e-12 {
                    continue;
                }
                let hit = ray.p + ray.v * t;
                // polar angle in the local frame, where y is flipped
                let local_angle = (-(hit.y - cen.y)).atan2(hit.x - cen.x);
                let from_start = (arc.angle_start - local_angle).rem_euclid(std::f64::consts::TAU);
                let sweep = arc.angle_start - arc.angle_end;
                if from_start <= sweep + 1e-12 || from_start >= std::f64::consts::TAU - 1e-12 {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                    break;
                }
            }
        }
        let t_open = if ray.v.y < 0.0 { (w - ray.p.y) / ray.v.y } else { f64::INFINITY };
        match best {
            Some((t, i)) if t < t_open => {
                let p = ray.p + ray.v * t;
                let n = (p - circles[i].0) * (1.0 / circles[i].1);
                let vn = ray.v.x * n.x + ray.v.y * n.y;
                ray = Ray { p, v: ray.v - n * (2.0 * vn) };
                last = Some(i);
            }
            _ if t_open.is_finite() => {
                let p = ray.p + ray.v * t_open;
                if !(p.x >= x0 - 1e-9 && p.x <= x0 + 1.0 + 1e-9) {
                    return None;
                }
                return Some(Unfolded {
                    result_theta: (-ray.v.y).atan2(ray.v.x),
                    displacement: w * ray.v.x / -ray.v.y,
                    cell: cell as i64,
                    exit_x: p.x - x0,
                });
            }
            _ => return None,
        }
    }
    None
}

#[test]
fn folded_map_matches_unfolded_tube() {
    let params = DynamicsParams::default();
    for preset in [Preset::TwoCheeksOneBottom, Preset::TwoCheeksThreeBottom] {
        let m = preset.build().unwrap();
        let mut rng = stream(3, domain::DIAGNOSTICS, 200);
        let mut compared = 0;
        for _ in 0..5_000 {
            let theta = 0.05 + (std::f64::consts::PI - 0.1) * uniform_open(&mut rng);
            let r = uniform_open(&mut rng);
            for w in [1.0, 10.0] {
                let (Ok(step), Some(u)) = (psi_step(&m, theta, r, w, &params), unfolded_step(&m, theta, r, w)) else { continue };
                assert!((step.theta_out - u.result_theta).abs() < 1e-9, "{preset:?} θ = {theta}, R = {r}: {} vs {}", step.theta_out, u.result_theta);
                assert_eq!(step.xi, u.cell);
                assert!((step.trace.exit_x() - u.exit_x).abs() < 1e-9);
                assert!((step.x_disp - u.displacement).abs() <= 1e-8 * u.displacement.abs().max(1.0));
                assert_eq!(step.x_disp > 0.0, u.displacement > 0.0);
                compared += 1;
            }
        }
        assert!(compared > 9_000, "{compared}");
    }
}
