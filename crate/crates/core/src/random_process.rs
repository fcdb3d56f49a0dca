//! Entry-offset law ν, the invariant angle law μ, and the angle chain
//! θ_{k+1} = Ψ_{R_k}(θ_k) with partial sums of X(θ) = W / tan θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{classify_pattern, exit_displacement, psi_fast, DynamicsParams, FastVisit, GrazingPattern};
use crate::error::{DynamicsError, ProcessError};
use crate::geometry::Microstructure;
use crate::rng::{self, uniform_open, Stream};

/// Law of the entry offset on [0, 1].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NuSpec {
    #[default]
    Uniform,
    /// Density interpolated linearly between knots `[x, h]`; the knots must
    /// start at x = 0, end at x = 1 and integrate to 1.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

/// Validated form of [`NuSpec`] with its cumulative masses.
#[derive(Debug, Clone, PartialEq)]
pub enum Nu {
    Uniform,
    PiecewiseLinear { xs: Vec<f64>, hs: Vec<f64>, cum: Vec<f64> },
}

impl Nu {
    pub fn new(spec: &NuSpec) -> Result<Self, ProcessError> {
        let knots = match spec {
            NuSpec::Uniform => return Ok(Nu::Uniform),
            NuSpec::PiecewiseLinear { knots } => knots,
        };
        let bad = |msg: String| Err(ProcessError::InvalidNu(msg));
        if knots.len() < 2 {
            return bad("need at least two knots".into());
        }
        if knots[0][0] != 0.0 || knots[knots.len() - 1][0] != 1.0 {
            return bad("knots must start at x = 0 and end at x = 1".into());
        }
        let mut cum = vec![0.0];
        for w in knots.windows(2) {
            let ([x0, h0], [x1, h1]) = (w[0], w[1]);
            if !(x1 > x0) {
                return bad(format!("knot x values must increase, got {x0} then {x1}"));
            }
            if !(h0 >= 0.0 && h1 >= 0.0 && h0.is_finite() && h1.is_finite()) {
                return bad("densities must be finite and nonnegative".into());
            }
            cum.push(cum[cum.len() - 1] + 0.5 * (h0 + h1) * (x1 - x0));
        }
        let total = cum[cum.len() - 1];
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("density integrates to {total}, not 1"));
        }
        Ok(Nu::PiecewiseLinear {
            xs: knots.iter().map(|k| k[0]).collect(),
            hs: knots.iter().map(|k| k[1]).collect(),
            cum,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            Nu::Uniform => 1.0,
            Nu::PiecewiseLinear { xs, hs, .. } => {
                let i = segment(xs, x);
                let f = (x - xs[i]) / (xs[i + 1] - xs[i]);
                hs[i] + f * (hs[i + 1] - hs[i])
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match self {
            Nu::Uniform => x,
            Nu::PiecewiseLinear { xs, hs, cum } => {
                let i = segment(xs, x);
                let d = x - xs[i];
                let slope = (hs[i + 1] - hs[i]) / (xs[i + 1] - xs[i]);
                cum[i] + hs[i] * d + 0.5 * slope * d * d
            }
        }
    }

    /// Supremum of the density.
    pub fn h_plus(&self) -> f64 {
        match self {
            Nu::Uniform => 1.0,
            Nu::PiecewiseLinear { hs, .. } => hs.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Nu::Uniform => 0.5,
            Nu::PiecewiseLinear { xs, hs, .. } => xs
                .windows(2)
                .zip(hs.windows(2))
                .map(|(x, h)| {
                    // ∫ x (h0 + s (x − x0)) dx over the segment
                    let (a, b) = (x[0], x[1]);
                    let s = (h[1] - h[0]) / (b - a);
                    let c = h[0] - s * a;
                    c * (b * b - a * a) / 2.0 + s * (b * b * b - a * a * a) / 3.0
                })
                .sum(),
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Nu::Uniform => u,
            Nu::PiecewiseLinear { xs, hs, cum } => {
                let i = cum.partition_point(|&c| c <= u).clamp(1, cum.len() - 1) - 1;
                let rem = (u - cum[i]).max(0.0);
                let h0 = hs[i];
                let slope = (hs[i + 1] - hs[i]) / (xs[i + 1] - xs[i]);
                // root of h0·d + slope·d²/2 = rem without cancellation
                let disc = (h0 * h0 + 2.0 * slope * rem).max(0.0);
                let denom = h0 + disc.sqrt();
                let d = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
                (xs[i] + d).clamp(xs[i], xs[i + 1])
            }
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut Stream) -> f64 {
        self.quantile(uniform_open(rng))
    }
}

fn segment(xs: &[f64], x: f64) -> usize {
    xs.partition_point(|&k| k <= x).clamp(1, xs.len() - 1) - 1
}

pub fn sample_nu(rng: &mut Stream, nu: &Nu) -> f64 {
    nu.sample(rng)
}

/// Quantile of μ = ½ sin θ dθ.
#[inline]
pub fn mu_quantile(u: f64) -> f64 {
    (1.0 - 2.0 * u).acos()
}

#[inline]
pub fn mu_cdf(theta: f64) -> f64 {
    if theta <= 0.0 {
        0.0
    } else if theta >= std::f64::consts::PI {
        1.0
    } else {
        0.5 * (1.0 - theta.cos())
    }
}

#[inline]
pub fn sample_mu(rng: &mut Stream) -> f64 {
    mu_quantile(uniform_open(rng))
}

/// Horizontal displacement of one crossing.
#[inline]
pub fn displacement(theta: f64, w: f64) -> f64 {
    w / theta.tan()
}

/// Counts of near-grazing collision patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatternCounts {
    pub left_only: u64,
    pub right_only: u64,
    pub double_cheek: u64,
    pub other: u64,
}

impl PatternCounts {
    pub fn add(&mut self, p: GrazingPattern) {
        match p {
            GrazingPattern::LeftOnly => self.left_only += 1,
            GrazingPattern::RightOnly => self.right_only += 1,
            GrazingPattern::DoubleCheek => self.double_cheek += 1,
            GrazingPattern::Other => self.other += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.left_only + self.right_only + self.double_cheek + self.other
    }

    pub fn merge(&mut self, o: &PatternCounts) {
        self.left_only += o.left_only;
        self.right_only += o.right_only;
        self.double_cheek += o.double_cheek;
        self.other += o.other;
    }
}

/// Ranges of `sin θ_in / sin² θ_out` and `sin θ_in / √sin θ_out` over
/// near-grazing visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub count: u64,
    pub lower_ratio_min: f64,
    pub lower_ratio_max: f64,
    pub upper_ratio_min: f64,
    pub upper_ratio_max: f64,
}

impl Default for Sandwich {
    fn default() -> Self {
        Self {
            count: 0,
            lower_ratio_min: f64::INFINITY,
            lower_ratio_max: 0.0,
            upper_ratio_min: f64::INFINITY,
            upper_ratio_max: 0.0,
        }
    }
}

impl Sandwich {
    pub fn add(&mut self, sin_in: f64, sin_out: f64) {
        let lower = sin_in / (sin_out * sin_out);
        let upper = sin_in / sin_out.sqrt();
        self.count += 1;
        self.lower_ratio_min = self.lower_ratio_min.min(lower);
        self.lower_ratio_max = self.lower_ratio_max.max(lower);
        self.upper_ratio_min = self.upper_ratio_min.min(upper);
        self.upper_ratio_max = self.upper_ratio_max.max(upper);
    }

    pub fn merge(&mut self, o: &Sandwich) {
        self.count += o.count;
        self.lower_ratio_min = self.lower_ratio_min.min(o.lower_ratio_min);
        self.lower_ratio_max = self.lower_ratio_max.max(o.lower_ratio_max);
        self.upper_ratio_min = self.upper_ratio_min.min(o.upper_ratio_min);
        self.upper_ratio_max = self.upper_ratio_max.max(o.upper_ratio_max);
    }

    /// Smallest C with `C⁻¹ sin²θ_out ≤ sin θ_in ≤ C √sin θ_out` on every
    /// recorded visit.
    pub fn constant(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (1.0 / self.lower_ratio_min).max(self.upper_ratio_max)
    }
}

/// Per-visit bookkeeping collected alongside a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitStats {
    pub visits: u64,
    pub rejections: u64,
    /// `collision_hist[k]` = number of visits with k wall collisions.
    pub collision_hist: Vec<u64>,
    pub max_collisions: usize,
    pub near_grazing: PatternCounts,
    /// Near-grazing visits with more than two collisions.
    pub near_grazing_over_two: u64,
    pub sandwich: Sandwich,
}

impl VisitStats {
    pub fn new(n_max: usize) -> Self {
        Self {
            visits: 0,
            rejections: 0,
            collision_hist: vec![0; n_max + 1],
            max_collisions: 0,
            near_grazing: PatternCounts::default(),
            near_grazing_over_two: 0,
            sandwich: Sandwich::default(),
        }
    }

    pub fn merge(&mut self, o: &VisitStats) {
        self.visits += o.visits;
        self.rejections += o.rejections;
        if self.collision_hist.len() < o.collision_hist.len() {
            self.collision_hist.resize(o.collision_hist.len(), 0);
        }
        for (a, b) in self.collision_hist.iter_mut().zip(&o.collision_hist) {
            *a += b;
        }
        self.max_collisions = self.max_collisions.max(o.max_collisions);
        self.near_grazing.merge(&o.near_grazing);
        self.near_grazing_over_two += o.near_grazing_over_two;
        self.sandwich.merge(&o.sandwich);
    }
}

/// Everything a chain step needs besides the state.
#[derive(Debug, Clone)]
pub struct ChainModel<'a> {
    pub micro: &'a Microstructure,
    pub nu: Nu,
    pub w: f64,
    pub params: DynamicsParams,
    /// Near-grazing threshold on sin θ_in.
    pub eta: f64,
}

impl<'a> ChainModel<'a> {
    pub fn new(micro: &'a Microstructure, nu: Nu, w: f64, params: DynamicsParams, eta: f64) -> Self {
        Self { micro, nu, w, params, eta }
    }
}

/// Attempts per step before a chain gives up on redrawing R.
const MAX_REDRAWS: u64 = 1000;

impl ChainModel<'_> {
    /// One step θ ↦ Ψ_R(θ) with a fresh R, returning `(θ', X(θ'))`.
    /// Degenerate inputs are redrawn and counted in `stats.rejections`.
    #[inline]
    pub fn step(&self, theta: &mut f64, rng: &mut Stream, stats: &mut VisitStats) -> Result<(f64, f64), DynamicsError> {
        let mut redraws = 0;
        loop {
            let r = self.nu.sample(rng);
            match psi_fast(self.micro, *theta, r, self.w, &self.params) {
                Ok(v) => {
                    self.record(*theta, &v, stats);
                    let (next, x) = if v.exit_velocity.y <= self.params.sin_floor {
                        stats.rejections += 1;
                        let t = sample_mu(rng);
                        (t, displacement(t, self.w))
                    } else {
                        (v.theta_out, exit_displacement(v.exit_velocity, self.w))
                    };
                    *theta = next;
                    return Ok((next, x));
                }
                Err(DynamicsError::GrazingDegenerate { .. }) => {
                    *theta = sample_mu(rng);
                    stats.rejections += 1;
                }
                Err(DynamicsError::Geometry(_)) if redraws < MAX_REDRAWS => {
                    redraws += 1;
                    stats.rejections += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl ChainModel<'_> {
    #[inline]
    fn record(&self, theta_in: f64, v: &FastVisit, stats: &mut VisitStats) {
        stats.visits += 1;
        stats.collision_hist[v.n_collisions] += 1;
        stats.max_collisions = stats.max_collisions.max(v.n_collisions);
        // sin θ < η forces min(θ, π − θ) < asin η ≤ η·π/2
        if theta_in.min(std::f64::consts::PI - theta_in) >= self.eta * std::f64::consts::FRAC_PI_2 {
            return;
        }
        let sin_in = theta_in.sin();
        if sin_in < self.eta {
            stats.near_grazing.add(classify_pattern(self.micro, v.n_collisions, v.first_arcs));
            if v.n_collisions > 2 {
                stats.near_grazing_over_two += 1;
            }
            stats.sandwich.add(sin_in, v.exit_velocity.y);
        }
    }
}

/// What to keep from a chain besides its final partial sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    /// Steps k at which `(S_k, θ_k)` is stored.
    pub checkpoints: Vec<u64>,
    /// Keep every `thin`-th angle of the orbit; 0 keeps none.
    pub thin: u64,
    /// Keep the full X sequence.
    pub keep_x: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub theta0: f64,
    pub n_steps: u64,
    /// θ_0, θ_thin, θ_2·thin, ...
    pub orbit: Vec<f64>,
    pub xs: Vec<f64>,
    pub checkpoint_sums: Vec<f64>,
    pub checkpoint_thetas: Vec<f64>,
    pub s_n: f64,
    pub theta_n: f64,
    pub stats: VisitStats,
}

fn run_chain_inner(model: &ChainModel, theta0: f64, n: u64, rng: &mut Stream, rec: &ChainRecord) -> Result<ChainRun, (u64, DynamicsError)> {
    let mut stats = VisitStats::new(model.params.n_max);
    let mut theta = theta0;
    let mut s = 0.0;
    let mut orbit = Vec::new();
    if rec.thin > 0 {
        orbit.reserve((n / rec.thin + 1) as usize);
        orbit.push(theta);
    }
    let mut xs = if rec.keep_x { Vec::with_capacity(n as usize) } else { Vec::new() };
    let mut cp_sums = Vec::with_capacity(rec.checkpoints.len());
    let mut cp_thetas = Vec::with_capacity(rec.checkpoints.len());
    let mut cps = rec.checkpoints.iter().peekable();
    while cps.peek() == Some(&&0) {
        cp_sums.push(0.0);
        cp_thetas.push(theta);
        cps.next();
    }
    for k in 0..n {
        let (next, x) = model.step(&mut theta, rng, &mut stats).map_err(|e| (k, e))?;
        s += x;
        if rec.keep_x {
            xs.push(x);
        }
        let done = k + 1;
        if rec.thin > 0 && done % rec.thin == 0 {
            orbit.push(next);
        }
        while cps.peek() == Some(&&done) {
            cp_sums.push(s);
            cp_thetas.push(next);
            cps.next();
        }
    }
    Ok(ChainRun {
        theta0,
        n_steps: n,
        orbit,
        xs,
        checkpoint_sums: cp_sums,
        checkpoint_thetas: cp_thetas,
        s_n: s,
        theta_n: theta,
        stats,
    })
}

/// Runs one chain of `n` steps from `theta0`. `S_n = Σ_{k<n} X(θ_{k+1})`.
pub fn run_chain(model: &ChainModel, theta0: f64, n: u64, rng: &mut Stream, rec: &ChainRecord) -> Result<ChainRun, ProcessError> {
    if !(theta0 > 0.0 && theta0 < std::f64::consts::PI) {
        return Err(ProcessError::InvalidArgument(format!("theta0 = {theta0} outside (0, π)")));
    }
    let mut rec = rec.clone();
    rec.checkpoints.sort_unstable();
    rec.checkpoints.dedup();
    run_chain_inner(model, theta0, n, rng, &rec).map_err(|(step, source)| ProcessError::Chain { chain: 0, step, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub n_chains: usize,
    pub n_steps: u64,
    /// Extra checkpoints; `n_steps` is always recorded last.
    pub checkpoints: Vec<u64>,
    pub thin: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnsemble {
    pub master_seed: u64,
    pub n_chains: usize,
    pub n_steps: u64,
    pub checkpoints: Vec<u64>,
    pub theta0: Vec<f64>,
    /// `[chain][checkpoint]`.
    pub partial_sums: Vec<Vec<f64>>,
    pub checkpoint_thetas: Vec<Vec<f64>>,
    pub orbits: Vec<Vec<f64>>,
    pub rejection_count: u64,
    pub stats: VisitStats,
}

impl ChainEnsemble {
    pub fn checkpoint_index(&self, step: u64) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == step)
    }

    /// `S_n` of every chain at the given checkpoint step.
    pub fn sums_at(&self, step: u64) -> Option<Vec<f64>> {
        let i = self.checkpoint_index(step)?;
        Some(self.partial_sums.iter().map(|s| s[i]).collect())
    }

    pub fn thetas_at(&self, step: u64) -> Option<Vec<f64>> {
        let i = self.checkpoint_index(step)?;
        Some(self.checkpoint_thetas.iter().map(|s| s[i]).collect())
    }
}

pub fn thread_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Runs `n_chains` chains in parallel; chain i draws θ₀ from μ and all its
/// offsets from the stream `(master_seed, CHAIN, i)`.
pub fn run_ensemble(model: &ChainModel, cfg: &EnsembleConfig, workers: usize) -> Result<ChainEnsemble, ProcessError> {
    if cfg.n_chains == 0 {
        return Err(ProcessError::InvalidArgument("n_chains must be positive".into()));
    }
    let mut checkpoints: Vec<u64> = cfg.checkpoints.iter().copied().filter(|&c| c <= cfg.n_steps).collect();
    checkpoints.push(cfg.n_steps);
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let rec = ChainRecord { checkpoints: checkpoints.clone(), thin: cfg.thin, keep_x: false };
    let runs: Vec<Result<ChainRun, ProcessError>> = thread_pool(workers).install(|| {
        (0..cfg.n_chains)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(cfg.master_seed, rng::domain::CHAIN, i as u64);
                let theta0 = sample_mu(&mut rng);
                run_chain_inner(model, theta0, cfg.n_steps, &mut rng, &rec)
                    .map_err(|(step, source)| ProcessError::Chain { chain: i, step, source })
            })
            .collect()
    });
    let mut stats = VisitStats::new(model.params.n_max);
    let mut out = ChainEnsemble {
        master_seed: cfg.master_seed,
        n_chains: cfg.n_chains,
        n_steps: cfg.n_steps,
        checkpoints,
        theta0: Vec::with_capacity(cfg.n_chains),
        partial_sums: Vec::with_capacity(cfg.n_chains),
        checkpoint_thetas: Vec::with_capacity(cfg.n_chains),
        orbits: Vec::with_capacity(if cfg.thin > 0 { cfg.n_chains } else { 0 }),
        rejection_count: 0,
        stats: VisitStats::new(model.params.n_max),
    };
    for run in runs {
        let run = run?;
        stats.merge(&run.stats);
        out.theta0.push(run.theta0);
        out.partial_sums.push(run.checkpoint_sums);
        out.checkpoint_thetas.push(run.checkpoint_thetas);
        if cfg.thin > 0 {
            out.orbits.push(run.orbit);
        }
    }
    out.rejection_count = stats.rejections;
    out.stats = stats;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::psi_step;
    use crate::geometry::{build_microstructure, Preset, ShapeSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn micro() -> Microstructure {
        build_microstructure(&ShapeSpec::preset(Preset::TwoCheeksOneBottom)).unwrap()
    }

    fn model(m: &Microstructure) -> ChainModel<'_> {
        ChainModel { micro: m, nu: Nu::Uniform, w: 10.0, params: DynamicsParams::default(), eta: 0.1 }
    }

    fn triangle() -> Nu {
        Nu::new(&NuSpec::PiecewiseLinear { knots: vec![[0.0, 0.0], [0.5, 2.0], [1.0, 0.0]] }).unwrap()
    }

    #[test]
    fn mu_quantile_examples() {
        assert_relative_eq!(mu_quantile(0.5), FRAC_PI_2, epsilon = 1e-15);
        assert_relative_eq!(mu_quantile(0.25), FRAC_PI_3, epsilon = 1e-15);
        assert_relative_eq!(mu_cdf(mu_quantile(0.1)), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn nu_validation() {
        assert!(Nu::new(&NuSpec::PiecewiseLinear { knots: vec![[0.0, 1.0], [1.0, 2.0]] }).is_err());
        assert!(Nu::new(&NuSpec::PiecewiseLinear { knots: vec![[0.1, 1.0], [1.0, 1.0]] }).is_err());
        assert!(Nu::new(&NuSpec::PiecewiseLinear { knots: vec![[0.0, -1.0], [0.5, 3.0], [1.0, 1.0]] }).is_err());
        let flat = Nu::new(&NuSpec::PiecewiseLinear { knots: vec![[0.0, 1.0], [1.0, 1.0]] }).unwrap();
        assert_eq!(flat.h_plus(), 1.0);
        assert_relative_eq!(flat.quantile(0.3), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn triangle_quantile_inverts_cdf() {
        let t = triangle();
        assert_relative_eq!(t.mean(), 0.5, epsilon = 1e-15);
        assert_eq!(t.h_plus(), 2.0);
        for k in 1..100 {
            let u = k as f64 / 100.0;
            assert_relative_eq!(t.cdf(t.quantile(u)), u, epsilon = 1e-13);
        }
        // closed form on the rising half: F(x) = 2x²
        assert_relative_eq!(t.quantile(0.125), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_steps_is_empty() {
        let m = micro();
        let mut rng = rng::stream(1, rng::domain::CHAIN, 0);
        let rec = ChainRecord { keep_x: true, ..Default::default() };
        let run = run_chain(&model(&m), 1.0, 0, &mut rng, &rec).unwrap();
        assert_eq!(run.s_n, 0.0);
        assert!(run.xs.is_empty());
    }

    #[test]
    fn chain_is_reproducible_and_matches_replay() {
        let m = micro();
        let md = model(&m);
        let rec = ChainRecord { checkpoints: vec![0, 7, 50], thin: 1, keep_x: true };
        let a = run_chain(&md, 1.2, 50, &mut rng::stream(9, rng::domain::CHAIN, 3), &rec).unwrap();
        let b = run_chain(&md, 1.2, 50, &mut rng::stream(9, rng::domain::CHAIN, 3), &rec).unwrap();
        assert_eq!(a, b);
        // replay with the same offsets
        let mut rng = rng::stream(9, rng::domain::CHAIN, 3);
        let mut theta = 1.2;
        let mut s = 0.0;
        for k in 0..50 {
            let r = md.nu.sample(&mut rng);
            let st = psi_step(&m, theta, r, 10.0, &md.params).unwrap();
            assert_eq!(st.theta_out.to_bits(), a.orbit[k + 1].to_bits());
            assert_eq!(st.x_disp.to_bits(), a.xs[k].to_bits());
            s += st.x_disp;
            theta = st.theta_out;
            if k + 1 == 7 {
                assert_eq!(a.checkpoint_sums[1], s);
            }
        }
        assert_eq!(a.checkpoint_sums, vec![0.0, a.checkpoint_sums[1], s]);
        assert_eq!(a.s_n, s);
    }

    #[test]
    fn ensemble_independent_of_workers() {
        let m = micro();
        let md = model(&m);
        let cfg = EnsembleConfig { master_seed: 5, n_chains: 6, n_steps: 200, checkpoints: vec![10, 100], thin: 10 };
        let one = run_ensemble(&md, &cfg, 1).unwrap();
        let many = run_ensemble(&md, &cfg, 4).unwrap();
        assert_eq!(one, many);
        assert_eq!(one.checkpoints, vec![10, 100, 200]);
        assert_eq!(one.orbits[0].len(), 21);
    }

    #[test]
    fn x_is_antisymmetric() {
        for k in 1..50 {
            let th = PI * k as f64 / 50.0;
            assert_relative_eq!(displacement(PI - th, 10.0), -displacement(th, 10.0), epsilon = 1e-9, max_relative = 1e-12);
        }
    }
}
