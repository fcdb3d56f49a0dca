//! Displacement tails, the √(n ln n) CLT check, KS distances and
//! correlation decay of the angle chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::StatsError;
use crate::random_process::{displacement, sample_mu, thread_pool, ChainEnsemble, ChainModel, VisitStats};
use crate::rng;

/// μ(X > N) = ½(1 − N/√(N² + W²)), evaluated without cancellation.
pub fn tail_exact(n: f64, w: f64) -> Result<f64, StatsError> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(StatsError::DomainError(format!("threshold N = {n}")));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(StatsError::DomainError(format!("tube width W = {w}")));
    }
    let h = n.hypot(w);
    Ok(0.5 * w * w / (h * (h + n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub upper: f64,
    pub lower: f64,
    pub stderr_upper: f64,
    pub stderr_lower: f64,
}

/// Fractions of angles with X(θ) > N and X(θ) < −N, with binomial
/// standard errors.
pub fn tail_empirical(thetas: &[f64], n: f64, w: f64) -> Result<TailPoint, StatsError> {
    if thetas.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (mut up, mut lo) = (0u64, 0u64);
    for &t in thetas {
        let x = displacement(t, w);
        if x > n {
            up += 1;
        } else if x < -n {
            lo += 1;
        }
    }
    let m = thetas.len() as f64;
    let (pu, pl) = (up as f64 / m, lo as f64 / m);
    Ok(TailPoint {
        threshold: n,
        upper: pu,
        lower: pl,
        stderr_upper: (pu * (1.0 - pu) / m).sqrt(),
        stderr_lower: (pl * (1.0 - pl) / m).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub w: f64,
    pub n_samples: usize,
    pub thresholds: Vec<f64>,
    pub empirical_upper: Vec<f64>,
    pub empirical_lower: Vec<f64>,
    pub exact: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

impl TailReport {
    /// Largest |upper − exact| in units of the exact binomial standard error.
    pub fn max_z(&self) -> f64 {
        self.empirical_upper
            .iter()
            .zip(&self.exact)
            .map(|(&e, &p)| (e - p).abs() / (p * (1.0 - p) / self.n_samples as f64).sqrt())
            .fold(0.0, f64::max)
    }
}

pub fn tail_report(thetas: &[f64], thresholds: &[f64], w: f64) -> Result<TailReport, StatsError> {
    let mut r = TailReport {
        w,
        n_samples: thetas.len(),
        thresholds: thresholds.to_vec(),
        empirical_upper: Vec::new(),
        empirical_lower: Vec::new(),
        exact: Vec::new(),
        standard_errors: Vec::new(),
    };
    for &n in thresholds {
        let p = tail_empirical(thetas, n, w)?;
        r.empirical_upper.push(p.upper);
        r.empirical_lower.push(p.lower);
        r.standard_errors.push(p.stderr_upper);
        r.exact.push(tail_exact(n, w)?);
    }
    Ok(r)
}

/// `n` angles drawn from μ on the stream `(seed, TAILS, 0)`.
pub fn sample_mu_many(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::domain::TAILS, 0);
    (0..n).map(|_| sample_mu(&mut rng)).collect()
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples`
/// and `cdf`. Ties and jumps of `cdf` are handled with left limits.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(|a, b| a.total_cmp(b));
    ks_sorted(&xs, cdf)
}

/// [`ks_statistic`] for already sorted samples.
pub fn ks_sorted<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = j as f64 / n;
        d = d.max((at - cdf(x)).abs()).max((cdf(x.next_down()) - below).abs());
        i = j;
    }
    Ok(d.min(1.0))
}

pub fn normal_cdf(sigma: f64) -> impl Fn(f64) -> f64 {
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    move |x| dist.cdf(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: u64,
    pub n_chains: usize,
    pub w: f64,
    pub normalized_samples: Vec<f64>,
    /// KS distance to Normal(0, W²).
    pub ks_distance: f64,
    pub sample_variance: f64,
    pub sample_mean: f64,
}

pub const CLT_MIN_STEPS: u64 = 1_000;
pub const CLT_MIN_CHAINS: usize = 1_000;

/// `S_n / √(n ln n)` per chain against Normal(0, W²).
pub fn clt_from_sums(sums: &[f64], n: u64, w: f64) -> Result<CltReport, StatsError> {
    if n < CLT_MIN_STEPS || sums.len() < CLT_MIN_CHAINS {
        return Err(StatsError::InsufficientData(format!(
            "need n ≥ {CLT_MIN_STEPS} and ≥ {CLT_MIN_CHAINS} chains, got n = {n}, {} chains",
            sums.len()
        )));
    }
    let nf = n as f64;
    let scale = 1.0 / (nf * nf.ln()).sqrt();
    let s: Vec<f64> = sums.iter().map(|x| x * scale).collect();
    let m = s.len() as f64;
    let mean = s.iter().sum::<f64>() / m;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    let ks = ks_statistic(&s, normal_cdf(w))?;
    Ok(CltReport { n, n_chains: s.len(), w, normalized_samples: s, ks_distance: ks, sample_variance: var, sample_mean: mean })
}

/// CLT check at the ensemble's final step.
pub fn clt_check(ens: &ChainEnsemble, w: f64) -> Result<CltReport, StatsError> {
    clt_check_at(ens, ens.n_steps, w)
}

pub fn clt_check_at(ens: &ChainEnsemble, step: u64, w: f64) -> Result<CltReport, StatsError> {
    let sums = ens
        .sums_at(step)
        .ok_or_else(|| StatsError::InsufficientData(format!("no checkpoint at step {step}")))?;
    clt_from_sums(&sums, step, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrConfig {
    pub master_seed: u64,
    pub n_chains: usize,
    /// Jackknife groups.
    pub groups: usize,
    /// Lags with |ρ(k)| below `threshold`·stderr are treated as noise.
    pub threshold: f64,
}

impl Default for CorrConfig {
    fn default() -> Self {
        Self { master_seed: 0, n_chains: 200_000, groups: 20, threshold: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrReport {
    pub lags: Vec<usize>,
    /// C(k) = Cov(f(θ₀), g(θ_k)).
    pub c: Vec<f64>,
    pub c_stderr: Vec<f64>,
    /// ρ(k) = C(k) / (σ_f σ_g).
    pub rho: Vec<f64>,
    pub rho_stderr: Vec<f64>,
    /// Lags used by the fit.
    pub fitted_lags: Vec<usize>,
    /// exp(slope) of ln|ρ(k)| against k, if at least two lags clear the noise.
    pub alpha: Option<f64>,
    /// First lag from which every |ρ(k)| stays below the noise threshold.
    pub noise_from: Option<usize>,
    pub visit_stats: VisitStats,
}

/// Running sums of one jackknife group.
#[derive(Debug, Clone)]
struct CorrSums {
    n: f64,
    f: f64,
    ff: f64,
    g: Vec<f64>,
    gg: Vec<f64>,
    fg: Vec<f64>,
}

impl CorrSums {
    fn new(k: usize) -> Self {
        Self { n: 0.0, f: 0.0, ff: 0.0, g: vec![0.0; k], gg: vec![0.0; k], fg: vec![0.0; k] }
    }

    fn add(&mut self, o: &CorrSums) {
        self.n += o.n;
        self.f += o.f;
        self.ff += o.ff;
        for i in 0..self.g.len() {
            self.g[i] += o.g[i];
            self.gg[i] += o.gg[i];
            self.fg[i] += o.fg[i];
        }
    }

    fn sub(&self, o: &CorrSums) -> CorrSums {
        let mut r = self.clone();
        r.n -= o.n;
        r.f -= o.f;
        r.ff -= o.ff;
        for i in 0..r.g.len() {
            r.g[i] -= o.g[i];
            r.gg[i] -= o.gg[i];
            r.fg[i] -= o.fg[i];
        }
        r
    }

    /// (C(k), ρ(k)) for every lag slot.
    fn estimates(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mf = self.f / n;
        let vf = self.ff / n - mf * mf;
        let vg0 = self.gg[0] / n - (self.g[0] / n).powi(2);
        let norm = (vf * vg0).sqrt();
        let c: Vec<f64> = (0..self.g.len()).map(|i| self.fg[i] / n - mf * self.g[i] / n).collect();
        let rho = c.iter().map(|x| x / norm).collect();
        (c, rho)
    }
}

fn jackknife(total: &CorrSums, groups: &[CorrSums]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, rho) = total.estimates();
    let gn = groups.len() as f64;
    let k = c.len();
    let loo: Vec<(Vec<f64>, Vec<f64>)> = groups.iter().map(|g| total.sub(g).estimates()).collect();
    let mut se_c = vec![0.0; k];
    let mut se_r = vec![0.0; k];
    for i in 0..k {
        let mc = loo.iter().map(|l| l.0[i]).sum::<f64>() / gn;
        let mr = loo.iter().map(|l| l.1[i]).sum::<f64>() / gn;
        se_c[i] = ((gn - 1.0) / gn * loo.iter().map(|l| (l.0[i] - mc).powi(2)).sum::<f64>()).sqrt();
        se_r[i] = ((gn - 1.0) / gn * loo.iter().map(|l| (l.1[i] - mr).powi(2)).sum::<f64>()).sqrt();
    }
    (c, se_c, rho, se_r)
}

/// Least-squares fit of ln|ρ(k)| against k over the leading run of lags
/// whose |ρ| exceeds `threshold` standard errors. Returns the lags used and
/// α = exp(slope).
pub fn fit_decay(lags: &[usize], rho: &[f64], stderr: &[f64], threshold: f64) -> Result<(Vec<usize>, f64), StatsError> {
    let mut used = Vec::new();
    let mut pts = Vec::new();
    for ((&k, &r), &s) in lags.iter().zip(rho).zip(stderr) {
        if r.abs() <= threshold * s || r == 0.0 {
            break;
        }
        used.push(k);
        pts.push((k as f64, r.abs().ln()));
    }
    if pts.len() < 2 {
        let floor = stderr.iter().copied().fold(0.0, f64::max) * threshold;
        return Err(StatsError::NoiseFloor { floor });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok((used, (sxy / sxx).exp()))
}

/// Estimates C(k) = Cov(f(θ₀), g(θ_k)) from `n_chains` chains started from
/// μ, with jackknife errors over contiguous chain groups, and fits the
/// decay rate.
pub fn corr_decay<F, G>(model: &ChainModel, cfg: &CorrConfig, f: F, g: G, lags: &[usize], workers: usize) -> Result<CorrReport, StatsError>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    if lags.is_empty() || cfg.groups < 2 || cfg.n_chains < cfg.groups {
        return Err(StatsError::InsufficientData("need lags, ≥ 2 groups and ≥ 1 chain per group".into()));
    }
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let kmax = *lags.last().unwrap();
    let k = lags.len();
    let per = cfg.n_chains / cfg.groups;
    let results: Vec<Result<(CorrSums, VisitStats), StatsError>> = thread_pool(workers).install(|| {
        (0..cfg.groups)
            .into_par_iter()
            .map(|grp| {
                let mut sums = CorrSums::new(k);
                let mut stats = VisitStats::new(model.params.n_max);
                for chain in grp * per..(grp + 1) * per {
                    let mut rng = rng::stream(cfg.master_seed, rng::domain::CORRELATION, chain as u64);
                    let mut theta = sample_mu(&mut rng);
                    let f0 = f(theta);
                    sums.n += 1.0;
                    sums.f += f0;
                    sums.ff += f0 * f0;
                    let mut li = 0;
                    for step in 0..=kmax {
                        if step > 0 {
                            model
                                .step(&mut theta, &mut rng, &mut stats)
                                .map_err(|e| StatsError::Process(crate::error::ProcessError::Chain { chain, step: step as u64, source: e }))?;
                        }
                        if lags[li] == step {
                            let gk = g(theta);
                            sums.g[li] += gk;
                            sums.gg[li] += gk * gk;
                            sums.fg[li] += f0 * gk;
                            li += 1;
                            if li == k {
                                break;
                            }
                        }
                    }
                }
                Ok((sums, stats))
            })
            .collect()
    });
    let mut groups = Vec::with_capacity(cfg.groups);
    let mut total = CorrSums::new(k);
    let mut stats = VisitStats::new(model.params.n_max);
    for r in results {
        let (s, st) = r?;
        total.add(&s);
        stats.merge(&st);
        groups.push(s);
    }
    let (c, c_stderr, rho, rho_stderr) = jackknife(&total, &groups);
    let (fitted_lags, alpha) = match fit_decay(&lags, &rho, &rho_stderr, cfg.threshold) {
        Ok((used, a)) => (used, Some(a)),
        Err(StatsError::NoiseFloor { .. }) => (Vec::new(), None),
        Err(e) => return Err(e),
    };
    let mut noise_from = None;
    for i in (0..k).rev() {
        if rho[i].abs() > cfg.threshold * rho_stderr[i] {
            break;
        }
        noise_from = Some(lags[i]);
    }
    Ok(CorrReport { lags, c, c_stderr, rho, rho_stderr, fitted_lags, alpha, noise_from, visit_stats: stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_6};

    #[test]
    fn tail_exact_examples() {
        assert_relative_eq!(tail_exact(10.0, 10.0).unwrap(), 0.5 * (1.0 - 1.0 / 2f64.sqrt()), epsilon = 1e-15);
        let w = 3.0;
        let n = 1e4 * w;
        assert!((tail_exact(n, w).unwrap() * 4.0 * n * n / (w * w) - 1.0).abs() < 1e-6);
        // N = W tan(π/3) is X at θ = π/6
        let n = w * FRAC_PI_3.tan();
        assert_relative_eq!(tail_exact(n, w).unwrap(), 0.5 * (1.0 - FRAC_PI_6.cos()), epsilon = 1e-15);
        assert!(tail_exact(0.0, 1.0).is_err());
        assert!(tail_exact(-1.0, 1.0).is_err());
    }

    #[test]
    fn tail_empirical_trivia() {
        let p = tail_empirical(&[std::f64::consts::FRAC_PI_2; 10], 1.0, 10.0).unwrap();
        assert_eq!((p.upper, p.lower), (0.0, 0.0));
        assert!(matches!(tail_empirical(&[], 1.0, 1.0), Err(StatsError::EmptySample)));
    }

    #[test]
    fn ks_trivia() {
        let n = normal_cdf(1.0);
        assert_relative_eq!(ks_statistic(&[0.0], &n).unwrap(), 0.5, epsilon = 1e-15);
        let step = |x: f64| if x >= 2.0 { 1.0 } else { 0.0 };
        assert_eq!(ks_statistic(&[2.0, 2.0, 2.0], step).unwrap(), 0.0);
        assert!(matches!(ks_statistic(&[], &n), Err(StatsError::EmptySample)));
        // two-point sample against uniform on [0,1]
        let d = ks_statistic(&[0.25, 0.75], |x: f64| x.clamp(0.0, 1.0)).unwrap();
        assert_relative_eq!(d, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn clt_requires_data() {
        assert!(matches!(clt_from_sums(&[0.0; 10], 10_000, 1.0), Err(StatsError::InsufficientData(_))));
        assert!(matches!(clt_from_sums(&[0.0; 2000], 10, 1.0), Err(StatsError::InsufficientData(_))));
    }

    #[test]
    fn fit_decay_recovers_geometric_rate() {
        let lags: Vec<usize> = (0..10).collect();
        let rho: Vec<f64> = lags.iter().map(|&k| 0.5f64.powi(k as i32)).collect();
        let se = vec![1e-4; 10];
        let (used, a) = fit_decay(&lags, &rho, &se, 3.0).unwrap();
        assert_eq!(used.len(), 10);
        assert_relative_eq!(a, 0.5, epsilon = 1e-12);
        let (used, _) = fit_decay(&lags, &rho, &vec![0.01; 10], 3.0).unwrap();
        assert_eq!(used, vec![0, 1, 2, 3, 4, 5]);
        assert!(matches!(fit_decay(&lags, &rho, &vec![1.0; 10], 3.0), Err(StatsError::NoiseFloor { .. })));
    }
}
