//! Ulam discretisation of the averaged and twisted angle operators.
//!
//! Angle space `(ε, π − ε)` is cut into `m` cells of equal μ-mass. Row `c`
//! of the matrix estimates `E[e^{itX(θ)} 1{Ψ_R(θ) ∈ c′}]` for `θ ~ μ|c`,
//! `R ~ ν`, so at `t = 0` it is the transition matrix of the angle chain.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TransferError;
use crate::random_process::{displacement, thread_pool, ChainModel, VisitStats};
use crate::rng::{domain, stream, uniform_open};

pub const DEFAULT_EPS_CUT: f64 = 1e-4;
pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 10_000;
/// Block size for the second eigenvalue.
const BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UlamConfig {
    pub m: usize,
    pub samples_per_cell: usize,
    pub eps_cut: f64,
    pub master_seed: u64,
}

impl UlamConfig {
    pub fn new(m: usize, samples_per_cell: usize, master_seed: u64) -> Self {
        UlamConfig { m, samples_per_cell, eps_cut: DEFAULT_EPS_CUT, master_seed }
    }

    fn check(&self) -> Result<(), TransferError> {
        if self.m < 2 {
            return Err(TransferError::InvalidArgument(format!("m = {} must be at least 2", self.m)));
        }
        if self.samples_per_cell == 0 {
            return Err(TransferError::InvalidArgument("samples_per_cell must be positive".into()));
        }
        if !(self.eps_cut > 0.0 && self.eps_cut < 0.5) {
            return Err(TransferError::InvalidArgument(format!("eps_cut = {} outside (0, 0.5)", self.eps_cut)));
        }
        Ok(())
    }
}

/// Equal-μ-mass partition: `cos θ_k = cos ε · (1 − 2k/m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cells {
    pub m: usize,
    pub eps_cut: f64,
}

impl Cells {
    pub fn new(m: usize, eps_cut: f64) -> Self {
        Cells { m, eps_cut }
    }

    pub fn edge(&self, k: usize) -> f64 {
        (self.eps_cut.cos() * (1.0 - 2.0 * k as f64 / self.m as f64)).clamp(-1.0, 1.0).acos()
    }

    /// Cell of θ, and whether θ had to be clamped into the partition.
    pub fn locate(&self, theta: f64) -> (usize, bool) {
        let ce = self.eps_cut.cos();
        let u = (ce - theta.cos()) / (2.0 * ce) * self.m as f64;
        if !(u >= 0.0) {
            (0, true)
        } else if u >= self.m as f64 {
            (self.m - 1, true)
        } else {
            (u as usize, false)
        }
    }

    /// θ inside cell `k` at μ-quantile `u ∈ (0, 1)` of that cell.
    pub fn sample_in(&self, k: usize, u: f64) -> f64 {
        (self.eps_cut.cos() * (1.0 - 2.0 * (k as f64 + u) / self.m as f64)).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamMatrix {
    pub m: usize,
    pub t: f64,
    pub samples_per_cell: usize,
    pub cells: Cells,
    /// Row-major, `entries[c * m + c']`.
    pub entries: Vec<Complex64>,
    /// Targets that left `(ε, π − ε)` and were put in a boundary cell.
    pub escapes: u64,
    pub rejections: u64,
}

impl UlamMatrix {
    pub fn get(&self, c: usize, d: usize) -> Complex64 {
        self.entries[c * self.m + d]
    }

    pub fn row_sums(&self) -> Vec<Complex64> {
        self.entries.chunks(self.m).map(|r| r.iter().sum()).collect()
    }

    /// `3/√samples_per_cell`.
    pub fn mc_tolerance(&self) -> f64 {
        3.0 / (self.samples_per_cell as f64).sqrt()
    }

    pub fn dense(&self) -> Dense {
        Dense { n: self.m, a: self.entries.clone() }
    }

    /// Largest `|K[c][d] − K[m−1−c][m−1−d]|` divided by the binomial
    /// standard error of the pair.
    pub fn reversal_z_max(&self) -> f64 {
        let m = self.m;
        let n = self.samples_per_cell as f64;
        let mut z: f64 = 0.0;
        for c in 0..m {
            for d in 0..m {
                let a = self.get(c, d);
                let b = self.get(m - 1 - c, m - 1 - d);
                let p = 0.5 * (a.norm() + b.norm());
                let se = (2.0 * p.max(1.0 / n) * (1.0 - p).max(0.0) / n).sqrt().max(1.0 / n);
                z = z.max((a - b).norm() / se);
            }
        }
        z
    }

    /// Header `(m: u64, t: f64, samples_per_cell: u64)` then row-major
    /// `(re, im)` pairs, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 16 * self.entries.len());
        out.extend_from_slice(&(self.m as u64).to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(self.samples_per_cell as u64).to_le_bytes());
        for z in &self.entries {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<(usize, f64, usize, Vec<Complex64>), TransferError> {
        let bad = || TransferError::InvalidArgument("truncated Ulam dump".into());
        let word = |i: usize| -> Result<[u8; 8], TransferError> { b.get(i..i + 8).and_then(|s| s.try_into().ok()).ok_or_else(bad) };
        let m = u64::from_le_bytes(word(0)?) as usize;
        let t = f64::from_le_bytes(word(8)?);
        let spc = u64::from_le_bytes(word(16)?) as usize;
        if b.len() != 24 + 16 * m * m {
            return Err(bad());
        }
        let entries = (0..m * m)
            .map(|k| Ok(Complex64::new(f64::from_le_bytes(word(24 + 16 * k)?), f64::from_le_bytes(word(32 + 16 * k)?))))
            .collect::<Result<Vec<_>, TransferError>>()?;
        Ok((m, t, spc, entries))
    }
}

struct CellRows {
    rows: Vec<Vec<Complex64>>,
    escapes: u64,
    rejections: u64,
}

fn sample_cell(model: &ChainModel, cfg: &UlamConfig, cells: &Cells, ts: &[f64], c: usize) -> Result<CellRows, TransferError> {
    let m = cfg.m;
    let mut rng = stream(cfg.master_seed, domain::ULAM, c as u64);
    let mut stats = VisitStats::new(model.params.n_max);
    let mut rows = vec![vec![Complex64::new(0.0, 0.0); m]; ts.len()];
    let mut escapes = 0;
    for _ in 0..cfg.samples_per_cell {
        let theta = cells.sample_in(c, uniform_open(&mut rng));
        let x = displacement(theta, model.w);
        let mut th = theta;
        let (next, _) = model.step(&mut th, &mut rng, &mut stats).map_err(TransferError::Dynamics)?;
        let (d, clamped) = cells.locate(next);
        escapes += clamped as u64;
        for (row, &t) in rows.iter_mut().zip(ts) {
            row[d] += if t == 0.0 { Complex64::new(1.0, 0.0) } else { Complex64::from_polar(1.0, t * x) };
        }
    }
    let n = cfg.samples_per_cell as f64;
    for row in &mut rows {
        for z in row.iter_mut() {
            *z /= n;
        }
    }
    Ok(CellRows { rows, escapes, rejections: stats.rejections })
}

/// One matrix per `t`, all from the same samples.
pub fn build_ulam_family(model: &ChainModel, cfg: &UlamConfig, ts: &[f64], workers: usize) -> Result<Vec<UlamMatrix>, TransferError> {
    cfg.check()?;
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(TransferError::InvalidArgument("non-finite twist".into()));
    }
    let cells = Cells::new(cfg.m, cfg.eps_cut);
    let per_cell: Vec<CellRows> = thread_pool(workers).install(|| {
        (0..cfg.m).into_par_iter().map(|c| sample_cell(model, cfg, &cells, ts, c)).collect::<Result<Vec<_>, _>>()
    })?;
    let escapes = per_cell.iter().map(|r| r.escapes).sum();
    let rejections = per_cell.iter().map(|r| r.rejections).sum();
    Ok(ts
        .iter()
        .enumerate()
        .map(|(j, &t)| UlamMatrix {
            m: cfg.m,
            t,
            samples_per_cell: cfg.samples_per_cell,
            cells,
            entries: per_cell.iter().flat_map(|r| r.rows[j].iter().copied()).collect(),
            escapes,
            rejections,
        })
        .collect())
}

pub fn build_ulam(model: &ChainModel, cfg: &UlamConfig, t: f64, workers: usize) -> Result<UlamMatrix, TransferError> {
    Ok(build_ulam_family(model, cfg, &[t], workers)?.remove(0))
}

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub a: Vec<Complex64>,
}

impl Dense {
    pub fn from_real(n: usize, a: &[f64]) -> Self {
        assert_eq!(a.len(), n * n);
        Dense { n, a: a.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }

    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        for (o, row) in out.iter_mut().zip(self.a.chunks(self.n)) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply_transpose(&self, v: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (vi, row) in v.iter().zip(self.a.chunks(self.n)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    /// All eigenvalues, for cross-checks on small matrices.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        let mat = DMatrix::from_row_slice(self.n, self.n, &self.a);
        let mut ev: Vec<Complex64> = mat.schur().eigenvalues().map(|v| v.iter().copied().collect()).unwrap_or_default();
        ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        ev
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub lambda: Complex64,
    pub vector: Vec<Complex64>,
    pub iterations: usize,
    pub residual: f64,
}

fn power<F: Fn(&[Complex64], &mut [Complex64])>(n: usize, op: F) -> Result<Eigen, TransferError> {
    let mut v = vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut last = Complex64::new(f64::NAN, 0.0);
    for it in 1..=EIGEN_MAX_ITER {
        op(&v, &mut w);
        let lambda = dot(&v, &w);
        let residual = norm(&w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        let converged = (lambda - last).norm() < EIGEN_TOL;
        let nw = norm(&w);
        if converged || nw == 0.0 {
            return Ok(Eigen { lambda, vector: v, iterations: it, residual });
        }
        if it == EIGEN_MAX_ITER {
            return Err(TransferError::NoConvergence { iterations: it, last_re: lambda.re, last_im: lambda.im, residual });
        }
        last = lambda;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
    }
    unreachable!()
}

/// Dominant eigenvalue by power iteration with a Rayleigh quotient, and
/// the unit right eigenvector.
pub fn leading_eigen(k: &Dense) -> Result<Eigen, TransferError> {
    power(k.n, |v, o| k.apply(v, o))
}

/// Dominant left eigenvector `ℓ` with `ℓᵀK = λℓᵀ`.
pub fn leading_left(k: &Dense) -> Result<Eigen, TransferError> {
    power(k.n, |v, o| k.apply_transpose(v, o))
}

/// Left dominant vector at t = 0 normalised to a probability vector.
pub fn stationary_vector(k: &Dense) -> Result<Vec<f64>, TransferError> {
    let l = leading_left(k)?;
    let s: Complex64 = l.vector.iter().sum();
    Ok(l.vector.iter().map(|z| (z / s).re).collect())
}

/// Total variation to the uniform vector, which is μ on equal-mass cells.
pub fn tv_to_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    0.5 * p.iter().map(|x| (x - u).abs()).sum::<f64>()
}

fn orthonormalize(q: &mut [Vec<Complex64>]) {
    for j in 0..q.len() {
        for i in 0..j {
            let (a, b) = q.split_at_mut(j);
            let h = dot(&a[i], &b[0]);
            for (x, y) in b[0].iter_mut().zip(&a[i]) {
                *x -= h * y;
            }
        }
        let nn = norm(&q[j]);
        if nn > 0.0 {
            q[j].iter_mut().for_each(|x| *x /= nn);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub gap: f64,
    pub iterations: usize,
}

/// `1 − |λ₂|`: the dominant pair is deflated, `K′ = K − λ₁ r ℓᵀ/(ℓᵀr)`,
/// and block power iteration on `K′` gives λ₂ from Ritz values, which also
/// copes with a complex-conjugate or ± pair of equal modulus.
pub fn spectral_gap(k: &Dense) -> Result<GapReport, TransferError> {
    let n = k.n;
    let right = leading_eigen(k)?;
    let left = leading_left(k)?;
    let l1 = right.lambda;
    let lr: Complex64 = left.vector.iter().zip(&right.vector).map(|(a, b)| a * b).sum();
    if lr.norm() < 1e-300 {
        return Err(TransferError::InvalidArgument("left and right dominant vectors are orthogonal".into()));
    }
    let deflated = |v: &[Complex64], o: &mut [Complex64]| {
        k.apply(v, o);
        let s: Complex64 = left.vector.iter().zip(v).map(|(a, b)| a * b).sum::<Complex64>() * l1 / lr;
        for (oi, ri) in o.iter_mut().zip(&right.vector) {
            *oi -= s * ri;
        }
    };
    // the deflated operator loses rank, so the block stays below n
    let (l2, iterations) = block_iteration(n, BLOCK.min(n - 1).max(1), deflated)?;
    Ok(GapReport { lambda1: l1, lambda2: l2, gap: 1.0 - l2.norm(), iterations })
}

/// Largest-modulus Ritz value; near-ties go to the larger real part, then
/// to the upper half plane.
fn dominant_ritz(ritz: &[Complex64]) -> Complex64 {
    let top = ritz.iter().map(|z| z.norm()).fold(0.0, f64::max);
    ritz.iter()
        .copied()
        .filter(|z| z.norm() >= top * (1.0 - 1e-9))
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .unwrap_or_default()
}

/// Block power iteration of width `p` from a seeded random start;
/// converged when the modulus of the dominant Ritz value settles.
fn block_iteration<F: Fn(&[Complex64], &mut [Complex64])>(n: usize, p: usize, op: F) -> Result<(Complex64, usize), TransferError> {
    let mut rng = stream(0, domain::DIAGNOSTICS, n as u64);
    let mut q: Vec<Vec<Complex64>> =
        (0..p).map(|_| (0..n).map(|_| Complex64::new(uniform_open(&mut rng) - 0.5, uniform_open(&mut rng) - 0.5)).collect()).collect();
    orthonormalize(&mut q);
    let mut z = vec![vec![Complex64::new(0.0, 0.0); n]; p];
    let mut last = f64::NAN;
    let mut lead = Complex64::new(0.0, 0.0);
    for it in 1..=EIGEN_MAX_ITER {
        for (qj, zj) in q.iter().zip(z.iter_mut()) {
            op(qj, zj);
        }
        let h = DMatrix::from_fn(p, p, |i, j| dot(&q[i], &z[j]));
        let ritz = h.schur().eigenvalues().map(|v| v.iter().copied().collect::<Vec<_>>()).unwrap_or_default();
        lead = dominant_ritz(&ritz);
        let r = lead.norm();
        if (r - last).abs() < EIGEN_TOL || z.iter().all(|v| norm(v) == 0.0) {
            return Ok((lead, it));
        }
        last = r;
        std::mem::swap(&mut q, &mut z);
        orthonormalize(&mut q);
    }
    Err(TransferError::NoConvergence { iterations: EIGEN_MAX_ITER, last_re: lead.re, last_im: lead.im, residual: f64::NAN })
}

/// Dominant eigenvalue of a twisted matrix. Power iteration first; when two
/// eigenvalues share the top modulus it cannot settle, and block iteration
/// takes over. The flag says whether power iteration converged.
pub fn dominant_eigenvalue(k: &Dense) -> Result<(Complex64, bool), TransferError> {
    match leading_eigen(k) {
        Ok(e) => Ok((e.lambda, true)),
        Err(TransferError::NoConvergence { .. }) => Ok((block_iteration(k.n, BLOCK.min(k.n), |v, o| k.apply(v, o))?.0, false)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub one_minus_re: f64,
    /// `t² ln(1/|t|)`.
    pub basis: f64,
    /// False when the top modulus is shared and block iteration was used.
    pub power_converged: bool,
}

pub fn curve_basis(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t * (1.0 / t.abs()).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub m: usize,
    pub samples_per_cell: usize,
    pub lambda0: Complex64,
    pub gap: f64,
    pub lambda2: Complex64,
    pub stationary_tv: f64,
    pub escapes: u64,
    pub lambda_curve: Vec<CurvePoint>,
    pub fit_window: [f64; 2],
    /// Least squares through the origin of `1 − Re λ_t` on `t² ln(1/|t|)`.
    pub fitted_coefficient: Option<f64>,
}

/// Least-squares slope through the origin over `window[0] ≤ |t| ≤ window[1]`.
pub fn fit_through_origin(points: &[CurvePoint], window: [f64; 2]) -> Option<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points.iter().filter(|p| p.t.abs() >= window[0] && p.t.abs() <= window[1] && p.t != 0.0) {
        sxy += p.basis * p.one_minus_re;
        sxx += p.basis * p.basis;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Matrices for `t = 0` and every `t` in `ts` from shared samples; λ_t per
/// twist, the gap and stationary vector at `t = 0`, and the fit.
pub fn lambda_curve(
    model: &ChainModel,
    cfg: &UlamConfig,
    ts: &[f64],
    window: [f64; 2],
    workers: usize,
) -> Result<(SpectralReport, Vec<UlamMatrix>), TransferError> {
    let mut all = vec![0.0];
    all.extend(ts.iter().copied().filter(|&t| t != 0.0));
    let mats = build_ulam_family(model, cfg, &all, workers)?;
    let k0 = mats[0].dense();
    let lead = leading_eigen(&k0)?;
    let gap = spectral_gap(&k0)?;
    let pi = stationary_vector(&k0)?;
    let lambdas: Vec<(Complex64, bool)> =
        thread_pool(workers).install(|| mats.par_iter().map(|k| dominant_eigenvalue(&k.dense())).collect::<Result<Vec<_>, _>>())?;
    let curve: Vec<CurvePoint> = all
        .iter()
        .zip(&lambdas)
        .map(|(&t, &(l, ok))| CurvePoint { t, lambda_re: l.re, lambda_im: l.im, one_minus_re: 1.0 - l.re, basis: curve_basis(t), power_converged: ok })
        .collect();
    let report = SpectralReport {
        m: cfg.m,
        samples_per_cell: cfg.samples_per_cell,
        lambda0: lead.lambda,
        gap: gap.gap,
        lambda2: gap.lambda2,
        stationary_tv: tv_to_uniform(&pi),
        escapes: mats[0].escapes,
        fitted_coefficient: fit_through_origin(&curve, window),
        lambda_curve: curve,
        fit_window: window,
    };
    Ok((report, mats))
}
