use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use microtube::checks::{self, Check, CheckError};
use microtube::config::RunConfig;
use microtube::dynamics::psi_step;
use microtube::geometry::Microstructure;
use microtube::output::{partial_sums_bytes, read_partial_sums, write_csv, write_json, write_traces};
use microtube::random_process::{run_ensemble, sample_mu, ChainEnsemble, ChainModel, EnsembleConfig, Nu, VisitStats};
use microtube::rng::{domain, stream};
use microtube::{ConfigError, DynamicsError, GeometryError, ProcessError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_GEOMETRY: u8 = 2;
pub const EXIT_CAP: u8 = 3;
pub const EXIT_CHECKS: u8 = 4;

const TRACE_VISITS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Simulate,
    Tails,
    Clt,
    Spectrum,
    Diagnostics,
    All,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Simulate => "simulate",
            Stage::Tails => "tails",
            Stage::Clt => "clt",
            Stage::Spectrum => "spectrum",
            Stage::Diagnostics => "diagnostics",
            Stage::All => "all",
        }
    }
}

pub struct Settings {
    pub config: PathBuf,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub dump_traces: bool,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("chain {chain} step {step}: {source}")]
    CollisionCap { chain: usize, step: u64, source: DynamicsError },
    #[error(transparent)]
    Check(CheckError),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Io(_) => EXIT_CONFIG,
            Failure::Geometry(_) => EXIT_GEOMETRY,
            Failure::CollisionCap { .. } => EXIT_CAP,
            Failure::Check(_) => EXIT_CHECKS,
        }
    }
}

fn from_process(e: ProcessError) -> Failure {
    match e {
        ProcessError::Chain { chain, step, source: source @ DynamicsError::CollisionCapExceeded { .. } } => Failure::CollisionCap { chain, step, source },
        ProcessError::Dynamics(DynamicsError::Geometry(g)) => Failure::Geometry(g),
        other => Failure::Check(CheckError::Process(other)),
    }
}

impl From<CheckError> for Failure {
    fn from(e: CheckError) -> Self {
        match e {
            CheckError::Process(p) => from_process(p),
            CheckError::Stats(microtube::StatsError::Process(p)) => from_process(p),
            CheckError::Transfer(microtube::TransferError::Process(p)) => from_process(p),
            other => Failure::Check(other),
        }
    }
}

/// Variant name of an error, e.g. `CornerAngleViolation`.
fn kind<E: std::fmt::Debug>(e: &E) -> String {
    let d = format!("{e:?}");
    d.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
}

#[derive(Debug, Serialize)]
struct RunSummary {
    config_hash: String,
    command: &'static str,
    passed: bool,
    exit_code: u8,
    checks: Vec<Check>,
    artifacts: Vec<String>,
    timings_s: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct Ctx<'a> {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    settings: &'a Settings,
    summary: RunSummary,
    ensemble: Option<ChainEnsemble>,
}

impl Ctx<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.summary.artifacts.push(p.display().to_string());
        p
    }

    fn record(&mut self, checks: impl IntoIterator<Item = Check>) {
        for c in checks {
            println!("{}", c.line());
            self.summary.checks.push(c);
        }
    }

    fn micro(&self) -> Result<Microstructure, Failure> {
        Ok(self.cfg.build_microstructure()?)
    }

    fn model<'m>(&self, micro: &'m Microstructure) -> Result<ChainModel<'m>, Failure> {
        let nu = Nu::new(&self.cfg.nu).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ChainModel::new(micro, nu, self.cfg.tube_width, self.cfg.dynamics(), self.cfg.eta))
    }

    fn workers(&self) -> usize {
        self.settings.workers
    }
}

pub fn execute(stage: Stage, settings: &Settings) -> u8 {
    let cfg = match RunConfig::load(&settings.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = settings.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let hash = cfg.hash();
    let mut ctx = Ctx {
        cfg,
        summary: RunSummary {
            config_hash: hash.clone(),
            command: stage.name(),
            passed: false,
            exit_code: EXIT_OK,
            checks: Vec::new(),
            artifacts: Vec::new(),
            timings_s: BTreeMap::new(),
            error: None,
        },
        hash,
        out,
        settings,
        ensemble: None,
    };
    let stages: &[Stage] = match stage {
        Stage::All => &[Stage::Validate, Stage::Simulate, Stage::Tails, Stage::Clt, Stage::Spectrum, Stage::Diagnostics],
        _ => std::slice::from_ref(&stage),
    };
    let mut code = EXIT_OK;
    for &s in stages {
        let t = Instant::now();
        let r = match s {
            Stage::Validate => validate(&mut ctx),
            Stage::Simulate => simulate(&mut ctx),
            Stage::Tails => tails(&mut ctx),
            Stage::Clt => clt(&mut ctx),
            Stage::Spectrum => spectrum(&mut ctx),
            Stage::Diagnostics => diagnostics(&mut ctx),
            Stage::All => unreachable!(),
        };
        ctx.summary.timings_s.insert(s.name().to_string(), t.elapsed().as_secs_f64());
        if let Err(e) = r {
            eprintln!("error: {e}");
            code = e.code();
            ctx.summary.error = Some(e.to_string());
            break;
        }
    }
    if code == EXIT_OK && ctx.summary.checks.iter().any(|c| !c.passed) {
        code = EXIT_CHECKS;
    }
    ctx.summary.exit_code = code;
    ctx.summary.passed = code == EXIT_OK;
    let p = ctx.path("run_summary.json");
    if let Err(e) = write_json(&p, &ctx.summary) {
        eprintln!("error: cannot write {}: {e}", p.display());
        return EXIT_CONFIG;
    }
    code
}

fn validate(ctx: &mut Ctx) -> Result<(), Failure> {
    let p = ctx.path("validation.json");
    match ctx.cfg.build_microstructure() {
        Ok(m) => {
            write_json(&p, &json!({ "config_hash": ctx.hash, "valid": true, "report": m.report() }))?;
            let r = m.report();
            println!("valid: gamma margin {:.4}, alpha margin {:.4}, kappa ∈ [{:.4}, {:.4}]", r.gamma_margin, r.alpha_margin, r.kappa_min, r.kappa_max);
            Ok(())
        }
        Err(e) => {
            write_json(&p, &json!({ "config_hash": ctx.hash, "valid": false, "error": { "kind": kind(&e), "message": e.to_string() } }))?;
            Err(e.into())
        }
    }
}

fn stats_json(s: &VisitStats) -> serde_json::Value {
    json!({
        "visits": s.visits,
        "rejections": s.rejections,
        "max_collisions": s.max_collisions,
        "near_grazing": s.near_grazing,
        "near_grazing_over_two": s.near_grazing_over_two,
        "sandwich": s.sandwich,
        "sandwich_constant": s.sandwich.constant(),
    })
}

fn simulate(ctx: &mut Ctx) -> Result<(), Failure> {
    let micro = ctx.micro()?;
    let model = ctx.model(&micro)?;
    let ecfg = EnsembleConfig {
        master_seed: ctx.cfg.seed,
        n_chains: ctx.cfg.n_chains,
        n_steps: ctx.cfg.n_steps,
        checkpoints: ctx.cfg.all_checkpoints(),
        thin: 0,
    };
    let ens = run_ensemble(&model, &ecfg, ctx.workers()).map_err(from_process)?;
    let bin = ctx.path("partial_sums.bin");
    std::fs::write(&bin, partial_sums_bytes(&ens.partial_sums))?;
    let p = ctx.path("ensemble_summary.json");
    write_json(
        &p,
        &json!({
            "config_hash": ctx.hash,
            "seed": ens.master_seed,
            "n_chains": ens.n_chains,
            "n_steps": ens.n_steps,
            "checkpoints": ens.checkpoints,
            "partial_sums_file": "partial_sums.bin",
            "rejection_count": ens.rejection_count,
            "visit_stats": stats_json(&ens.stats),
            "partial_sums": ens.partial_sums,
        }),
    )?;
    let p = ctx.path("collisions.csv");
    let rows: Vec<Vec<String>> = ens.stats.collision_hist.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, c)| vec![k.to_string(), c.to_string()]).collect();
    write_csv(&p, &ctx.hash, &["collisions", "visits"], rows)?;
    let n_max = ctx.cfg.n_max;
    ctx.record(checks::boundedness("configured", &ens.stats, n_max));
    ctx.record([checks::sandwich("configured", &ens.stats)]);
    if ctx.settings.dump_traces {
        let mut rng = stream(ctx.cfg.seed, domain::VISITS, 0);
        let mut theta = sample_mu(&mut rng);
        let mut traces = Vec::with_capacity(TRACE_VISITS);
        while traces.len() < TRACE_VISITS {
            let r = model.nu.sample(&mut rng);
            match psi_step(&micro, theta, r, model.w, &model.params) {
                Ok(s) if s.theta_out.sin() > model.params.sin_floor => {
                    theta = s.theta_out;
                    traces.push(s.trace);
                }
                Ok(_) | Err(DynamicsError::GrazingDegenerate { .. }) => theta = sample_mu(&mut rng),
                Err(DynamicsError::Geometry(_)) => {}
                Err(e) => return Err(Failure::Check(CheckError::Dynamics(e))),
            }
        }
        let p = ctx.path("traces.jsonl");
        write_traces(&p, &traces)?;
    }
    ctx.ensemble = Some(ens);
    Ok(())
}

/// The ensemble written by a previous `simulate` with the same config.
fn load_ensemble(out: &Path, hash: &str) -> Option<ChainEnsemble> {
    let text = std::fs::read_to_string(out.join("ensemble_summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    if v["config_hash"].as_str()? != hash {
        return None;
    }
    let checkpoints: Vec<u64> = serde_json::from_value(v["checkpoints"].clone()).ok()?;
    let sums = read_partial_sums(&std::fs::read(out.join("partial_sums.bin")).ok()?, checkpoints.len()).ok()?;
    Some(ChainEnsemble {
        master_seed: v["seed"].as_u64()?,
        n_chains: sums.len(),
        n_steps: v["n_steps"].as_u64()?,
        checkpoints,
        theta0: Vec::new(),
        partial_sums: sums,
        checkpoint_thetas: Vec::new(),
        orbits: Vec::new(),
        rejection_count: v["rejection_count"].as_u64()?,
        stats: VisitStats::new(0),
    })
}

fn clt(ctx: &mut Ctx) -> Result<(), Failure> {
    let micro = ctx.micro()?;
    let model = ctx.model(&micro)?;
    let short = ctx.cfg.clt.short_n;
    if short >= ctx.cfg.n_steps {
        return Err(ConfigError::Invalid(format!("clt.short_n = {short} must be below n_steps = {}", ctx.cfg.n_steps)).into());
    }
    let ens = match ctx.ensemble.take().or_else(|| load_ensemble(&ctx.out, &ctx.hash)) {
        Some(e) => e,
        None => {
            let ecfg = EnsembleConfig { master_seed: ctx.cfg.seed, n_chains: ctx.cfg.n_chains, n_steps: ctx.cfg.n_steps, checkpoints: ctx.cfg.all_checkpoints(), thin: 0 };
            run_ensemble(&model, &ecfg, ctx.workers()).map_err(from_process)?
        }
    };
    let extra: Vec<u64> = (1..ctx.cfg.clt.seeds).map(|k| ctx.cfg.seed.wrapping_add(k)).collect();
    let (main, outcome, checks) = checks::clt(&model, &ens, short, &extra, ctx.workers())?;
    let sums = ens.sums_at(ens.n_steps).unwrap_or_default();
    let p = ctx.path("clt.csv");
    let rows = sums.iter().zip(&main.normalized_samples).enumerate().map(|(i, (s, z))| vec![i.to_string(), format!("{s:e}"), format!("{z:e}")]);
    write_csv(&p, &ctx.hash, &["chain", "S_n", "normalized"], rows)?;
    let p = ctx.path("clt.json");
    write_json(
        &p,
        &json!({
            "config_hash": ctx.hash,
            "n": main.n,
            "n_chains": main.n_chains,
            "w": main.w,
            "ks_distance": main.ks_distance,
            "sample_variance": main.sample_variance,
            "sample_mean": main.sample_mean,
            "seeds": outcome,
        }),
    )?;
    ctx.record(checks);
    ctx.ensemble = Some(ens);
    Ok(())
}

fn tails(ctx: &mut Ctx) -> Result<(), Failure> {
    let t = &ctx.cfg.tails;
    let (rep, checks) = checks::tails(ctx.cfg.tube_width, t.samples, &t.thresholds, ctx.cfg.seed)?;
    let p = ctx.path("tails.csv");
    let rows = (0..rep.thresholds.len()).map(|i| {
        vec![
            format!("{}", rep.thresholds[i]),
            format!("{:e}", rep.exact[i]),
            format!("{:e}", rep.empirical_upper[i]),
            format!("{:e}", rep.empirical_lower[i]),
            format!("{:e}", rep.standard_errors[i]),
        ]
    });
    write_csv(&p, &ctx.hash, &["N", "exact", "emp_upper", "emp_lower", "stderr"], rows)?;
    ctx.record(checks);
    Ok(())
}

fn curve_csv(ctx: &mut Ctx, name: &str, report: &microtube::transfer::SpectralReport) -> Result<(), Failure> {
    let p = ctx.path(name);
    let rows = report.lambda_curve.iter().map(|c| {
        vec![format!("{}", c.t), format!("{:e}", c.lambda_re), format!("{:e}", c.lambda_im), format!("{:e}", c.one_minus_re), format!("{:e}", c.basis), c.power_converged.to_string()]
    });
    write_csv(&p, &ctx.hash, &["t", "re_lambda", "im_lambda", "one_minus_re", "t2_log_inv_t", "power_converged"], rows)?;
    Ok(())
}

fn spectrum(ctx: &mut Ctx) -> Result<(), Failure> {
    let micro = ctx.micro()?;
    let model = ctx.model(&micro)?;
    let u = ctx.cfg.ulam.clone();
    let (outcome, mats, checks) = checks::spectrum(&model, &ctx.cfg.ulam_config(u.m), &u.t_values, u.fit_window, u.refine, ctx.workers())?;
    let p = ctx.path("ulam_t0.bin");
    std::fs::write(&p, mats[0].to_bytes())?;
    let p = ctx.path("spectrum.json");
    write_json(&p, &json!({ "config_hash": ctx.hash, "report": outcome.coarse, "refined": outcome.fine }))?;
    curve_csv(ctx, "lambda_curve.csv", &outcome.coarse)?;
    if let Some(f) = &outcome.fine {
        curve_csv(ctx, "lambda_curve_refined.csv", f)?;
    }
    ctx.record(checks);
    Ok(())
}

fn diagnostics(ctx: &mut Ctx) -> Result<(), Failure> {
    let micro = ctx.micro()?;
    let model = ctx.model(&micro)?;
    let d = ctx.cfg.diagnostics.clone();
    let seed = ctx.cfg.seed;
    let (jac, mut all) = checks::jacobians(&micro, ctx.cfg.tube_width, &model.params, d.jacobian_points, seed)?;
    let (push, c) = checks::pushforward(&model, &d.fixed_offsets, d.pushforward_samples, seed, ctx.workers())?;
    all.push(c);
    let (corr, c) = checks::mixing(&model, d.corr_chains, d.corr_max_lag, seed, ctx.workers())?;
    all.extend(c);
    all.push(checks::determinism(&model, seed, [1, ctx.workers().max(2)])?);
    for (i, (_, r)) in corr.iter().enumerate() {
        let p = ctx.path(if i == 0 { "corr.csv" } else { "corr_sin.csv" });
        let rows = r.lags.iter().enumerate().map(|(j, k)| vec![k.to_string(), format!("{:e}", r.c[j]), format!("{:e}", r.c_stderr[j])]);
        write_csv(&p, &ctx.hash, &["lag", "C", "stderr"], rows)?;
    }
    let p = ctx.path("diagnostics.json");
    let corr_json: Vec<_> = corr
        .iter()
        .map(|(n, r)| json!({ "observable": n, "rho": r.rho, "rho_stderr": r.rho_stderr, "alpha": r.alpha, "fitted_lags": r.fitted_lags, "noise_from": r.noise_from }))
        .collect();
    write_json(&p, &json!({ "config_hash": ctx.hash, "jacobians": jac, "pushforward": push, "correlations": corr_json }))?;
    ctx.record(all);
    Ok(())
}
