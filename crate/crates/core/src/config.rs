//! Run configuration: one JSON document, unknown fields rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::dynamics::{DynamicsParams, DEFAULT_N_MAX, DEFAULT_SIN_FLOOR};
use crate::error::ConfigError;
use crate::geometry::{build_microstructure, Microstructure, Preset, ShapeSpec};
use crate::random_process::NuSpec;
use crate::transfer::{UlamConfig, DEFAULT_EPS_CUT};
use crate::GeometryError;

pub const SEED_ENV: &str = "TUBE_SEED";

/// A preset name or a full shape spec.
#[derive(Debug, Clone, PartialEq)]
pub enum MicrostructureSpec {
    Named(Preset),
    Shape(ShapeSpec),
}

impl MicrostructureSpec {
    pub fn shape(&self) -> ShapeSpec {
        match self {
            MicrostructureSpec::Named(p) => ShapeSpec::preset(*p),
            MicrostructureSpec::Shape(s) => s.clone(),
        }
    }
}

impl Serialize for MicrostructureSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MicrostructureSpec::Named(p) => p.serialize(s),
            MicrostructureSpec::Shape(spec) => spec.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for MicrostructureSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        if v.is_string() {
            Preset::deserialize(v).map(MicrostructureSpec::Named).map_err(D::Error::custom)
        } else {
            ShapeSpec::deserialize(v).map(MicrostructureSpec::Shape).map_err(D::Error::custom)
        }
    }
}

fn default_preset() -> MicrostructureSpec {
    MicrostructureSpec::Named(Preset::TwoCheeksOneBottom)
}
fn default_n_steps() -> u64 {
    100_000
}
fn default_n_chains() -> usize {
    10_000
}
fn default_eta() -> f64 {
    0.1
}
fn default_n_max() -> usize {
    DEFAULT_N_MAX
}
fn default_sin_floor() -> f64 {
    DEFAULT_SIN_FLOOR
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Log-spaced twists `10^(-2 + k/10)`, k = 0..=10.
pub fn default_t_values() -> Vec<f64> {
    (0..=10).map(|k| 10f64.powf(-2.0 + k as f64 / 10.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlamSettings {
    pub m: usize,
    pub samples_per_cell: usize,
    pub t_values: Vec<f64>,
    pub fit_window: [f64; 2],
    pub eps_cut: f64,
    /// Also build the untwisted matrix with `2m` cells to compare gaps.
    pub refine: bool,
}

impl Default for UlamSettings {
    fn default() -> Self {
        UlamSettings {
            m: 256,
            samples_per_cell: 10_000,
            t_values: default_t_values(),
            fit_window: [0.01, 0.1],
            eps_cut: DEFAULT_EPS_CUT,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSettings {
    pub samples: usize,
    pub thresholds: Vec<f64>,
}

impl Default for TailSettings {
    fn default() -> Self {
        TailSettings { samples: 10_000_000, thresholds: vec![5.0, 10.0, 20.0, 50.0, 100.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticSettings {
    /// Points for the Jacobian and finite-difference checks.
    pub jacobian_points: usize,
    /// Samples per pushforward KS test.
    pub pushforward_samples: usize,
    /// Fixed offsets for the pushforward tests.
    pub fixed_offsets: Vec<f64>,
    pub corr_chains: usize,
    pub corr_max_lag: usize,
}

impl Default for DiagnosticSettings {
    fn default() -> Self {
        DiagnosticSettings {
            jacobian_points: 1000,
            pushforward_samples: 1_000_000,
            fixed_offsets: (0..10).map(|k| (k as f64 + 0.5) / 10.0).collect(),
            corr_chains: 200_000,
            corr_max_lag: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltSettings {
    /// Shorter horizon compared against `n_steps`.
    pub short_n: u64,
    /// Ensembles (seeds `seed, seed + 1, ...`) averaged for the comparison.
    pub seeds: u64,
}

impl Default for CltSettings {
    fn default() -> Self {
        CltSettings { short_n: 10_000, seeds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(alias = "W")]
    pub tube_width: f64,
    #[serde(default = "default_preset")]
    pub microstructure: MicrostructureSpec,
    #[serde(default)]
    pub nu: NuSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_steps")]
    pub n_steps: u64,
    #[serde(default = "default_n_chains")]
    pub n_chains: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_sin_floor")]
    pub sin_floor: f64,
    /// Extra steps at which partial sums are kept besides `n_steps`.
    #[serde(default)]
    pub checkpoints: Vec<u64>,
    #[serde(default)]
    pub ulam: UlamSettings,
    #[serde(default)]
    pub tails: TailSettings,
    #[serde(default)]
    pub diagnostics: DiagnosticSettings,
    #[serde(default)]
    pub clt: CltSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Defaults around the given tube width.
    pub fn with_width(w: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "tube_width": w })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse { path, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s.trim().parse().map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={s} is not a 64-bit unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.tube_width > 0.0 && self.tube_width.is_finite()) {
            return bad(format!("tube_width = {} must be positive", self.tube_width));
        }
        if self.n_steps == 0 || self.n_chains == 0 || self.n_max == 0 {
            return bad("n_steps, n_chains and n_max must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta = {} outside (0, 1)", self.eta));
        }
        if !(self.sin_floor > 0.0 && self.sin_floor < 1.0) {
            return bad(format!("sin_floor = {} outside (0, 1)", self.sin_floor));
        }
        let u = &self.ulam;
        if u.m < 2 || u.samples_per_cell == 0 {
            return bad("ulam.m must be at least 2 and ulam.samples_per_cell positive".into());
        }
        if !(u.fit_window[0] > 0.0 && u.fit_window[0] < u.fit_window[1]) {
            return bad(format!("ulam.fit_window {:?} is not an increasing positive interval", u.fit_window));
        }
        if self.tails.samples == 0 || self.tails.thresholds.iter().any(|n| !(*n >= 0.0)) {
            return bad("tails.samples must be positive and thresholds nonnegative".into());
        }
        let d = &self.diagnostics;
        if d.jacobian_points == 0 || d.pushforward_samples == 0 || d.corr_chains == 0 {
            return bad("diagnostics counts must be positive".into());
        }
        if d.fixed_offsets.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("diagnostics.fixed_offsets must lie in [0, 1]".into());
        }
        if self.clt.seeds == 0 {
            return bad("clt.seeds must be positive".into());
        }
        if self.checkpoints.iter().any(|&c| c > self.n_steps) {
            return bad("checkpoints must not exceed n_steps".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON (sorted keys, no whitespace) with the
    /// output directory left out.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        hex::encode(Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes()))
    }

    pub fn dynamics(&self) -> DynamicsParams {
        DynamicsParams { n_max: self.n_max, sin_floor: self.sin_floor }
    }

    pub fn build_microstructure(&self) -> Result<Microstructure, GeometryError> {
        build_microstructure(&self.microstructure.shape())
    }

    pub fn ulam_config(&self, m: usize) -> UlamConfig {
        UlamConfig { m, samples_per_cell: self.ulam.samples_per_cell, eps_cut: self.ulam.eps_cut, master_seed: self.seed }
    }

    /// `checkpoints ∪ {clt.short_n, n_steps}` up to `n_steps`, sorted.
    pub fn all_checkpoints(&self) -> Vec<u64> {
        let mut c = self.checkpoints.clone();
        c.push(self.n_steps);
        if self.clt.short_n < self.n_steps {
            c.push(self.clt.short_n);
        }
        c.sort_unstable();
        c.dedup();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(r#"{"tube_width": 10}"#).unwrap();
        assert_eq!(c.microstructure, MicrostructureSpec::Named(Preset::TwoCheeksOneBottom));
        assert_eq!(c.ulam.m, 256);
        assert_eq!(c.eta, 0.1);
        assert_eq!(c.n_max, 64);
        assert_eq!(c, RunConfig::with_width(10.0));
        assert_eq!(RunConfig::from_json(r#"{"W": 10}"#).unwrap(), c);
    }

    #[test]
    fn missing_width_names_the_field() {
        let e = RunConfig::from_json(r#"{"seed": 3}"#).unwrap_err();
        assert!(e.to_string().contains("tube_width"), "{e}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_path() {
        let e = RunConfig::from_json(r#"{"tube_width": 10, "ulam": {"mm": 3}}"#).unwrap_err();
        match e {
            ConfigError::Parse { path, message } => {
                assert_eq!(path, "ulam.mm");
                assert!(message.contains("unknown field"));
            }
            other => panic!("{other}"),
        }
        assert!(RunConfig::from_json(r#"{"tube_width": 10, "colour": 1}"#).is_err());
    }

    #[test]
    fn invariants_checked() {
        for bad in [r#"{"tube_width": 0}"#, r#"{"tube_width": 10, "eta": 1.0}"#, r#"{"tube_width": 10, "n_chains": 0}"#] {
            assert!(matches!(RunConfig::from_json(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn shape_objects_and_names_both_parse() {
        let c = RunConfig::from_json(r#"{"tube_width": 4, "microstructure": "two-cheeks-three-bottom"}"#).unwrap();
        assert_eq!(c.microstructure, MicrostructureSpec::Named(Preset::TwoCheeksThreeBottom));
        let c2 = RunConfig::from_json(r#"{"tube_width": 4, "microstructure": {"preset": "two-cheeks-three-bottom"}}"#).unwrap();
        assert_eq!(c.build_microstructure().unwrap().inner_count(), c2.build_microstructure().unwrap().inner_count());
        assert!(RunConfig::from_json(r#"{"tube_width": 4, "microstructure": "hexagon"}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_key_order() {
        let a = RunConfig::from_json(r#"{"tube_width": 10, "seed": 5, "output_dir": "a"}"#).unwrap();
        let b = RunConfig::from_json(r#"{"output_dir": "b", "seed": 5, "tube_width": 10}"#).unwrap();
        let c = RunConfig::from_json(r#"{"tube_width": 10, "seed": 6}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::from_json(r#"{"tube_width": 7.5, "microstructure": {"preset": "two-cheeks-one-bottom"}, "nu": {"kind": "uniform"}}"#).unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
