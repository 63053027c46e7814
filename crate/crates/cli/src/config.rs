//! Experiment configuration: one-level TOML sections, validated into core types.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ksflow::dynamics::{MonitorConfig, Schedule};
use ksflow::fields::RankBudget;
use ksflow::nonlinearity::{rational_exponent, AdmissibilityReport, SelfInteraction};
use ksflow::random::MixtureParams;
use ksflow::{Grid, PotentialSpec};

use crate::error::CliError;

/// Largest denominator accepted for `beta`.
pub const MAX_BETA_DENOMINATOR: u64 = 8;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub interaction: InteractionSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub suites: SuitesSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub monitor: MonitorSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub half_length: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    #[default]
    None,
    Delta,
    Riesz,
}

/// `beta` as a number or as a fraction string such as `"1/3"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Number(f64),
    Fraction(String),
}

impl Default for Exponent {
    fn default() -> Self {
        Exponent::Number(1.0)
    }
}

impl Exponent {
    pub fn value(&self) -> Result<f64, CliError> {
        match self {
            Exponent::Number(v) => Ok(*v),
            Exponent::Fraction(s) => {
                let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| CliError::config(format!("bad exponent {s:?}")));
                match s.split_once('/') {
                    Some((p, q)) => Ok(parse(p)? / parse(q)?),
                    None => parse(s),
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub potential: PotentialKind,
    /// Riesz exponent `a` in `|x|^{-a}`.
    #[serde(default)]
    pub riesz_a: Option<f64>,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default)]
    pub beta: Exponent,
    /// Runs outside the admissible range must carry this tag.
    #[serde(default)]
    pub exploratory: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Half-width of the box for the centers; `L/8` when absent.
    #[serde(default)]
    pub center_spread: Option<f64>,
    #[serde(default = "default_velocity")]
    pub max_velocity: f64,
    /// Start from this snapshot instead of drawing a mixture.
    #[serde(default)]
    pub snapshot: Option<PathBuf>,
}

fn default_rank() -> usize {
    1
}

fn default_width() -> f64 {
    1.0
}

fn default_velocity() -> f64 {
    2.0
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            rank: default_rank(),
            seed: 0,
            width: default_width(),
            center_spread: None,
            max_velocity: default_velocity(),
            snapshot: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub t_final: f64,
    pub dt: f64,
    pub record_every: f64,
    #[serde(default)]
    pub dyadic_snapshots: bool,
    /// First dyadic snapshot time; `record_every` when absent.
    #[serde(default)]
    pub snapshot_base: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuitesSection {
    #[serde(default)]
    pub inequalities: bool,
    #[serde(default)]
    pub decay: bool,
    #[serde(default)]
    pub scattering: bool,
    #[serde(default)]
    pub apriori: bool,
    #[serde(default = "default_t0")]
    pub fit_t0: f64,
    #[serde(default = "default_t1")]
    pub fit_t1: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_apriori_ref")]
    pub apriori_ref: f64,
}

fn default_t0() -> f64 {
    5.0
}

fn default_t1() -> f64 {
    40.0
}

fn default_samples() -> usize {
    100
}

fn default_apriori_ref() -> f64 {
    10.0
}

impl Default for SuitesSection {
    fn default() -> Self {
        Self {
            inequalities: false,
            decay: false,
            scattering: false,
            apriori: false,
            fit_t0: default_t0(),
            fit_t1: default_t1(),
            samples: default_samples(),
            apriori_ref: default_apriori_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("ksflow-out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default = "default_layer")]
    pub boundary_layer: f64,
    #[serde(default = "default_limit")]
    pub boundary_limit: f64,
    #[serde(default = "default_commutation")]
    pub commutation: bool,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    #[serde(default = "default_tol")]
    pub compress_tol: f64,
}

fn default_layer() -> f64 {
    MonitorConfig::default().boundary_layer
}

fn default_limit() -> f64 {
    MonitorConfig::default().boundary_limit
}

fn default_commutation() -> bool {
    true
}

fn default_max_rank() -> usize {
    RankBudget::default().max_rank
}

fn default_tol() -> f64 {
    RankBudget::default().tol
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            boundary_layer: default_layer(),
            boundary_limit: default_limit(),
            commutation: default_commutation(),
            max_rank: default_max_rank(),
            compress_tol: default_tol(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // snapshot paths are relative to the config file
        if let (Some(snap), Some(dir)) = (cfg.initial.snapshot.as_mut(), path.parent()) {
            if snap.is_relative() {
                *snap = dir.join(&*snap);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, recorded in every artifact.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn grid(&self) -> Result<Arc<Grid>, CliError> {
        let g = &self.grid;
        Grid::new(g.dim, g.n, g.half_length).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn interaction(&self) -> Result<SelfInteraction, CliError> {
        let s = &self.interaction;
        let beta = s.beta.value()?;
        if s.lambda2 != 0.0 && rational_exponent(beta, MAX_BETA_DENOMINATOR).is_none() {
            return Err(CliError::config(format!(
                "beta = {beta} is not a fraction with denominator <= {MAX_BETA_DENOMINATOR}"
            )));
        }
        let potential = match (s.potential, s.riesz_a) {
            (PotentialKind::None, _) => PotentialSpec::None,
            (PotentialKind::Delta, _) => PotentialSpec::Delta,
            (PotentialKind::Riesz, Some(a)) => PotentialSpec::Riesz { a },
            (PotentialKind::Riesz, None) => return Err(CliError::config("riesz potential needs riesz_a")),
        };
        Ok(SelfInteraction::hartree(s.lambda1, potential).with_power(s.lambda2, beta))
    }

    pub fn admissibility(&self) -> Result<AdmissibilityReport, CliError> {
        Ok(self.interaction()?.check_admissibility(self.grid.dim))
    }

    pub fn mixture(&self) -> MixtureParams {
        let i = &self.initial;
        MixtureParams {
            rank: i.rank,
            width: i.width,
            center_spread: i.center_spread,
            max_velocity: i.max_velocity,
        }
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = &self.schedule;
        if !(s.dt > 0.0 && s.record_every > 0.0 && s.t_final >= 0.0) {
            return Err(CliError::config("schedule needs dt > 0, record_every > 0 and t_final >= 0"));
        }
        let snapshot_times = if s.dyadic_snapshots {
            Schedule::dyadic_times(s.snapshot_base.unwrap_or(s.record_every), s.t_final)
        } else {
            Vec::new()
        };
        Ok(Schedule {
            t_final: s.t_final,
            dt: s.dt,
            record_every: s.record_every,
            snapshot_times,
        })
    }

    pub fn monitors(&self) -> MonitorConfig {
        let m = &self.monitor;
        MonitorConfig {
            boundary_layer: m.boundary_layer,
            boundary_limit: m.boundary_limit,
            budget: RankBudget { max_rank: m.max_rank, tol: m.compress_tol },
            commutation: m.commutation,
        }
    }

    /// Everything that can be checked before the run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.interaction()?;
        self.schedule()?;
        let i = &self.initial;
        if i.snapshot.is_none() && (i.rank == 0 || !(i.width > 0.0) || !(i.max_velocity >= 0.0)) {
            return Err(CliError::config("initial data needs rank >= 1, width > 0, max_velocity >= 0"));
        }
        let m = &self.monitor;
        if !(m.boundary_layer > 0.0 && m.boundary_layer < 1.0) || !(m.boundary_limit >= 0.0) || !(m.compress_tol >= 0.0) {
            return Err(CliError::config("monitor section out of range"));
        }
        let s = &self.suites;
        if (s.decay || s.apriori) && !(s.fit_t1 > s.fit_t0) {
            return Err(CliError::config("fit window needs fit_t1 > fit_t0"));
        }
        Ok(())
    }
}
