//! Run configuration: a sectioned TOML document with `[model]`, `[solver]`,
//! `[simulate]`, `[validate]` and `[output]` tables. Unknown keys are errors.

use std::path::{Path, PathBuf};

use ruin_core::{ClaimDistribution, HazardModel, ModelParams, SolverConfig, State};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, io_at, CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    ConstantRate,
    Erlang,
    Weibull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    Exponential,
    Gamma,
    Lognormal,
}

/// Flat model block. Only the parameters of the chosen laws may be set.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Premium rate.
    pub p: f64,
    /// Reinsurance safety loading.
    pub eta: f64,
    pub horizon: f64,
    pub hazard: HazardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard_scale: Option<f64>,
    pub claims: ClaimKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_meanlog: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_sdlog: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_resolution")]
    pub n_s: usize,
    #[serde(default = "default_resolution")]
    pub n_x: usize,
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_n_quad")]
    pub n_quad: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Table,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_paths")]
    pub n_paths: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Single initial state; `s` and `w` default to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    /// Several initial states as `[s, x, w]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub policy: PolicyKind,
    /// Retention for the constant policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<f64>,
    /// Value CSV to take the table policy from instead of solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub early_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "default_paths")]
    pub n_paths: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpp_point: Option<[f64; 3]>,
    #[serde(default = "default_dpp_steps")]
    pub dpp_steps: Vec<f64>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: f64,
    /// Also solve at twice the resolution for the continuity probe.
    #[serde(default = "default_true")]
    pub refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_resolution() -> usize {
    200
}
fn default_n_q() -> usize {
    21
}
fn default_n_quad() -> usize {
    64
}
fn default_paths() -> u64 {
    100_000
}
fn default_seed() -> u64 {
    1
}
fn default_dpp_steps() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_eps_grid() -> f64 {
    ruin_core::validation::EPS_GRID
}
fn default_true() -> bool {
    true
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { n_s: 200, n_x: 200, n_q: 21, n_quad: 64 }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n_paths: default_paths(),
            seed: default_seed(),
            s: None,
            x: None,
            w: None,
            points: None,
            policy: PolicyKind::Table,
            retention: None,
            table: None,
            early_stop: false,
        }
    }
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            n_paths: default_paths(),
            seed: default_seed(),
            points: None,
            dpp_point: None,
            dpp_steps: default_dpp_steps(),
            eps_grid: default_eps_grid(),
            refine: true,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, formats: default_formats() }
    }
}

fn required(name: &str, v: Option<f64>, law: &str) -> Result<f64> {
    v.ok_or_else(|| CliError::Config(format!("model.{name} is required for {law}")))
}

fn unused<T>(name: &str, v: Option<T>, law: &str) -> Result<()> {
    match v {
        Some(_) => config_err(format!("model.{name} does not apply to {law}")),
        None => Ok(()),
    }
}

impl ModelSection {
    pub fn hazard_model(&self) -> Result<HazardModel> {
        let m = match self.hazard {
            HazardKind::ConstantRate => {
                let law = "hazard = \"constant_rate\"";
                unused("hazard_k", self.hazard_k, law)?;
                unused("hazard_shape", self.hazard_shape, law)?;
                unused("hazard_scale", self.hazard_scale, law)?;
                HazardModel::ConstantRate { rate: required("hazard_rate", self.hazard_rate, law)? }
            }
            HazardKind::Erlang => {
                let law = "hazard = \"erlang\"";
                unused("hazard_shape", self.hazard_shape, law)?;
                unused("hazard_scale", self.hazard_scale, law)?;
                let k = self
                    .hazard_k
                    .ok_or_else(|| CliError::Config(format!("model.hazard_k is required for {law}")))?;
                HazardModel::Erlang { k, rate: required("hazard_rate", self.hazard_rate, law)? }
            }
            HazardKind::Weibull => {
                let law = "hazard = \"weibull\"";
                unused("hazard_rate", self.hazard_rate, law)?;
                unused("hazard_k", self.hazard_k, law)?;
                HazardModel::Weibull {
                    shape: required("hazard_shape", self.hazard_shape, law)?,
                    scale: required("hazard_scale", self.hazard_scale, law)?,
                }
            }
        };
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }

    pub fn claim_distribution(&self) -> Result<ClaimDistribution> {
        let d = match self.claims {
            ClaimKind::Exponential => {
                let law = "claims = \"exponential\"";
                unused("claim_shape", self.claim_shape, law)?;
                unused("claim_scale", self.claim_scale, law)?;
                unused("claim_meanlog", self.claim_meanlog, law)?;
                unused("claim_sdlog", self.claim_sdlog, law)?;
                ClaimDistribution::Exponential { mean: required("claim_mean", self.claim_mean, law)? }
            }
            ClaimKind::Gamma => {
                let law = "claims = \"gamma\"";
                unused("claim_mean", self.claim_mean, law)?;
                unused("claim_meanlog", self.claim_meanlog, law)?;
                unused("claim_sdlog", self.claim_sdlog, law)?;
                ClaimDistribution::Gamma {
                    shape: required("claim_shape", self.claim_shape, law)?,
                    scale: required("claim_scale", self.claim_scale, law)?,
                }
            }
            ClaimKind::Lognormal => {
                let law = "claims = \"lognormal\"";
                unused("claim_mean", self.claim_mean, law)?;
                unused("claim_shape", self.claim_shape, law)?;
                unused("claim_scale", self.claim_scale, law)?;
                ClaimDistribution::LogNormal {
                    meanlog: required("claim_meanlog", self.claim_meanlog, law)?,
                    sdlog: required("claim_sdlog", self.claim_sdlog, law)?,
                }
            }
        };
        d.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(d)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let hazard = self.hazard_model()?;
        let claims = self.claim_distribution()?;
        ModelParams::new(self.p, self.eta, self.horizon, hazard, claims).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig { n_s: self.n_s, n_x: self.n_x, n_q: self.n_q, n_quad: self.n_quad };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn to_state(params: &ModelParams, key: &str, [s, x, w]: [f64; 3]) -> Result<State> {
    let ok = (0.0..=params.horizon).contains(&s) && w >= 0.0 && w <= s && x >= 0.0 && x.is_finite();
    if !ok {
        return config_err(format!(
            "{key} = [{s}, {x}, {w}] is not a state: need 0 <= s <= horizon, 0 <= w <= s, x >= 0"
        ));
    }
    Ok(State::new(s, x, w))
}

/// Interior states at the start of the horizon: a quarter, half and four
/// fifths of the way to the barrier.
pub fn default_points(params: &ModelParams) -> Vec<State> {
    let b = params.barrier_at_start();
    [0.25, 0.5, 0.8].iter().map(|f| State::new(0.0, f * b, 0.0)).collect()
}

impl SimulateSection {
    pub fn points(&self, params: &ModelParams) -> Result<Vec<State>> {
        let single = self.s.is_some() || self.x.is_some() || self.w.is_some();
        match (&self.points, single) {
            (Some(_), true) => config_err("give either simulate.points or simulate.s/x/w, not both"),
            (Some(list), false) => {
                if list.is_empty() {
                    return config_err("simulate.points is empty");
                }
                list.iter().map(|&p| to_state(params, "simulate.points", p)).collect()
            }
            (None, true) => {
                let x = self
                    .x
                    .ok_or_else(|| CliError::Config("simulate.x is required when s or w is given".into()))?;
                Ok(vec![to_state(params, "simulate.s/x/w", [self.s.unwrap_or(0.0), x, self.w.unwrap_or(0.0)])?])
            }
            (None, false) => Ok(default_points(params)),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if self.n_paths == 0 {
            return config_err("simulate.n_paths must be >= 1");
        }
        self.points(params)?;
        match (self.policy, self.retention) {
            (PolicyKind::Constant, None) => config_err("simulate.retention is required for policy = \"constant\""),
            (PolicyKind::Constant, Some(q)) if !(0.0..=1.0).contains(&q) => {
                config_err(format!("simulate.retention must lie in [0, 1], got {q}"))
            }
            (PolicyKind::Table, Some(_)) => config_err("simulate.retention does not apply to policy = \"table\""),
            _ if self.policy == PolicyKind::Constant && self.table.is_some() => {
                config_err("simulate.table does not apply to policy = \"constant\"")
            }
            _ => Ok(()),
        }
    }
}

impl ValidateSection {
    pub fn points(&self, params: &ModelParams) -> Result<Vec<State>> {
        match &self.points {
            Some(list) if list.is_empty() => config_err("validate.points is empty"),
            Some(list) => list.iter().map(|&p| to_state(params, "validate.points", p)).collect(),
            None => Ok(default_points(params)),
        }
    }

    pub fn dpp_point(&self, params: &ModelParams) -> Result<State> {
        match self.dpp_point {
            Some(p) => to_state(params, "validate.dpp_point", p),
            None => Ok(State::new(0.0, 0.5 * params.barrier_at_start(), 0.0)),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if self.n_paths == 0 {
            return config_err("validate.n_paths must be >= 1");
        }
        if !(self.eps_grid >= 0.0) {
            return config_err(format!("validate.eps_grid must be >= 0, got {}", self.eps_grid));
        }
        self.points(params)?;
        let start = self.dpp_point(params)?;
        for &h in &self.dpp_steps {
            if !(h >= 0.0 && start.s + h <= params.horizon) {
                return config_err(format!("validate.dpp_steps entry {h} leaves [s, horizon]"));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Checks every cross-field constraint; parsing already rejected
    /// unknown keys and wrong types.
    pub fn check(&self) -> Result<()> {
        let params = self.model.params()?;
        self.solver.solver_config()?;
        self.simulate.check(&params)?;
        self.validate.check(&params)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        digest(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output.dir".into()))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Lowercase hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
