//! Run configuration: a TOML file with one table per concern.
//!
//! Every field has a default, so an empty file is a valid config. Values can
//! be replaced from the command line with `--override section.key=value`,
//! where `value` is any TOML literal (bare words are taken as strings).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base::{Algo, BalanceMode};
use crate::envs::finite_mdp::StateWeighting;
use crate::envs::maze::{MazeDataset, MazeFeatures};
use crate::error::{Error, Result};
use crate::family::space::BalanceSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Maze,
    Pointmass,
}

/// Whether a coefficient or action is drawn from its distribution or taken at the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Draw {
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algo: Algo,
    pub balance: BalanceMode,
    pub env: EnvKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Offline dataset (JSONL). When absent, `train` collects one in memory
    /// from the env section's settings and the run seed.
    pub dataset: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algo: Algo::Iql,
            balance: BalanceMode::Famo2o,
            env: EnvKind::Maze,
            seeds: vec![0],
            out_dir: PathBuf::from("runs/default"),
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub n_offline: usize,
    pub n_online: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub balance_hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_balance: f64,
    pub balance_update_freq: usize,
    pub target_rho: f64,
    pub w_max: f64,
    pub buffer_capacity: usize,
    /// Initial coefficient mode of the balance model; the midpoint when unset.
    pub balance_beta_init: Option<f64>,
    /// Initial log-std of the balance model's pre-squash Gaussian.
    pub balance_log_std_init: f64,
    /// Coefficient fed to online minibatch updates.
    pub online_beta: Draw,
    /// Inner action of the balance objective.
    pub balance_action: Draw,
    pub env_steps_per_update: usize,
    pub log_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Cap on the number of offline coefficient draws kept in the run log.
    pub beta_log_limit: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_offline: 1_000_000,
            n_online: 1_000_000,
            batch_size: 256,
            gamma: 0.99,
            hidden: vec![256, 256],
            balance_hidden: vec![256, 256],
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_balance: 3e-4,
            balance_update_freq: 1,
            target_rho: 5e-3,
            w_max: 100.0,
            buffer_capacity: 2_000_000,
            balance_beta_init: None,
            balance_log_std_init: -2.0,
            online_beta: Draw::Sample,
            balance_action: Draw::Sample,
            env_steps_per_update: 1,
            log_every: 1000,
            eval_every: 5000,
            eval_episodes: 10,
            beta_log_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IqlSection {
    /// Defaults to 0.7 for IQL; setting it for another algorithm is an error.
    pub expectile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AwacSection {
    pub policy_samples: usize,
}

impl Default for AwacSection {
    fn default() -> Self {
        Self { policy_samples: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqlSection {
    pub alpha: f64,
    pub n_uniform: usize,
    pub n_policy: usize,
}

impl Default for CqlSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            n_uniform: 8,
            n_policy: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MazeStarts {
    TopRow,
    AllFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeSection {
    pub dataset: MazeDataset,
    pub episodes: usize,
    pub features: MazeFeatures,
    /// Rollout starts for the coefficient map.
    pub map_starts: MazeStarts,
}

impl Default for MazeSection {
    fn default() -> Self {
        Self {
            dataset: MazeDataset::Mixed,
            episodes: 200,
            features: MazeFeatures::OneHot,
            map_starts: MazeStarts::AllFree,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointmassSection {
    pub episodes: usize,
    pub noise_std: f64,
}

impl Default for PointmassSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            noise_std: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    pub weighting: StateWeighting,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            instances: 100,
            max_states: 5,
            max_actions: 4,
            gamma: 0.9,
            epsilons: vec![0.01, 0.1, 0.5],
            weighting: StateWeighting::Discounted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub balance_space: BalanceSpace,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub iql: IqlSection,
    #[serde(default)]
    pub awac: AwacSection,
    #[serde(default)]
    pub cql: CqlSection,
    #[serde(default)]
    pub maze: MazeSection,
    #[serde(default)]
    pub pointmass: PointmassSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            balance_space: BalanceSpace::default(),
            train: TrainSection::default(),
            iql: IqlSection::default(),
            awac: AwacSection::default(),
            cql: CqlSection::default(),
            maze: MazeSection::default(),
            pointmass: PointmassSection::default(),
            oracle: OracleSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be at least 1"))
    }
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            set_path(&mut table, k.trim(), parse_literal(v.trim()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(field_of(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn expectile(&self) -> f64 {
        self.iql.expectile.unwrap_or(crate::base::iql::DEFAULT_EXPECTILE)
    }

    pub fn validate(&self) -> Result<()> {
        let sp = &self.balance_space;
        if !(sp.beta_min.is_finite() && sp.beta_max.is_finite()) || sp.beta_min <= 0.0 {
            return Err(Error::config("balance_space.beta_min", "must be positive and finite"));
        }
        if sp.beta_min >= sp.beta_max {
            return Err(Error::config(
                "balance_space.beta_min",
                format!("must be below beta_max ({} >= {})", sp.beta_min, sp.beta_max),
            ));
        }
        if sp.enc_dim == 0 || sp.enc_dim % 2 != 0 {
            return Err(Error::config("balance_space.enc_dim", "must be even and positive"));
        }
        if sp.beta_max > 20.0 {
            log::warn!("balance_space.beta_max = {} is above 20; coefficients this radical are discouraged", sp.beta_max);
        }
        if let Some(b) = self.train.balance_beta_init {
            if !(b > sp.beta_min && b < sp.beta_max) {
                return Err(Error::config("train.balance_beta_init", "must lie strictly inside the balance space"));
            }
        }
        if let Some(tau) = self.iql.expectile {
            if self.run.algo != Algo::Iql {
                return Err(Error::config(
                    "iql.expectile",
                    format!("expectile regression only applies to iql, not {}", self.run.algo),
                ));
            }
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::config("iql.expectile", "must lie in (0, 1)"));
            }
        }
        if let BalanceMode::Fixed(b) = self.run.balance {
            if !(b >= 0.0) {
                return Err(Error::config("run.balance", "fixed coefficient must be non-negative"));
            }
        }
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "need at least one seed"));
        }
        let t = &self.train;
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return Err(Error::config("train.gamma", "must lie in (0, 1)"));
        }
        if !(t.target_rho > 0.0 && t.target_rho <= 1.0) {
            return Err(Error::config("train.target_rho", "must lie in (0, 1]"));
        }
        positive("train.lr_actor", t.lr_actor)?;
        positive("train.lr_critic", t.lr_critic)?;
        positive("train.lr_balance", t.lr_balance)?;
        positive("train.w_max", t.w_max)?;
        nonzero("train.batch_size", t.batch_size)?;
        nonzero("train.balance_update_freq", t.balance_update_freq)?;
        nonzero("train.buffer_capacity", t.buffer_capacity)?;
        nonzero("train.log_every", t.log_every)?;
        nonzero("train.eval_every", t.eval_every)?;
        nonzero("train.eval_episodes", t.eval_episodes)?;
        nonzero("train.env_steps_per_update", t.env_steps_per_update)?;
        if t.hidden.iter().chain(&t.balance_hidden).any(|&h| h == 0) {
            return Err(Error::config("train.hidden", "hidden sizes must be positive"));
        }
        if self.run.algo == Algo::Awac {
            nonzero("awac.policy_samples", self.awac.policy_samples)?;
        }
        if self.run.algo == Algo::Cql {
            if !(self.cql.alpha >= 0.0) {
                return Err(Error::config("cql.alpha", "must be non-negative"));
            }
            if self.run.env == EnvKind::Pointmass {
                nonzero("cql.n_uniform", self.cql.n_uniform + self.cql.n_policy)?;
            }
        }
        nonzero("analysis.bins", self.analysis.bins)?;
        if t.n_offline == 0 {
            log::warn!("train.n_offline = 0: online-only run");
        }
        Ok(())
    }

    /// True when the run is scaled down from the full-size defaults.
    pub fn desk_scale(&self) -> bool {
        let (t, d) = (&self.train, TrainSection::default());
        t.hidden != d.hidden
            || t.balance_hidden != d.balance_hidden
            || t.n_offline != d.n_offline
            || t.n_online != d.n_online
            || t.buffer_capacity != d.buffer_capacity
            || t.batch_size != d.batch_size
    }
}

fn field_of(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.split('`').nth(1) {
        return rest.to_string();
    }
    "config".to_string()
}
