//! Experiment files.
//!
//! An experiment is a TOML document:
//!
//! ```toml
//! K = 10
//! N = 7
//! T = 200000
//! # optional
//! epsilon = 0.1
//! cfl_length = 384
//! repetitions = 50
//! seed = 0
//! dynamic = false
//! delta = 0.05
//! model = "per_run"          # or "shared"
//! mu = [[0.1, 0.9], ...]     # explicit means, one row per user id
//! arrivals = [{ slot = 40000, user = 7 }]
//! departures = [{ slot = 80000, user = 1 }]
//!
//! [output]
//! dir = "out"
//! metrics = ["potential", "in_smc", "cum_reward", "norm_reward", "live_users", "switches"]
//!
//! [sweep]
//! K = [10, 15, 25]
//! N = "3..K"                 # or a list
//! ```

use std::path::{Path, PathBuf};

use csm_core::engine::{Epsilon, ExperimentConfig, ModelSource, ScheduledEvent};
use csm_core::model::{draw_user_pool, RewardModel};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_REPETITIONS: usize = 50;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Each repetition draws its own means from its seed.
    #[default]
    PerRun,
    /// One draw from the base seed shared by every repetition.
    Shared,
}

/// Per-frame columns that can be selected for `runs.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Potential,
    InSmc,
    CumReward,
    NormReward,
    LiveUsers,
    Switches,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Potential,
        Metric::InSmc,
        Metric::CumReward,
        Metric::NormReward,
        Metric::LiveUsers,
        Metric::Switches,
    ];
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    slot: u64,
    user: usize,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    metrics: Option<Vec<Metric>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawUsers {
    List(Vec<usize>),
    Range(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(rename = "K")]
    channels: Vec<usize>,
    #[serde(rename = "N")]
    users: RawUsers,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(rename = "K")]
    channels: Option<usize>,
    #[serde(rename = "N")]
    users: Option<usize>,
    #[serde(rename = "T")]
    horizon: u64,
    epsilon: Option<f64>,
    cfl_length: Option<u64>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    dynamic: bool,
    delta: Option<f64>,
    #[serde(default)]
    model: ModelMode,
    mu: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    arrivals: Vec<RawEvent>,
    #[serde(default)]
    departures: Vec<RawEvent>,
    #[serde(default)]
    output: RawOutput,
    sweep: Option<RawSweep>,
}

/// One `(K, N)` point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub channels: usize,
    pub users: usize,
}

/// A validated experiment with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub base: Option<Cell>,
    pub sweep: Vec<Cell>,
    pub horizon: u64,
    pub epsilon: Epsilon,
    pub cfl_length: Option<u64>,
    pub repetitions: usize,
    pub seed: u64,
    pub dynamic: bool,
    pub delta: f64,
    pub model: ModelMode,
    pub mu: Option<RewardModel>,
    pub arrivals: Vec<ScheduledEvent>,
    pub departures: Vec<ScheduledEvent>,
    pub out_dir: Option<PathBuf>,
    pub metrics: Vec<Metric>,
}

impl ExperimentSpec {
    pub fn config_for(&self, cell: Cell) -> ExperimentConfig {
        ExperimentConfig {
            channels: cell.channels,
            initial_users: cell.users,
            horizon: self.horizon,
            epsilon: self.epsilon,
            dynamic: self.dynamic,
            arrivals: self.arrivals.clone(),
            departures: self.departures.clone(),
            cfl_length: self.cfl_length,
            seed: self.seed,
            repetitions: self.repetitions,
        }
    }

    /// Model source for a cell, honouring explicit means and the model mode.
    pub fn model_source(&self, cell: Cell) -> Result<ModelSource, CliError> {
        if let Some(mu) = &self.mu {
            return Ok(ModelSource::Given(mu.clone()));
        }
        match self.model {
            ModelMode::PerRun => Ok(ModelSource::Draw),
            ModelMode::Shared => {
                let pool = self.config_for(cell).pool_size();
                Ok(ModelSource::Given(draw_user_pool(
                    cell.channels,
                    pool,
                    self.seed,
                )?))
            }
        }
    }

    pub fn has_metric(&self, metric: Metric) -> bool {
        self.metrics.contains(&metric)
    }
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let constraint = |msg: String| Err(CliError::Constraint(msg));

    let base = match (raw.channels, raw.users) {
        (Some(channels), Some(users)) => Some(Cell { channels, users }),
        (None, None) => None,
        (Some(_), None) => return constraint("`K` is set but `N` is missing".into()),
        (None, Some(_)) => return constraint("`N` is set but `K` is missing".into()),
    };
    if base.is_none() && raw.sweep.is_none() {
        return constraint("`K` and `N` are required without a [sweep] table".into());
    }
    if let Some(cell) = base {
        if cell.users > cell.channels {
            return constraint(format!(
                "`N` = {} exceeds `K` = {}",
                cell.users, cell.channels
            ));
        }
    }
    let sweep = match &raw.sweep {
        Some(s) => sweep_cells(s)?,
        None => Vec::new(),
    };
    if raw.sweep.is_some() && sweep.is_empty() {
        return constraint("[sweep] has no cell with N <= K".into());
    }

    let metrics = match raw.output.metrics {
        Some(list) => {
            let mut list = list;
            list.sort();
            list.dedup();
            list
        }
        None => Metric::ALL.to_vec(),
    };
    let mu = match raw.mu {
        Some(rows) => Some(RewardModel::user_pool(rows)?),
        None => None,
    };
    let spec = ExperimentSpec {
        base,
        sweep,
        horizon: raw.horizon,
        epsilon: raw.epsilon.map_or(Epsilon::Auto, Epsilon::Fixed),
        cfl_length: raw.cfl_length,
        repetitions: raw.repetitions.unwrap_or(DEFAULT_REPETITIONS),
        seed: raw.seed.unwrap_or(0),
        dynamic: raw.dynamic,
        delta: raw.delta.unwrap_or(DEFAULT_DELTA),
        model: raw.model,
        mu,
        arrivals: raw
            .arrivals
            .into_iter()
            .map(|e| ScheduledEvent {
                slot: e.slot,
                user: e.user,
            })
            .collect(),
        departures: raw
            .departures
            .into_iter()
            .map(|e| ScheduledEvent {
                slot: e.slot,
                user: e.user,
            })
            .collect(),
        out_dir: raw.output.dir,
        metrics,
    };
    if !(spec.delta > 0.0 && spec.delta < 1.0) {
        return constraint(format!("`delta` = {} outside (0, 1)", spec.delta));
    }
    if let Some(mu) = &spec.mu {
        if !spec.sweep.is_empty() {
            return constraint("`mu` cannot be combined with [sweep]".into());
        }
        let cell = base.expect("checked above");
        if mu.channels() != cell.channels {
            return constraint(format!(
                "`mu` has {} columns, `K` = {}",
                mu.channels(),
                cell.channels
            ));
        }
    }
    for cell in spec.base.iter().chain(&spec.sweep) {
        spec.config_for(*cell)
            .validate()
            .map_err(|e| CliError::Constraint(e.to_string()))?;
        if let Some(mu) = &spec.mu {
            let needed = spec.config_for(*cell).pool_size();
            if mu.users() < needed {
                return constraint(format!(
                    "`mu` has {} rows, the schedule needs {needed}",
                    mu.users()
                ));
            }
        }
    }
    Ok(spec)
}

fn sweep_cells(sweep: &RawSweep) -> Result<Vec<Cell>, CliError> {
    let mut cells = Vec::new();
    for &channels in &sweep.channels {
        let users: Vec<usize> = match &sweep.users {
            RawUsers::List(list) => list.clone(),
            RawUsers::Range(text) => parse_range(text, channels)?,
        };
        cells.extend(
            users
                .into_iter()
                .filter(|&n| n >= 1 && n <= channels)
                .map(|users| Cell { channels, users }),
        );
    }
    cells.sort();
    cells.dedup();
    Ok(cells)
}

/// `"a..b"` inclusive, where `b` may be the literal `K`.
fn parse_range(text: &str, channels: usize) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Parse(format!("sweep `N`: cannot parse range {text:?}"));
    let (lo, hi) = text.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi = match hi.trim() {
        "K" => channels,
        other => other.parse().map_err(|_| bad())?,
    };
    Ok((lo..=hi).collect())
}
