//! CSV and JSON writers. Column order is fixed; see `docs/figures.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use csm_core::engine::RunTrace;
use csm_core::model::delta_min;
use csm_core::theory::BoundReport;
use serde::Serialize;

use crate::error::CliError;
use crate::spec::{Cell, ExperimentSpec, Metric};

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const SUMMARY_HEADER: [&str; 8] = [
    "run_id",
    "seed",
    "super_frames",
    "initial_potential",
    "final_potential",
    "final_in_smc",
    "final_norm_reward",
    "total_switches",
];

pub const SWEEP_HEADER: [&str; 7] = [
    "K",
    "N",
    "runs",
    "mean_final_norm_reward",
    "frac_final_in_smc",
    "mean_final_potential",
    "phi_max",
];

/// Header of `runs.csv` for the selected metrics and `pool` user ids.
pub fn runs_header(metrics: &[Metric], pool: usize) -> Vec<String> {
    let mut header = vec!["run_id".to_string(), "super_frame".to_string()];
    for metric in Metric::ALL {
        if !metrics.contains(&metric) {
            continue;
        }
        match metric {
            Metric::Potential => header.push("potential".into()),
            Metric::InSmc => header.push("in_smc".into()),
            Metric::CumReward => header.push("cum_reward".into()),
            Metric::NormReward => header.push("norm_reward".into()),
            Metric::LiveUsers => header.push("live_users".into()),
            Metric::Switches => header.extend((0..pool).map(|n| format!("switches_{n}"))),
        }
    }
    header
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize)]
struct BoundsJson {
    #[serde(rename = "K")]
    channels: usize,
    #[serde(rename = "N")]
    users: usize,
    epsilon: f64,
    delta: f64,
    horizon: u64,
    runs: Vec<RunBounds>,
}

#[derive(Debug, Serialize)]
struct RunBounds {
    run_id: usize,
    seed: u64,
    delta_min: Option<f64>,
    error: Option<String>,
    bounds: Option<BoundsEntry>,
}

#[derive(Debug, Serialize)]
struct BoundsEntry {
    t_min: f64,
    s_min: Option<f64>,
    t_delta_static: Option<f64>,
    t_delta_static_error: Option<String>,
    t_delta_departure: Option<f64>,
    t_delta_departure_error: Option<String>,
    t_arrival: Option<f64>,
    t_arrival_clamped: bool,
    t_arrival_error: Option<String>,
    phi_max: u64,
    delta_valid: bool,
}

impl From<BoundReport> for BoundsEntry {
    fn from(r: BoundReport) -> Self {
        Self {
            t_min: r.t_min,
            s_min: r.s_min,
            t_delta_static: r.t_delta_static,
            t_delta_static_error: r.t_delta_static_error,
            t_delta_departure: r.t_delta_departure,
            t_delta_departure_error: r.t_delta_departure_error,
            t_arrival: r.t_arrival,
            t_arrival_clamped: r.t_arrival_clamped,
            t_arrival_error: r.t_arrival_error,
            phi_max: r.phi_max,
            delta_valid: r.delta_valid,
        }
    }
}

/// Aggregate over the runs of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub mean_final_norm_reward: f64,
    pub frac_final_in_smc: f64,
    pub mean_final_potential: f64,
    pub phi_max: u64,
}

impl CellSummary {
    pub fn from_traces(cell: Cell, traces: &[RunTrace]) -> Self {
        let finals: Vec<_> = traces.iter().filter_map(|t| t.metrics.last()).collect();
        let n = finals.len().max(1) as f64;
        Self {
            cell,
            runs: traces.len(),
            mean_final_norm_reward: finals.iter().map(|f| f.norm_reward).sum::<f64>() / n,
            frac_final_in_smc: finals.iter().filter(|f| f.in_smc).count() as f64 / n,
            mean_final_potential: finals.iter().map(|f| f.potential as f64).sum::<f64>() / n,
            phi_max: csm_core::theory::phi_max(cell.users),
        }
    }
}

/// Writes `runs.csv`, `summary.csv` and `bounds.json` for one cell into
/// `dir`. Traces must be ordered by run id.
pub fn emit_metrics(
    traces: &[RunTrace],
    spec: &ExperimentSpec,
    cell: Cell,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config = spec.config_for(cell);
    let pool = config.pool_size();

    let runs_path = dir.join(RUNS_FILE);
    let mut runs = csv::Writer::from_writer(create(&runs_path)?);
    runs.write_record(runs_header(&spec.metrics, pool))?;
    let mut row: Vec<String> = Vec::new();
    for (run_id, trace) in traces.iter().enumerate() {
        for frame in &trace.metrics.frames {
            row.clear();
            row.push(run_id.to_string());
            row.push(frame.super_frame.to_string());
            for metric in Metric::ALL {
                if !spec.has_metric(metric) {
                    continue;
                }
                match metric {
                    Metric::Potential => row.push(frame.potential.to_string()),
                    Metric::InSmc => row.push(flag(frame.in_smc).into()),
                    Metric::CumReward => row.push(frame.cum_reward.to_string()),
                    Metric::NormReward => row.push(frame.norm_reward.to_string()),
                    Metric::LiveUsers => row.push(frame.live_users.to_string()),
                    Metric::Switches => {
                        row.extend(
                            (0..pool)
                                .map(|n| frame.switches.get(n).copied().unwrap_or(0).to_string()),
                        );
                    }
                }
            }
            runs.write_record(&row)?;
        }
    }
    runs.flush().map_err(io_err(&runs_path))?;

    let summary_path = dir.join(SUMMARY_FILE);
    let mut summary = csv::Writer::from_writer(create(&summary_path)?);
    summary.write_record(SUMMARY_HEADER)?;
    for (run_id, trace) in traces.iter().enumerate() {
        let Some(last) = trace.metrics.last() else {
            continue;
        };
        summary.write_record([
            run_id.to_string(),
            trace.seed.to_string(),
            trace.metrics.len().to_string(),
            trace.initial_potential.to_string(),
            last.potential.to_string(),
            flag(last.in_smc).to_string(),
            last.norm_reward.to_string(),
            last.switches.iter().sum::<u64>().to_string(),
        ])?;
    }
    summary.flush().map_err(io_err(&summary_path))?;

    let bounds_path = dir.join(BOUNDS_FILE);
    let epsilon = config.epsilon_value();
    let mut bounds = BoundsJson {
        channels: cell.channels,
        users: cell.users,
        epsilon,
        delta: spec.delta,
        horizon: spec.horizon,
        runs: Vec::with_capacity(traces.len()),
    };
    for (run_id, trace) in traces.iter().enumerate() {
        let entry = match delta_min(&trace.model) {
            Ok(gaps) => {
                let report = BoundReport::compute(
                    cell.channels,
                    cell.users,
                    epsilon,
                    spec.delta,
                    gaps.delta_min,
                    spec.horizon as f64,
                );
                match report {
                    Ok(r) => RunBounds {
                        run_id,
                        seed: trace.seed,
                        delta_min: Some(gaps.delta_min),
                        error: None,
                        bounds: Some(r.into()),
                    },
                    Err(e) => RunBounds {
                        run_id,
                        seed: trace.seed,
                        delta_min: Some(gaps.delta_min),
                        error: Some(e.to_string()),
                        bounds: None,
                    },
                }
            }
            Err(e) => RunBounds {
                run_id,
                seed: trace.seed,
                delta_min: None,
                error: Some(e.to_string()),
                bounds: None,
            },
        };
        bounds.runs.push(entry);
    }
    let mut out = create(&bounds_path)?;
    serde_json::to_writer_pretty(&mut out, &bounds)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(io_err(&bounds_path))?;

    Ok(vec![runs_path, summary_path, bounds_path])
}

/// Writes `sweep.csv` with one row per cell.
pub fn emit_sweep(summaries: &[CellSummary], dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(SWEEP_HEADER)?;
    for s in summaries {
        w.write_record([
            s.cell.channels.to_string(),
            s.cell.users.to_string(),
            s.runs.to_string(),
            s.mean_final_norm_reward.to_string(),
            s.frac_final_in_smc.to_string(),
            s.mean_final_potential.to_string(),
            s.phi_max.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}
