//! Batch execution of experiment files and metric serialization.

pub mod error;
pub mod output;
pub mod spec;

use std::path::{Path, PathBuf};

use csm_core::engine::{run_repetitions, RunTrace};

pub use error::CliError;
pub use output::{emit_metrics, emit_sweep, CellSummary};
pub use spec::{parse_config, parse_config_file, Cell, ExperimentSpec, Metric, ModelMode};

/// Environment variable that overrides the output directory of the file.
pub const OUT_DIR_ENV: &str = "CSM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// 0 selects the available parallelism.
    pub workers: usize,
    pub sweep: bool,
}

/// Flag, then environment, then file, then [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, spec: &ExperimentSpec) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Runs all repetitions of one cell.
pub fn run_cell(
    spec: &ExperimentSpec,
    cell: Cell,
    workers: usize,
) -> Result<Vec<RunTrace>, CliError> {
    let config = spec.config_for(cell);
    let source = spec.model_source(cell)?;
    Ok(run_repetitions(&config, &source, workers)?)
}

/// Runs the experiment and writes its outputs under `out_dir`. A sweep
/// writes one `K{k}_N{n}` subdirectory per cell plus `sweep.csv`.
pub fn execute(
    spec: &ExperimentSpec,
    options: &RunOptions,
    out_dir: &Path,
) -> Result<Vec<CellSummary>, CliError> {
    let mut spec = spec.clone();
    if let Some(seed) = options.seed {
        spec.seed = seed;
    }
    if options.sweep {
        if spec.sweep.is_empty() {
            return Err(CliError::Constraint(
                "--sweep given but the file has no [sweep] table".into(),
            ));
        }
        let mut summaries = Vec::with_capacity(spec.sweep.len());
        for &cell in &spec.sweep {
            let traces = run_cell(&spec, cell, options.workers)?;
            let dir = out_dir.join(format!("K{}_N{}", cell.channels, cell.users));
            emit_metrics(&traces, &spec, cell, &dir)?;
            summaries.push(CellSummary::from_traces(cell, &traces));
        }
        emit_sweep(&summaries, out_dir)?;
        Ok(summaries)
    } else {
        let cell = spec.base.ok_or_else(|| {
            CliError::Constraint("`K` and `N` are required unless --sweep is given".into())
        })?;
        let traces = run_cell(&spec, cell, options.workers)?;
        emit_metrics(&traces, &spec, cell, out_dir)?;
        Ok(vec![CellSummary::from_traces(cell, &traces)])
    }
}
