//! Experiment orchestration: configuration, seeded runs, metrics files and
//! reward-curve plots.

pub mod config;
pub mod metrics;
pub mod plot;
pub mod runner;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use metrics::{read_metrics, write_metrics, MetricsError, MetricsRow, Phase};
pub use plot::{check_aligned, curve_from_rows, render_svg, Curve};
pub use runner::{run_experiment, write_checkpoints, AnyAgent, ExperimentOutput, SeedRun};

use crate::env::EnvError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("episode log: {0}")]
    Observer(std::io::Error),
    #[error("seed {seed}: evaluation block {block} changed network parameters")]
    EvalMutatedParameters { seed: u64, block: usize },
    #[error("plot needs at least one metrics file")]
    NoPlotInputs,
    #[error("{label}: {reason}")]
    PlotMismatch { label: String, reason: String },
}

/// Reads each metrics file and renders one curve per file, labelled by file
/// stem, into an SVG at `out`.
pub fn plot_curves(inputs: &[PathBuf], out: &Path) -> Result<Vec<Curve>, HarnessError> {
    if inputs.is_empty() {
        return Err(HarnessError::NoPlotInputs);
    }
    let curves = inputs
        .iter()
        .map(|path| {
            let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            curve_from_rows(&label, &read_metrics(path)?)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    check_aligned(&curves)?;
    std::fs::write(out, render_svg("evaluation reward", &curves))
        .map_err(|source| HarnessError::Io { path: out.to_path_buf(), source })?;
    Ok(curves)
}
