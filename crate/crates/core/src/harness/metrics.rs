//! Per-block metrics and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 8] = [
    "seed",
    "block",
    "phase",
    "episodes",
    "mean_extrinsic_reward",
    "mean_invocations",
    "mean_intrinsic_success",
    "seconds",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: row {row}: {reason}")]
    Malformed { path: PathBuf, row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
    /// A block cut short by divergence; the means cover the episodes run.
    Failed,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
            Phase::Failed => "failed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Phase::Train),
            "eval" => Ok(Phase::Eval),
            "failed" => Ok(Phase::Failed),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub block: usize,
    pub phase: Phase,
    pub episodes: usize,
    pub mean_extrinsic_reward: f64,
    pub mean_invocations: f64,
    /// `None` when no critic judged any invocation (MARL).
    pub mean_intrinsic_success: Option<f64>,
    pub seconds: f64,
}

/// Accumulates episode outcomes into a [`MetricsRow`].
#[derive(Debug, Clone, Default)]
pub struct BlockStats {
    episodes: usize,
    reward: f64,
    invocations: f64,
    intrinsic: f64,
    intrinsic_count: usize,
}

impl BlockStats {
    pub fn add(&mut self, extrinsic: f64, invocations: usize, intrinsic: Option<f64>) {
        self.episodes += 1;
        self.reward += extrinsic;
        self.invocations += invocations as f64;
        if let Some(rate) = intrinsic {
            self.intrinsic += rate;
            self.intrinsic_count += 1;
        }
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn row(&self, seed: u64, block: usize, phase: Phase, seconds: f64) -> MetricsRow {
        let mean = |total: f64, n: usize| if n == 0 { 0.0 } else { total / n as f64 };
        MetricsRow {
            seed,
            block,
            phase,
            episodes: self.episodes,
            mean_extrinsic_reward: mean(self.reward, self.episodes),
            mean_invocations: mean(self.invocations, self.episodes),
            mean_intrinsic_success: (self.intrinsic_count > 0).then(|| self.intrinsic / self.intrinsic_count as f64),
            seconds,
        }
    }
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes the CSV sorted by (seed, block, phase).
pub fn write_metrics_to<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), csv::Error> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.seed, r.block, r.phase));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in sorted {
        w.write_record([
            r.seed.to_string(),
            r.block.to_string(),
            r.phase.to_string(),
            r.episodes.to_string(),
            fixed(r.mean_extrinsic_reward),
            fixed(r.mean_invocations),
            r.mean_intrinsic_success.map(fixed).unwrap_or_default(),
            fixed(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), MetricsError> {
    let file = std::fs::File::create(path).map_err(|source| MetricsError::Io { path: path.to_path_buf(), source })?;
    write_metrics_to(rows, std::io::BufWriter::new(file)).map_err(|source| MetricsError::Csv { path: path.to_path_buf(), source })
}

/// Parses CSV produced by [`write_metrics_to`]; `path` only labels errors.
pub fn read_metrics_from<R: Read>(input: R, path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut reader = csv::Reader::from_reader(input);
    let csv_err = |source| MetricsError::Csv { path: path.to_path_buf(), source };
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(MetricsError::Malformed { path: path.to_path_buf(), row: 0, reason: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |reason: String| MetricsError::Malformed { path: path.to_path_buf(), row: i + 1, reason };
        fn field<T: FromStr>(record: &csv::StringRecord, k: usize) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            let raw = record.get(k).ok_or_else(|| format!("missing {}", CSV_HEADER[k]))?;
            raw.parse().map_err(|e| format!("{}: {e}", CSV_HEADER[k]))
        }
        let intrinsic = match record.get(6) {
            Some("") | None => None,
            Some(_) => Some(field(&record, 6).map_err(bad)?),
        };
        rows.push(MetricsRow {
            seed: field(&record, 0).map_err(bad)?,
            block: field(&record, 1).map_err(bad)?,
            phase: field(&record, 2).map_err(bad)?,
            episodes: field(&record, 3).map_err(bad)?,
            mean_extrinsic_reward: field(&record, 4).map_err(bad)?,
            mean_invocations: field(&record, 5).map_err(bad)?,
            mean_intrinsic_success: intrinsic,
            seconds: field(&record, 7).map_err(bad)?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let file = std::fs::File::open(path).map_err(|source| MetricsError::Io { path: path.to_path_buf(), source })?;
    read_metrics_from(std::io::BufReader::new(file), path)
}
