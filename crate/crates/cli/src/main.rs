use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fcrl_core::agent::Algorithm;
use fcrl_core::env::{count_solutions, greedy_schedule, parse_databases};
use fcrl_core::harness::runner::json_lines_observer;
use fcrl_core::harness::{plot_curves, run_experiment, write_checkpoints, write_metrics, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fcrl", version, about = "Federated control RL on a distributed scheduling task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one algorithm over several seeds.
    Train(TrainArgs),
    /// Plot evaluation curves from metrics files.
    Plot {
        /// Comma-separated metrics CSV files; each becomes one series.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check feasibility of a databases file and count its schedules.
    Oracle {
        #[arg(long)]
        databases: PathBuf,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Agents scheduled per episode.
    #[arg(long)]
    m: Option<usize>,
    /// Time slots.
    #[arg(long = "B")]
    b: Option<usize>,
    /// Agent population size.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    pretrain: bool,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Also write one JSON line per episode.
    #[arg(long)]
    log_episodes: bool,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        if let Some(a) = self.algo {
            o.push(("algorithm", a.to_string()));
        }
        let numeric = [("n_scheduled", self.m), ("n_slots", self.b), ("n_agents", self.n), ("total_blocks", self.blocks), ("block_size", self.block_size)];
        o.extend(numeric.into_iter().filter_map(|(k, v)| v.map(|v| (k, v.to_string()))));
        if let Some(s) = &self.seeds {
            o.push(("seeds", s.clone()));
        }
        if self.pretrain {
            o.push(("pretrain", "true".to_string()));
        }
        o
    }
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let config = ExperimentConfig::load(&args.config, &args.overrides())?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let algo = config.algorithm.as_str();
    std::fs::write(args.out.join(format!("{algo}.config")), config.to_text())?;

    let mut log = if args.log_episodes {
        let path = args.out.join(format!("{algo}_episodes.jsonl"));
        Some(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    } else {
        None
    };
    let mut observer = log.as_mut().map(json_lines_observer);
    let output = run_experiment(&config, observer.as_mut().map(|o| o as _))?;
    drop(observer);
    if let Some(mut log) = log {
        log.flush()?;
    }

    let metrics = args.out.join(format!("{algo}.csv"));
    write_metrics(&output.rows, &metrics)?;
    for run in &output.runs {
        write_checkpoints(run.agent(), &args.out, &format!("{algo}_seed{}", run.seed()))?;
    }
    for row in output.rows.iter().filter(|r| r.phase == fcrl_core::harness::Phase::Eval && r.block + 1 == config.total_blocks) {
        println!("seed {} final eval reward {:.3}", row.seed, row.mean_extrinsic_reward);
    }
    println!("metrics written to {}", metrics.display());
    if output.failed_seeds.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for (seed, err) in &output.failed_seeds {
        eprintln!("seed {seed} diverged: {err}");
    }
    Ok(ExitCode::FAILURE)
}

fn oracle(path: PathBuf) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let dbs = parse_databases(&text).with_context(|| format!("parsing {}", path.display()))?;
    if dbs.is_empty() {
        bail!("{} lists no databases", path.display());
    }
    match greedy_schedule(&dbs) {
        Some(s) => {
            let slots: Vec<String> = s.actions.iter().map(usize::to_string).collect();
            println!("feasible: true");
            println!("earliest schedule: {}", slots.join(" "));
        }
        None => println!("feasible: false"),
    }
    println!("solutions: {}", count_solutions(&dbs));
    Ok(ExitCode::SUCCESS)
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(args) => train(args),
        Command::Plot { inputs, out } => {
            let curves = plot_curves(&inputs, &out)?;
            for c in curves.iter().filter(|c| !c.excluded_seeds.is_empty()) {
                eprintln!("{}: excluded diverged seeds {:?}", c.label, c.excluded_seeds);
            }
            println!("plot written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { databases } => oracle(databases),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
