use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ecw_core::harness::ablation::{run_ablation, write_ablation, Suite};
use ecw_core::harness::config::{ConfigMap, ExperimentConfig};
use ecw_core::harness::emit_plots;
use ecw_core::harness::output::{summarize, summary_to_csv};
use ecw_core::harness::run::{run_experiment, train_rnets, RunCache};
use ecw_core::harness::trajectory::{read_trajectories, replay};

#[derive(Parser)]
#[command(name = "ecw", version, about = "Episodic-curiosity exploration workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-policy data and train reachability networks, one per seed.
    TrainRnet {
        config: PathBuf,
        /// Override config keys, e.g. `--set rnet.k=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for the checkpoints.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment over all configured seeds.
    Run {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sweep one knob: threshold_k, memory_size, rnet_budget, random_embedding, branch_sharing.
    Ablate {
        suite: String,
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory for per-setting runs and `<suite>.csv`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Plot metrics CSVs as SVG line charts.
    Plot {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Metric column to plot; repeat for several charts.
        #[arg(short, long = "metric")]
        metrics: Vec<String>,
    },
    /// Re-simulate a trajectory file and check it against its recorded metrics.
    Replay { trajectory: PathBuf },
}

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut map = ConfigMap::load(path)?;
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!(ecw_core::Error::Usage(format!("override '{o}' is not KEY=VALUE")));
        };
        map.set(k.trim(), v.trim());
    }
    Ok(ExperimentConfig::from_map(&map)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainRnet { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            for (seed, r) in train_rnets(&cfg, out.as_deref())? {
                println!(
                    "seed {seed}: validation accuracy {:.4} after {} steps",
                    r.accuracy, r.steps
                );
            }
        }
        Command::Run { config, overrides, out } => {
            let mut cfg = load_config(&config, &overrides)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let result = run_experiment(&cfg, &RunCache::new())?;
            print!("{}", summary_to_csv(&summarize(&result)));
            for (seed, msg) in result.failures() {
                eprintln!("seed {seed} failed: {msg}");
            }
            if let Some(d) = &cfg.output_dir {
                eprintln!("wrote {}", d.display());
            }
        }
        Command::Ablate {
            suite,
            config,
            overrides,
            out,
        } => {
            let suite = Suite::parse(&suite)?;
            let mut cfg = load_config(&config, &overrides)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let rows = run_ablation(suite, &cfg, &RunCache::new())?;
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let path = dir.join(format!("{}.csv", suite.name()));
            write_ablation(&path, &rows)?;
            println!("wrote {}", path.display());
        }
        Command::Plot { csvs, output, metrics } => {
            for p in emit_plots(&csvs, &output, &metrics)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Replay { trajectory } => {
            let records = read_trajectories(&trajectory)?;
            let mut mismatches = 0;
            for r in &records {
                let rep = replay(r).with_context(|| format!("replaying seed {} episode {}", r.seed, r.episode))?;
                println!(
                    "{} seed {} episode {}: steps {} reward {} coverage {} grid {} {}",
                    r.method,
                    r.seed,
                    r.episode,
                    r.actions.len(),
                    rep.reward,
                    rep.coverage,
                    rep.grid_sum,
                    if rep.consistent { "ok" } else { "MISMATCH" }
                );
                mismatches += usize::from(!rep.consistent);
            }
            if mismatches > 0 {
                bail!(ecw_core::Error::Usage(format!(
                    "{mismatches} of {} episodes did not reproduce their recorded metrics",
                    records.len()
                )));
            }
        }
    }
    Ok(())
}

/// One JSON object on stderr describing the failure.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<ecw_core::Error>())
        .map_or("internal", ecw_core::Error::kind);
    let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": "usage", "message": e.to_string().trim() })
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
