//! Writes run artifacts: metrics, summary, timings, checkpoints and logs.

use std::io::Write;
use std::path::Path;

use super::checkpoint::{policy_to_text, rnet_to_text, save_text};
use super::metrics::{per_seed_final, write_metrics_file, MeanStd};
use super::run::{method_label, ExperimentResult};
use super::trajectory::write_trajectories;
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA: &str = "#schema=ecw-summary/1";

/// Share of the step budget whose episodes count as "final".
pub const FINAL_FRACTION: f64 = 0.1;

pub const SUMMARY_METRICS: [&str; 6] = [
    "coverage",
    "episode_reward",
    "goals",
    "tv_switches",
    "mean_bonus",
    "rnet_accuracy",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub stats: MeanStd,
    pub failed_seeds: usize,
}

/// Mean ± std across seeds of each metric over the final share of the budget.
/// Network accuracy uses the last value each seed reported.
pub fn summarize(result: &ExperimentResult) -> Vec<SummaryRow> {
    let label = method_label(&result.config);
    let ok: Vec<_> = result.outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let failed = result.outcomes.len() - ok.len();
    let rows: Vec<_> = ok.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let mut out = Vec::new();
    for metric in SUMMARY_METRICS {
        let values: Vec<f64> = if metric == "rnet_accuracy" {
            ok.iter()
                .filter_map(|o| o.rnet_accuracy)
                .filter(|a| a.is_finite())
                .collect()
        } else {
            per_seed_final(&rows, &label, metric, result.config.total_steps, FINAL_FRACTION)
                .into_values()
                .collect()
        };
        if let Some(stats) = MeanStd::of(&values) {
            out.push(SummaryRow {
                method: label.clone(),
                metric: metric.to_string(),
                stats,
                failed_seeds: failed,
            });
        }
    }
    out
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_SCHEMA}\nmethod,metric,mean,std,seeds,failed_seeds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.metric, r.stats.mean, r.stats.std, r.stats.n, r.failed_seeds
        ));
    }
    s
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &result.config;
    save_text(&dir.join("config.cfg"), &cfg.to_text())?;
    write_metrics_file(&dir.join("metrics.csv"), &result.rows())?;
    save_text(&dir.join("summary.csv"), &summary_to_csv(&summarize(result)))?;

    let path = dir.join("timing.csv");
    let mut f = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(f, "seed,env_steps,wall_seconds").map_err(io)?;
    for o in &result.outcomes {
        writeln!(f, "{},{},{:.3}", o.seed, o.env_steps, o.wall_seconds).map_err(io)?;
    }
    f.flush().map_err(io)?;

    let failures = result.failures();
    let path = dir.join("failures.txt");
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        let text: String = failures.iter().map(|(s, m)| format!("seed {s}: {m}\n")).collect();
        save_text(&path, &text)?;
    }

    if cfg.log_bonus {
        let path = dir.join("bonus_log.csv");
        let mut f = create(&path)?;
        let io = |e| Error::io(&path, e);
        writeln!(f, "seed,env_step,episode,score,bonus,inserted,memory_len").map_err(io)?;
        for r in result.outcomes.iter().flat_map(|o| &o.bonus_log) {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                r.seed,
                r.env_step,
                r.episode,
                r.score,
                r.bonus,
                u8::from(r.inserted),
                r.memory_len
            )
            .map_err(io)?;
        }
        f.flush().map_err(io)?;
    }
    if cfg.log_trajectories {
        let recs: Vec<_> = result
            .outcomes
            .iter()
            .flat_map(|o| o.trajectories.iter().cloned())
            .collect();
        write_trajectories(&dir.join("trajectories.txt"), &recs)?;
    }
    for o in &result.outcomes {
        if let Some(p) = &o.policy {
            save_text(&dir.join(format!("policy_seed{}.ckpt", o.seed)), &policy_to_text(p))?;
        }
        if let Some(n) = &o.rnet {
            save_text(&dir.join(format!("rnet_seed{}.ckpt", o.seed)), &rnet_to_text(n))?;
        }
    }
    Ok(())
}
