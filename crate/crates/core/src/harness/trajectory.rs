//! Episode action logs that can be replayed against the deterministic maze.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{task_to_text, ExperimentConfig};
use crate::baselines::GridOracle;
use crate::env::{Cell, Env, TaskConfig};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "ecw-trajectory/1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub method: String,
    pub seed: u64,
    pub episode: u64,
    /// Maze seed passed to [`Env::reset`].
    pub env_seed: u64,
    pub task: TaskConfig,
    pub actions: Vec<usize>,
    /// Distinct cells the environment counted during training.
    pub coverage: usize,
    pub reward: f64,
    pub truncated: bool,
}

pub fn trajectories_to_text(records: &[TrajectoryRecord]) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for r in records {
        let _ = writeln!(s, "episode {} {} {}", r.method, r.seed, r.episode);
        let _ = writeln!(s, "env_seed {}", r.env_seed);
        for line in task_to_text(&r.task).lines() {
            let _ = writeln!(s, "task.{line}");
        }
        let _ = writeln!(s, "coverage {}", r.coverage);
        let _ = writeln!(s, "reward {}", r.reward);
        let _ = writeln!(s, "truncated {}", r.truncated);
        let actions: Vec<String> = r.actions.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "actions {}", actions.join(" "));
        s.push_str("end\n");
    }
    s
}

pub fn trajectories_from_text(text: &str, origin: &Path) -> Result<Vec<TrajectoryRecord>> {
    let bad = |n: usize, msg: String| Error::schema(origin, format!("line {n}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == TRAJECTORY_HEADER => {}
        other => {
            return Err(bad(
                1,
                format!(
                    "expected header '{TRAJECTORY_HEADER}', found '{}'",
                    other.map_or("", |l| l.1)
                ),
            ));
        }
    }
    let mut out = Vec::new();
    let mut lines = lines.filter(|(_, l)| !l.is_empty());
    while let Some((n, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tag, method, seed, episode] = parts[..] else {
            return Err(bad(
                n,
                format!("expected 'episode <method> <seed> <index>', found '{line}'"),
            ));
        };
        if tag != "episode" {
            return Err(bad(n, format!("expected 'episode', found '{tag}'")));
        }
        let num = |n: usize, v: &str| -> Result<u64> { v.parse().map_err(|_| bad(n, format!("invalid number '{v}'"))) };
        let (seed, episode) = (num(n, seed)?, num(n, episode)?);
        let mut task_text = String::new();
        let mut env_seed = None;
        let mut coverage = None;
        let mut reward = None;
        let mut truncated = None;
        let mut actions = None;
        loop {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::schema(origin, "unexpected end of file"))?;
            if line == "end" {
                break;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "env_seed" => env_seed = Some(num(n, value)?),
                "coverage" => coverage = Some(num(n, value)? as usize),
                "reward" => {
                    reward = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| bad(n, format!("invalid reward '{value}'")))?,
                    )
                }
                "truncated" => truncated = Some(value == "true"),
                "actions" => {
                    actions = Some(
                        value
                            .split_whitespace()
                            .map(|a| a.parse().map_err(|_| bad(n, format!("invalid action '{a}'"))))
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
                k if k.starts_with("task.") => {
                    let _ = writeln!(task_text, "{}", &line["task.".len()..]);
                }
                _ => return Err(bad(n, format!("unknown field '{key}'"))),
            }
        }
        let missing = |f: &str| Error::schema(origin, format!("episode {episode}: missing field '{f}'"));
        let task = ExperimentConfig::parse_str(&task_text)?.task;
        out.push(TrajectoryRecord {
            method: method.to_string(),
            seed,
            episode,
            env_seed: env_seed.ok_or_else(|| missing("env_seed"))?,
            task,
            actions: actions.ok_or_else(|| missing("actions"))?,
            coverage: coverage.ok_or_else(|| missing("coverage"))?,
            reward: reward.ok_or_else(|| missing("reward"))?,
            truncated: truncated.ok_or_else(|| missing("truncated"))?,
        });
    }
    Ok(out)
}

pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::write(path, trajectories_to_text(records)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectories_from_text(&text, path)
}

/// What a replay reproduced for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayedEpisode {
    pub seed: u64,
    pub episode: u64,
    pub positions: Vec<Cell>,
    pub reward: f64,
    pub coverage: usize,
    /// Grid Oracle bonus summed over the episode with unit weight.
    pub grid_sum: f64,
    /// Whether reward and coverage match the recorded values.
    pub consistent: bool,
}

/// Re-simulates an episode with position access enabled.
pub fn replay(record: &TrajectoryRecord) -> Result<ReplayedEpisode> {
    let (mut env, _) = Env::reset(&record.task, record.env_seed)?;
    let mut positions = vec![env.oracle_position()?];
    let mut grid = GridOracle::new(1, 1.0)?;
    let mut grid_sum = grid.grid_oracle_bonus(positions[0]);
    let mut reward = 0.0;
    for (t, &a) in record.actions.iter().enumerate() {
        if env.is_done() {
            return Err(Error::Usage(format!(
                "episode {} ended after {t} of {} recorded actions",
                record.episode,
                record.actions.len()
            )));
        }
        let out = env.step(a)?;
        reward += out.reward;
        let p = env.oracle_position()?;
        grid_sum += grid.grid_oracle_bonus(p);
        positions.push(p);
    }
    // goal respawns teleport without a step; the environment's own count covers them
    let coverage = env.visited_cells();
    let consistent = coverage == record.coverage && reward == record.reward && env.is_done() != record.truncated;
    Ok(ReplayedEpisode {
        seed: record.seed,
        episode: record.episode,
        positions,
        reward,
        coverage,
        grid_sum,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{Task, TvVariant};
    use crate::harness::metrics::coverage_metric;

    fn random_record(task: TaskConfig, env_seed: u64, steps: usize) -> TrajectoryRecord {
        let (mut env, _) = Env::reset(&task, env_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
        let mut actions = Vec::new();
        let mut reward = 0.0;
        while actions.len() < steps && !env.is_done() {
            let a = rng.gen_range(0..env.actions().len());
            reward += env.step(a).unwrap().reward;
            actions.push(a);
        }
        TrajectoryRecord {
            method: "ppo".into(),
            seed: 4,
            episode: 2,
            env_seed,
            coverage: env.visited_cells(),
            truncated: !env.is_done(),
            task,
            actions,
            reward,
        }
    }

    #[test]
    fn text_round_trip_and_consistent_replay() {
        let mut task = TaskConfig {
            task: Task::Dense,
            tv: TvVariant::ImageAction(4),
            episode_length: 60,
            ..TaskConfig::default()
        };
        let a = random_record(task.clone(), 11, 60);
        task.task = Task::NoReward;
        let b = random_record(task, 12, 30);
        let recs = vec![a, b];
        let back = trajectories_from_text(&trajectories_to_text(&recs), Path::new("t")).unwrap();
        assert_eq!(back, recs);
        for r in &back {
            let rep = replay(r).unwrap();
            assert!(rep.consistent, "{rep:?}");
            assert_eq!(rep.positions.len(), r.actions.len() + 1);
        }
    }

    #[test]
    fn grid_sum_matches_coverage_on_replay() {
        for seed in 0..20 {
            let task = TaskConfig {
                episode_length: 200,
                ..TaskConfig::default()
            };
            let r = random_record(task, seed, 200);
            let rep = replay(&r).unwrap();
            let cov = coverage_metric(&rep.positions, 1).unwrap();
            assert_eq!(rep.grid_sum, cov as f64);
            assert_eq!(cov, rep.coverage);
        }
    }

    #[test]
    fn malformed_files_are_schema_errors() {
        assert_eq!(
            trajectories_from_text("nope", Path::new("t")).unwrap_err().kind(),
            "schema"
        );
        let text = format!("{TRAJECTORY_HEADER}\nepisode ppo 1 2\nenv_seed 3\nend\n");
        assert!(trajectories_from_text(&text, Path::new("t"))
            .unwrap_err()
            .to_string()
            .contains("actions"));
    }
}
