//! Per-episode metrics rows, the versioned CSV schema and summary statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::env::Cell;
use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "#schema=ecw-metrics/1";

pub const METRICS_COLUMNS: [&str; 15] = [
    "method",
    "seed",
    "phase",
    "episode",
    "env_step",
    "episode_reward",
    "coverage",
    "mean_bonus",
    "insertions",
    "goals",
    "tv_switches",
    "fires",
    "episode_length",
    "rnet_accuracy",
    "truncated",
];

/// Numeric columns that can be plotted or summarised.
pub const NUMERIC_COLUMNS: [&str; 10] = [
    "episode_reward",
    "coverage",
    "mean_bonus",
    "insertions",
    "goals",
    "tv_switches",
    "fires",
    "episode_length",
    "rnet_accuracy",
    "truncated",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Random-policy data collection for the reachability network.
    Collect,
    /// Policy training.
    Train,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Collect => "collect",
            Phase::Train => "train",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "collect" => Ok(Phase::Collect),
            "train" => Ok(Phase::Train),
            _ => Err(Error::Config(format!("unknown phase '{s}'"))),
        }
    }
}

/// One finished (or budget-truncated) episode.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub phase: Phase,
    pub episode: u64,
    /// Environment steps consumed by this seed up to the end of the episode.
    pub env_step: u64,
    pub episode_reward: f64,
    pub coverage: usize,
    pub mean_bonus: f64,
    pub insertions: usize,
    pub goals: usize,
    pub tv_switches: usize,
    pub fires: usize,
    pub episode_length: usize,
    /// Validation accuracy, set on the first row after the network was (re)trained.
    pub rnet_accuracy: Option<f64>,
    pub truncated: bool,
}

impl MetricsRow {
    fn fields(&self) -> [String; 15] {
        [
            self.method.clone(),
            self.seed.to_string(),
            self.phase.name().into(),
            self.episode.to_string(),
            self.env_step.to_string(),
            self.episode_reward.to_string(),
            self.coverage.to_string(),
            self.mean_bonus.to_string(),
            self.insertions.to_string(),
            self.goals.to_string(),
            self.tv_switches.to_string(),
            self.fires.to_string(),
            self.episode_length.to_string(),
            self.rnet_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            u8::from(self.truncated).to_string(),
        ]
    }

    /// Value of a numeric column; `None` for an empty accuracy cell.
    pub fn numeric(&self, column: &str) -> Option<f64> {
        Some(match column {
            "seed" => self.seed as f64,
            "episode" => self.episode as f64,
            "env_step" => self.env_step as f64,
            "episode_reward" => self.episode_reward,
            "coverage" => self.coverage as f64,
            "mean_bonus" => self.mean_bonus,
            "insertions" => self.insertions as f64,
            "goals" => self.goals as f64,
            "tv_switches" => self.tv_switches as f64,
            "fires" => self.fires as f64,
            "episode_length" => self.episode_length as f64,
            "rnet_accuracy" => return self.rnet_accuracy,
            "truncated" => f64::from(u8::from(self.truncated)),
            _ => return None,
        })
    }
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = out;
    let csv_err = |e: csv::Error| Error::Generation(format!("writing metrics: {e}"));
    writeln!(out, "{METRICS_SCHEMA}").map_err(|e| Error::Generation(format!("writing metrics: {e}")))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Generation(format!("writing metrics: {e}")))?;
    Ok(())
}

pub fn write_metrics_file(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(std::io::BufWriter::new(f), rows)
}

/// Reads and validates a metrics CSV. `origin` names the source in errors.
pub fn read_metrics<R: BufRead>(mut input: R, origin: &Path) -> Result<Vec<MetricsRow>> {
    let mut first = String::new();
    input.read_line(&mut first).map_err(|e| Error::io(origin, e))?;
    if first.trim_end() != METRICS_SCHEMA {
        return Err(Error::schema(
            origin,
            format!("expected header line '{METRICS_SCHEMA}', found '{}'", first.trim_end()),
        ));
    }
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::schema(origin, e.to_string()))?.clone();
    for (i, want) in METRICS_COLUMNS.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *want => {}
            Some(h) => {
                return Err(Error::schema(
                    origin,
                    format!("column {} is '{h}', expected '{want}'", i + 1),
                ));
            }
            None => return Err(Error::schema(origin, format!("missing column '{want}'"))),
        }
    }
    if headers.len() != METRICS_COLUMNS.len() {
        return Err(Error::schema(
            origin,
            format!("unexpected extra column '{}'", &headers[METRICS_COLUMNS.len()]),
        ));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::schema(origin, e.to_string()))?;
        let line = n + 3;
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: std::str::FromStr>(origin: &Path, line: usize, col: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::schema(origin, format!("line {line}: column '{col}' has invalid value '{v}'")))
        }
        let c = &METRICS_COLUMNS;
        let row = MetricsRow {
            method: field(0).to_string(),
            seed: num(origin, line, c[1], field(1))?,
            phase: Phase::parse(field(2)).map_err(|_| {
                Error::schema(
                    origin,
                    format!("line {line}: column 'phase' has invalid value '{}'", field(2)),
                )
            })?,
            episode: num(origin, line, c[3], field(3))?,
            env_step: num(origin, line, c[4], field(4))?,
            episode_reward: num(origin, line, c[5], field(5))?,
            coverage: num(origin, line, c[6], field(6))?,
            mean_bonus: num(origin, line, c[7], field(7))?,
            insertions: num(origin, line, c[8], field(8))?,
            goals: num(origin, line, c[9], field(9))?,
            tv_switches: num(origin, line, c[10], field(10))?,
            fires: num(origin, line, c[11], field(11))?,
            episode_length: num(origin, line, c[12], field(12))?,
            rnet_accuracy: match field(13) {
                "" => None,
                v => Some(num(origin, line, c[13], v)?),
            },
            truncated: match field(14) {
                "0" => false,
                "1" => true,
                v => {
                    return Err(Error::schema(
                        origin,
                        format!("line {line}: column 'truncated' has invalid value '{v}'"),
                    ))
                }
            },
        };
        rows.push(row);
    }
    validate_rows(&rows).map_err(|m| Error::schema(origin, m))?;
    Ok(rows)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics(std::io::BufReader::new(f), path)
}

/// Env steps must not decrease within one (method, seed) stream.
pub fn validate_rows(rows: &[MetricsRow]) -> std::result::Result<(), String> {
    let mut last: BTreeMap<(&str, u64), u64> = BTreeMap::new();
    for r in rows {
        let prev = last.entry((&r.method, r.seed)).or_insert(0);
        if r.env_step < *prev {
            return Err(format!(
                "env_step decreases for method {} seed {}: {} after {}",
                r.method, r.seed, r.env_step, *prev
            ));
        }
        *prev = r.env_step;
    }
    Ok(())
}

/// Number of distinct `cell_size`-sized grid cells touched by a trajectory.
pub fn coverage_metric(positions: &[Cell], cell_size: i32) -> Result<usize> {
    if cell_size <= 0 {
        return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
    }
    let cells: HashSet<(i32, i32)> = positions
        .iter()
        .map(|p| (p.x.div_euclid(cell_size), p.y.div_euclid(cell_size)))
        .collect();
    Ok(cells.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Population standard deviation, matching the `mean ± std` convention.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.std
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.std
    }
}

/// Mean of `column` over training-phase episodes that end in the final
/// `fraction` of a seed's step budget. Empty accuracy cells are skipped.
pub fn final_value(rows: &[MetricsRow], column: &str, total_steps: u64, fraction: f64) -> Option<f64> {
    let start = (total_steps as f64 * (1.0 - fraction)).ceil() as u64;
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.phase == Phase::Train && r.env_step > start)
        .filter_map(|r| r.numeric(column))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Per-seed final values of `column` for one method, ordered by seed.
pub fn per_seed_final(
    rows: &[MetricsRow],
    method: &str,
    column: &str,
    total_steps: u64,
    fraction: f64,
) -> BTreeMap<u64, f64> {
    let mut by_seed: BTreeMap<u64, Vec<MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method) {
        by_seed.entry(r.seed).or_default().push(r.clone());
    }
    by_seed
        .into_iter()
        .filter_map(|(s, rs)| final_value(&rs, column, total_steps, fraction).map(|v| (s, v)))
        .collect()
}
