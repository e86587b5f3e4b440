//! Flat `key = value` experiment files with `include = other.cfg` support.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agent::PpoConfig;
use crate::baselines::IcmConfig;
use crate::curiosity::{Aggregation, BonusConfig};
use crate::env::{Task, TaskConfig, TvVariant};
use crate::error::{Error, Result};
use crate::rnet::{ComparatorKind, RNetArch, RNetTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ppo,
    PpoIcm,
    PpoEc,
    PpoEco,
    PpoGridOracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ppo,
        Method::PpoIcm,
        Method::PpoEc,
        Method::PpoEco,
        Method::PpoGridOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ppo => "ppo",
            Method::PpoIcm => "ppo_icm",
            Method::PpoEc => "ppo_ec",
            Method::PpoEco => "ppo_eco",
            Method::PpoGridOracle => "ppo_grid_oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown method '{s}' (expected {})",
                Self::ALL.map(Method::name).join(", ")
            ))
        })
    }

    pub fn uses_rnet(self) -> bool {
        matches!(self, Method::PpoEc | Method::PpoEco)
    }
}

/// Whether the embedding branches are trained or left at their random init.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EmbeddingMode {
    Trained,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RNetSettings {
    pub k: usize,
    pub gap_multiplier: f64,
    /// Random-policy steps collected before policy training (offline EC).
    pub budget: u64,
    pub pairs_per_episode: usize,
    pub validation_fraction: f64,
    pub arch: RNetArch,
    pub train: RNetTrainConfig,
    pub embedding: EmbeddingMode,
    /// Online variant: retrain every this many policy steps...
    pub retrain_interval: u64,
    /// ...on the most recent this many observations...
    pub replay_size: usize,
    /// ...for this many epochs.
    pub online_epochs: usize,
}

impl Default for RNetSettings {
    fn default() -> Self {
        Self {
            k: 5,
            gap_multiplier: 2.0,
            budget: 100_000,
            pairs_per_episode: 200,
            validation_fraction: 0.1,
            arch: RNetArch::default(),
            train: RNetTrainConfig::default(),
            embedding: EmbeddingMode::Trained,
            retrain_interval: 20_000,
            replay_size: 40_000,
            online_epochs: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSettings {
    pub cell_size: i32,
    pub weight: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            cell_size: 1,
            weight: 0.052,
        }
    }
}

/// Everything needed to reproduce one multi-seed run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    /// Overrides the method column of the metrics (ablation variants).
    pub label: Option<String>,
    pub method: Method,
    pub task: TaskConfig,
    pub bonus: BonusConfig,
    pub ppo: PpoConfig,
    pub icm: IcmConfig,
    pub grid: GridSettings,
    pub rnet: RNetSettings,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub log_bonus: bool,
    pub log_trajectories: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            label: None,
            method: Method::PpoEc,
            task: TaskConfig::default(),
            bonus: BonusConfig::default(),
            ppo: PpoConfig::default(),
            icm: IcmConfig::default(),
            grid: GridSettings::default(),
            rnet: RNetSettings::default(),
            total_steps: 300_000,
            seeds: (0..10).collect(),
            output_dir: None,
            log_bonus: false,
            log_trajectories: false,
        }
    }
}

/// Raw key/value pairs with the file and line each value came from.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, String)>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<Self> {
        let mut map = Self::default();
        map.load_into(path, &mut Vec::new())?;
        Ok(map)
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut map = Self::default();
        map.parse_into(text, origin, None, &mut Vec::new())?;
        Ok(map)
    }

    fn load_into(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        let canon = path.canonicalize().map_err(|e| Error::io(path, e))?;
        if stack.contains(&canon) {
            return Err(Error::Config(format!("include cycle through {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        stack.push(canon);
        let dir = path.parent().map(Path::to_path_buf);
        self.parse_into(&text, &path.display().to_string(), dir.as_deref(), stack)?;
        stack.pop();
        Ok(())
    }

    fn parse_into(&mut self, text: &str, origin: &str, dir: Option<&Path>, stack: &mut Vec<PathBuf>) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{at}: expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Config(format!("{at}: empty key")));
            }
            if key == "include" {
                let target = match dir {
                    Some(d) => d.join(value),
                    None => PathBuf::from(value),
                };
                self.load_into(&target, stack)?;
            } else {
                self.entries.insert(key.to_string(), (value.to_string(), at));
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.to_string(), (value.to_string(), "override".into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

struct Reader<'a> {
    map: &'a ConfigMap,
    used: Vec<&'a str>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &'static str) -> Option<(&'a str, &'a str)> {
        let (k, (v, at)) = self.map.entries.get_key_value(key)?;
        self.used.push(k);
        Some((v, at))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str, slot: &mut T) -> Result<()> {
        if let Some((v, at)) = self.raw(key) {
            *slot = v
                .parse()
                .map_err(|_| Error::Config(format!("{at}: cannot parse '{v}' for {key}")))?;
        }
        Ok(())
    }

    fn with<T>(&mut self, key: &'static str, slot: &mut T, f: impl FnOnce(&str) -> Result<T>) -> Result<()> {
        if let Some((v, at)) = self.raw(key) {
            *slot = f(v).map_err(|e| Error::Config(format!("{at}: {e}")))?;
        }
        Ok(())
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected true or false, got '{s}'"))),
    }
}

/// `0,1,5` or `0..10` (half-open).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        return if a < b { Ok((a..b).collect()) } else { Err(bad()) };
    }
    let seeds: Vec<u64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if seeds.is_empty() || sorted.len() != seeds.len() {
        return Err(bad());
    }
    Ok(seeds)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_map(&ConfigMap::load(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse_str(text, "<string>")?)
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let mut c = Self::default();
        let mut r = Reader { map, used: Vec::new() };
        r.parse("name", &mut c.name)?;
        r.with("label", &mut c.label, |s| Ok(Some(s.to_string())))?;
        r.with("method", &mut c.method, Method::parse)?;
        r.parse("total_steps", &mut c.total_steps)?;
        r.with("seeds", &mut c.seeds, parse_seeds)?;
        r.with("output_dir", &mut c.output_dir, |s| Ok(Some(PathBuf::from(s))))?;
        r.with("log.bonus", &mut c.log_bonus, parse_bool)?;
        r.with("log.trajectories", &mut c.log_trajectories, parse_bool)?;

        let t = &mut c.task;
        r.with("task", &mut t.task, Task::parse)?;
        r.with("tv", &mut t.tv, TvVariant::parse)?;
        r.parse("episode_length", &mut t.episode_length)?;
        r.parse("min_spawn_goal_distance", &mut t.min_spawn_goal_distance)?;
        let mut size = t.maze_width;
        r.parse("maze_size", &mut size)?;
        t.maze_width = size;
        t.maze_height = size;
        r.parse("texture_count", &mut t.texture_count)?;
        r.parse("view_size", &mut t.view_size)?;
        r.parse("dense_objects", &mut t.dense_objects)?;
        r.with("allow_fire", &mut t.allow_fire, parse_bool)?;

        let p = &mut c.ppo;
        r.parse("ppo.gamma", &mut p.discount_gamma)?;
        r.parse("ppo.lambda", &mut p.gae_lambda)?;
        r.parse("ppo.clip", &mut p.clip_epsilon)?;
        r.parse("ppo.entropy_coef", &mut p.entropy_coef)?;
        r.parse("ppo.value_coef", &mut p.value_coef)?;
        r.parse("ppo.learning_rate", &mut p.learning_rate)?;
        r.parse("ppo.epochs", &mut p.epochs)?;
        r.parse("ppo.minibatch", &mut p.minibatch)?;
        r.parse("ppo.horizon", &mut p.horizon)?;
        r.parse("ppo.task_reward_scale", &mut p.task_reward_scale)?;
        r.parse("ppo.max_grad_norm", &mut p.max_grad_norm)?;
        r.parse("ppo.hidden", &mut p.hidden)?;

        let b = &mut c.bonus;
        r.parse("ec.alpha", &mut b.alpha)?;
        r.parse("ec.beta", &mut b.beta)?;
        r.parse("ec.novelty_threshold", &mut b.novelty_threshold)?;
        r.with("ec.aggregation", &mut b.aggregation, Aggregation::parse)?;
        r.parse("ec.memory_size", &mut b.capacity)?;

        let i = &mut c.icm;
        r.parse("icm.eta", &mut i.eta)?;
        r.parse("icm.forward_ratio", &mut i.forward_ratio)?;
        r.parse("icm.learning_rate", &mut i.learning_rate)?;
        r.parse("icm.embedding_dim", &mut i.embedding_dim)?;
        r.parse("icm.hidden", &mut i.hidden)?;

        r.parse("grid.cell_size", &mut c.grid.cell_size)?;
        r.parse("grid.weight", &mut c.grid.weight)?;

        let n = &mut c.rnet;
        r.parse("rnet.k", &mut n.k)?;
        r.parse("rnet.gap", &mut n.gap_multiplier)?;
        r.parse("rnet.budget", &mut n.budget)?;
        r.parse("rnet.pairs_per_episode", &mut n.pairs_per_episode)?;
        r.parse("rnet.validation_fraction", &mut n.validation_fraction)?;
        r.parse("rnet.epochs", &mut n.train.epochs)?;
        r.parse("rnet.learning_rate", &mut n.train.learning_rate)?;
        r.parse("rnet.batch_size", &mut n.train.batch_size)?;
        r.parse("rnet.embedding_dim", &mut n.arch.embedding_dim)?;
        r.parse("rnet.hidden", &mut n.arch.embed_hidden)?;
        r.parse("rnet.comparator_hidden", &mut n.arch.comparator_hidden)?;
        r.with("rnet.comparator", &mut n.arch.comparator, ComparatorKind::parse)?;
        r.with("rnet.shared_branches", &mut n.arch.shared_branches, parse_bool)?;
        r.with("rnet.embedding", &mut n.embedding, |s| match s {
            "trained" => Ok(EmbeddingMode::Trained),
            "random" => Ok(EmbeddingMode::Random),
            _ => Err(Error::Config(format!("expected trained or random, got '{s}'"))),
        })?;
        r.parse("rnet.retrain_interval", &mut n.retrain_interval)?;
        r.parse("rnet.replay_size", &mut n.replay_size)?;
        r.parse("rnet.online_epochs", &mut n.online_epochs)?;

        let used = r.used;
        if let Some(k) = map.keys().find(|k| !used.contains(k)) {
            let at = &map.entries[k].1;
            return Err(Error::Config(format!("{at}: unknown key '{k}'")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.ppo.validate()?;
        self.bonus.validate()?;
        self.icm.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.grid.cell_size <= 0 {
            return Err(Error::Config("grid.cell_size must be positive".into()));
        }
        let n = &self.rnet;
        if n.k == 0 || !(n.gap_multiplier > 1.0) || n.pairs_per_episode == 0 {
            return Err(Error::Config(
                "rnet.k and rnet.pairs_per_episode must be positive and rnet.gap > 1".into(),
            ));
        }
        if !(n.validation_fraction > 0.0 && n.validation_fraction < 1.0) {
            return Err(Error::Config("rnet.validation_fraction must lie in (0, 1)".into()));
        }
        if self.method == Method::PpoEc && n.budget >= self.total_steps {
            return Err(Error::Config(format!(
                "rnet.budget ({}) leaves no steps of the total budget ({}) for policy training",
                n.budget, self.total_steps
            )));
        }
        if self.method == Method::PpoEco && (n.retrain_interval == 0 || n.replay_size == 0 || n.online_epochs == 0) {
            return Err(Error::Config(
                "online retraining needs positive interval, replay size and epochs".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form; [`Self::parse_str`] reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        if let Some(l) = &self.label {
            kv("label", l.clone());
        }
        kv("method", self.method.name().into());
        kv("total_steps", self.total_steps.to_string());
        kv(
            "seeds",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        if let Some(d) = &self.output_dir {
            kv("output_dir", d.display().to_string());
        }
        kv("log.bonus", self.log_bonus.to_string());
        kv("log.trajectories", self.log_trajectories.to_string());
        s.push_str(&task_to_text(&self.task));
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let p = &self.ppo;
        kv("ppo.gamma", p.discount_gamma.to_string());
        kv("ppo.lambda", p.gae_lambda.to_string());
        kv("ppo.clip", p.clip_epsilon.to_string());
        kv("ppo.entropy_coef", p.entropy_coef.to_string());
        kv("ppo.value_coef", p.value_coef.to_string());
        kv("ppo.learning_rate", p.learning_rate.to_string());
        kv("ppo.epochs", p.epochs.to_string());
        kv("ppo.minibatch", p.minibatch.to_string());
        kv("ppo.horizon", p.horizon.to_string());
        kv("ppo.task_reward_scale", p.task_reward_scale.to_string());
        kv("ppo.max_grad_norm", p.max_grad_norm.to_string());
        kv("ppo.hidden", p.hidden.to_string());
        let b = &self.bonus;
        kv("ec.alpha", b.alpha.to_string());
        kv("ec.beta", b.beta.to_string());
        kv("ec.novelty_threshold", b.novelty_threshold.to_string());
        kv("ec.aggregation", b.aggregation.name());
        kv("ec.memory_size", b.capacity.to_string());
        let i = &self.icm;
        kv("icm.eta", i.eta.to_string());
        kv("icm.forward_ratio", i.forward_ratio.to_string());
        kv("icm.learning_rate", i.learning_rate.to_string());
        kv("icm.embedding_dim", i.embedding_dim.to_string());
        kv("icm.hidden", i.hidden.to_string());
        kv("grid.cell_size", self.grid.cell_size.to_string());
        kv("grid.weight", self.grid.weight.to_string());
        let n = &self.rnet;
        kv("rnet.k", n.k.to_string());
        kv("rnet.gap", n.gap_multiplier.to_string());
        kv("rnet.budget", n.budget.to_string());
        kv("rnet.pairs_per_episode", n.pairs_per_episode.to_string());
        kv("rnet.validation_fraction", n.validation_fraction.to_string());
        kv("rnet.epochs", n.train.epochs.to_string());
        kv("rnet.learning_rate", n.train.learning_rate.to_string());
        kv("rnet.batch_size", n.train.batch_size.to_string());
        kv("rnet.embedding_dim", n.arch.embedding_dim.to_string());
        kv("rnet.hidden", n.arch.embed_hidden.to_string());
        kv("rnet.comparator_hidden", n.arch.comparator_hidden.to_string());
        kv("rnet.comparator", n.arch.comparator.name().into());
        kv("rnet.shared_branches", n.arch.shared_branches.to_string());
        kv(
            "rnet.embedding",
            match n.embedding {
                EmbeddingMode::Trained => "trained".into(),
                EmbeddingMode::Random => "random".into(),
            },
        );
        kv("rnet.retrain_interval", n.retrain_interval.to_string());
        kv("rnet.replay_size", n.replay_size.to_string());
        kv("rnet.online_epochs", n.online_epochs.to_string());
        s
    }
}

/// The task keys of a config file.
pub fn task_to_text(t: &TaskConfig) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("task", t.task.name().to_string()),
        ("tv", t.tv.name()),
        ("episode_length", t.episode_length.to_string()),
        ("min_spawn_goal_distance", t.min_spawn_goal_distance.to_string()),
        ("maze_size", t.maze_width.to_string()),
        ("texture_count", t.texture_count.to_string()),
        ("view_size", t.view_size.to_string()),
        ("dense_objects", t.dense_objects.to_string()),
        ("allow_fire", t.allow_fire.to_string()),
    ] {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}
