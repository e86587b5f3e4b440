//! Per-seed training pipelines and the multi-seed runner.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EmbeddingMode, ExperimentConfig, Method, RNetSettings};
use super::metrics::{MetricsRow, Phase};
use super::trajectory::TrajectoryRecord;
use crate::agent::{policy_act, policy_adam, ppo_update, PolicyParams, RolloutBuffer};
use crate::baselines::{GridOracle, Icm, Transitions};
use crate::curiosity::EcModule;
use crate::env::{Action, Env, Observation, TaskConfig};
use crate::error::{Error, Result};
use crate::rnet::{mine_pairs, train_rnetwork, validation_accuracy, EpochLog, RNetwork, Split, TrajectoryStore};

/// Independent random streams derived from a seed.
mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const ACTIONS: u64 = 2;
    pub const PPO: u64 = 3;
    pub const RNET_INIT: u64 = 4;
    pub const RNET_TRAIN: u64 = 5;
    pub const ICM: u64 = 6;
    pub const MEMORY: u64 = 7;
    pub const ENV_SEEDS: u64 = 8;
    pub const COLLECT: u64 = 9;
}

pub fn seed_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Draws per-episode maze seeds, skipping mazes that cannot host the task.
struct EpisodeSource {
    rng: ChaCha8Rng,
}

impl EpisodeSource {
    fn next(&mut self, task: &TaskConfig) -> Result<(u64, Env, Observation)> {
        let mut last = None;
        for _ in 0..100 {
            let s: u64 = self.rng.gen();
            match Env::reset(task, s) {
                Ok((env, obs)) => return Ok((s, env, obs)),
                Err(e @ Error::Generation(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Per-step bonus log entry of the episodic curiosity module.
#[derive(Clone, Debug, PartialEq)]
pub struct BonusLogRow {
    pub seed: u64,
    pub env_step: u64,
    pub episode: u64,
    pub score: f64,
    pub bonus: f64,
    pub inserted: bool,
    pub memory_len: usize,
}

/// Random-policy data collection plus the network trained on it.
#[derive(Clone, Debug)]
pub struct OfflineRNet {
    pub net: Arc<RNetwork>,
    pub accuracy: f64,
    pub epochs: Vec<EpochLog>,
    /// Collection episodes; the method column is filled in per run.
    pub rows: Vec<MetricsRow>,
    pub steps: u64,
}

/// Shares collected data and trained networks between runs that differ only
/// in settings downstream of the reachability network.
#[derive(Default)]
pub struct RunCache {
    offline: Mutex<HashMap<String, Arc<OfflineRNet>>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(seed: u64, task: &TaskConfig, rnet: &RNetSettings) -> String {
        let offline = (
            rnet.k,
            rnet.gap_multiplier,
            rnet.budget,
            rnet.pairs_per_episode,
            rnet.validation_fraction,
            rnet.arch,
            rnet.train,
            rnet.embedding,
        );
        format!("{seed}|{task:?}|{offline:?}")
    }

    /// Offline network for `seed`, trained on first request.
    pub fn get_or_train(&self, seed: u64, task: &TaskConfig, rnet: &RNetSettings) -> Result<Arc<OfflineRNet>> {
        let key = Self::key(seed, task, rnet);
        if let Some(hit) = self.offline.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let trained = Arc::new(train_offline_rnet(seed, task, rnet)?);
        self.offline.lock().expect("cache lock").insert(key, trained.clone());
        Ok(trained)
    }
}

/// Whether episode `i` of a collection run is held out for validation; keeps
/// the held-out share exact for any prefix of episodes.
fn is_validation_episode(i: u64, fraction: f64) -> bool {
    ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor()
}

#[derive(Default)]
struct EpisodeStats {
    reward: f64,
    bonus_sum: f64,
    insertions: usize,
    goals: usize,
    tv_switches: usize,
    fires: usize,
    length: usize,
}

impl EpisodeStats {
    fn record(&mut self, action: Action, reward: f64, bonus: f64, goal: bool) {
        self.reward += reward;
        self.bonus_sum += bonus;
        self.goals += usize::from(goal);
        self.tv_switches += usize::from(action == Action::SwitchTv);
        self.fires += usize::from(action == Action::Fire);
        self.length += 1;
    }

    fn row(
        &self,
        phase: Phase,
        seed: u64,
        episode: u64,
        env_step: u64,
        coverage: usize,
        truncated: bool,
    ) -> MetricsRow {
        MetricsRow {
            method: String::new(),
            seed,
            phase,
            episode,
            env_step,
            episode_reward: self.reward,
            coverage,
            mean_bonus: if self.length == 0 {
                0.0
            } else {
                self.bonus_sum / self.length as f64
            },
            insertions: self.insertions,
            goals: self.goals,
            tv_switches: self.tv_switches,
            fires: self.fires,
            episode_length: self.length,
            rnet_accuracy: None,
            truncated,
        }
    }
}

/// Collects `settings.budget` random-policy steps and trains a network on
/// pairs mined from them.
pub fn train_offline_rnet(seed: u64, task: &TaskConfig, settings: &RNetSettings) -> Result<OfflineRNet> {
    offline_rnet(seed, task, settings, false)
}

/// Same data and schedule as [`train_offline_rnet`] with the training labels
/// permuted; validation labels stay true, so accuracy should sit near chance.
pub fn train_label_shuffled_rnet(seed: u64, task: &TaskConfig, settings: &RNetSettings) -> Result<OfflineRNet> {
    offline_rnet(seed, task, settings, true)
}

fn offline_rnet(seed: u64, task: &TaskConfig, settings: &RNetSettings, shuffle_labels: bool) -> Result<OfflineRNet> {
    let obs_len = task.observation_len();
    let mut train_store = TrajectoryStore::new(obs_len);
    let mut valid_store = TrajectoryStore::new(obs_len);
    let mut source = EpisodeSource {
        rng: seed_stream(seed, stream::COLLECT),
    };
    let mut act_rng = seed_stream(seed, stream::COLLECT + 100);
    let mut rows = Vec::new();
    let mut steps = 0u64;
    let mut episode = 0u64;
    while steps < settings.budget {
        let (_, mut env, obs) = source.next(task)?;
        let store = if is_validation_episode(episode, settings.validation_fraction) {
            &mut valid_store
        } else {
            &mut train_store
        };
        store.begin_episode(episode);
        store.push(&obs)?;
        let mut stats = EpisodeStats::default();
        let n_actions = env.actions().len();
        let mut done = false;
        while !done && steps < settings.budget {
            let a = act_rng.gen_range(0..n_actions);
            let action = env.actions()[a];
            let out = env.step(a)?;
            steps += 1;
            stats.record(action, out.reward, 0.0, out.goal_reached);
            store.push(&out.observation)?;
            done = out.done;
        }
        store.end_episode();
        rows.push(stats.row(Phase::Collect, seed, episode, steps, env.visited_cells(), !done));
        episode += 1;
    }
    let mut rng = seed_stream(seed, stream::RNET_TRAIN);
    let (train_store, valid_store) = (Arc::new(train_store), Arc::new(valid_store));
    let train = mine_pairs(
        train_store,
        settings.k,
        settings.gap_multiplier,
        settings.pairs_per_episode,
        Split::Train,
        &mut rng,
    )?;
    let valid = mine_pairs(
        valid_store,
        settings.k,
        settings.gap_multiplier,
        settings.pairs_per_episode,
        Split::Validation,
        &mut rng,
    )?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config(format!(
            "rnet.budget {} yields no usable training or validation trajectories",
            settings.budget
        )));
    }
    let train = if shuffle_labels {
        train.with_shuffled_labels(&mut rng)
    } else {
        train
    };
    let net = RNetwork::new(obs_len, settings.arch, &mut seed_stream(seed, stream::RNET_INIT))?;
    let mut train_cfg = settings.train;
    train_cfg.train_embedding = settings.embedding == EmbeddingMode::Trained;
    let (net, epochs) = train_rnetwork(net, &train, Some(&valid), &train_cfg, &mut rng)?;
    let accuracy = validation_accuracy(&net, &valid)?;
    info!("seed {seed}: reachability network validation accuracy {accuracy:.4}");
    Ok(OfflineRNet {
        net: Arc::new(net),
        accuracy,
        epochs,
        rows,
        steps,
    })
}

/// Online retraining state for the ECO variant.
struct OnlineRNet {
    train: TrajectoryStore,
    valid: TrajectoryStore,
    since_retrain: u64,
    rng: ChaCha8Rng,
}

impl OnlineRNet {
    fn store(&mut self, episode: u64, fraction: f64) -> &mut TrajectoryStore {
        if is_validation_episode(episode, fraction) {
            &mut self.valid
        } else {
            &mut self.train
        }
    }

    /// Retrains a copy of `net` on the replay buffer. `None` when the buffer
    /// has no complete trajectory yet.
    fn retrain(&mut self, net: &RNetwork, s: &RNetSettings) -> Result<Option<(RNetwork, f64)>> {
        self.train.retain_recent(s.replay_size);
        let valid_cap = ((s.replay_size as f64 * s.validation_fraction).ceil() as usize).max(1);
        self.valid.retain_recent(valid_cap);
        let snapshot = |st: &TrajectoryStore| {
            let mut copy = st.clone();
            copy.end_episode();
            Arc::new(copy)
        };
        let train = mine_pairs(
            snapshot(&self.train),
            s.k,
            s.gap_multiplier,
            s.pairs_per_episode,
            Split::Train,
            &mut self.rng,
        )?;
        let valid = mine_pairs(
            snapshot(&self.valid),
            s.k,
            s.gap_multiplier,
            s.pairs_per_episode,
            Split::Validation,
            &mut self.rng,
        )?;
        if train.is_empty() {
            return Ok(None);
        }
        let mut cfg = s.train;
        cfg.epochs = s.online_epochs;
        cfg.train_embedding = s.embedding == EmbeddingMode::Trained;
        let (trained, _) = train_rnetwork(net.clone(), &train, None, &cfg, &mut self.rng)?;
        let acc = if valid.is_empty() {
            f64::NAN
        } else {
            validation_accuracy(&trained, &valid)?
        };
        Ok(Some((trained, acc)))
    }
}

enum BonusSource {
    None,
    Ec(EcModule),
    Icm(Icm),
    Grid(GridOracle),
}

/// Everything one seed produced.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub bonus_log: Vec<BonusLogRow>,
    pub trajectories: Vec<TrajectoryRecord>,
    /// Error that aborted this seed, if any.
    pub failure: Option<String>,
    pub policy: Option<PolicyParams>,
    pub rnet: Option<Arc<RNetwork>>,
    pub rnet_accuracy: Option<f64>,
    pub env_steps: u64,
    pub wall_seconds: f64,
}

impl SeedOutcome {
    fn empty(seed: u64) -> Self {
        Self {
            seed,
            rows: Vec::new(),
            bonus_log: Vec::new(),
            trajectories: Vec::new(),
            failure: None,
            policy: None,
            rnet: None,
            rnet_accuracy: None,
            env_steps: 0,
            wall_seconds: 0.0,
        }
    }
}

/// Label written to the method column.
pub fn method_label(cfg: &ExperimentConfig) -> String {
    cfg.label.clone().unwrap_or_else(|| cfg.method.name().to_string())
}

/// Runs the full pipeline for one seed. Errors inside the pipeline are
/// recorded in [`SeedOutcome::failure`] together with the rows produced so far.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, cache: &RunCache) -> SeedOutcome {
    let start = Instant::now();
    let mut out = SeedOutcome::empty(seed);
    if let Err(e) = seed_pipeline(cfg, seed, cache, &mut out) {
        warn!("seed {seed} aborted: {e}");
        out.failure = Some(e.to_string());
    }
    let label = method_label(cfg);
    for r in &mut out.rows {
        r.method.clone_from(&label);
    }
    out.wall_seconds = start.elapsed().as_secs_f64();
    out
}

fn seed_pipeline(cfg: &ExperimentConfig, seed: u64, cache: &RunCache, out: &mut SeedOutcome) -> Result<()> {
    cfg.validate()?;
    let task = &cfg.task;
    let obs_len = task.observation_len();
    let n_actions = task.num_actions();
    let ppo = &cfg.ppo;

    let mut pending_accuracy = None;
    let mut bonus = match cfg.method {
        Method::Ppo => BonusSource::None,
        Method::PpoEc => {
            let offline = cache.get_or_train(seed, task, &cfg.rnet)?;
            out.rows.extend(offline.rows.iter().cloned());
            out.env_steps = offline.steps;
            out.rnet_accuracy = Some(offline.accuracy);
            pending_accuracy = Some(offline.accuracy);
            out.rnet = Some(offline.net.clone());
            BonusSource::Ec(EcModule::new(
                offline.net.clone(),
                cfg.bonus,
                seed_stream(seed, stream::MEMORY).gen(),
            )?)
        }
        Method::PpoEco => {
            let net = Arc::new(RNetwork::new(
                obs_len,
                cfg.rnet.arch,
                &mut seed_stream(seed, stream::RNET_INIT),
            )?);
            out.rnet = Some(net.clone());
            BonusSource::Ec(EcModule::new(net, cfg.bonus, seed_stream(seed, stream::MEMORY).gen())?)
        }
        Method::PpoIcm => BonusSource::Icm(Icm::new(
            obs_len,
            n_actions,
            cfg.icm,
            &mut seed_stream(seed, stream::ICM),
        )?),
        Method::PpoGridOracle => BonusSource::Grid(GridOracle::new(cfg.grid.cell_size, cfg.grid.weight)?),
    };
    let mut online = (cfg.method == Method::PpoEco).then(|| OnlineRNet {
        train: TrajectoryStore::new(obs_len),
        valid: TrajectoryStore::new(obs_len),
        since_retrain: 0,
        rng: seed_stream(seed, stream::RNET_TRAIN),
    });

    let mut policy = PolicyParams::new(
        obs_len,
        n_actions,
        ppo.hidden,
        &mut seed_stream(seed, stream::POLICY_INIT),
    )?;
    let mut adam = policy_adam(&policy);
    let mut act_rng = seed_stream(seed, stream::ACTIONS);
    let mut ppo_rng = seed_stream(seed, stream::PPO);
    let mut icm_rng = seed_stream(seed, stream::ICM + 100);
    let mut source = EpisodeSource {
        rng: seed_stream(seed, stream::ENV_SEEDS),
    };

    let total = cfg.total_steps;
    let mut steps = out.env_steps;
    let mut episode = 0u64;
    let mut buf = RolloutBuffer::new(obs_len, ppo.horizon);
    let mut next_obs: Vec<f64> = Vec::with_capacity(obs_len * ppo.horizon);

    let begin = |bonus: &mut BonusSource, env: &Env, obs: &Observation| -> Result<()> {
        match bonus {
            BonusSource::Ec(ec) => {
                ec.episode_reset();
                ec.ec_step(obs)?;
            }
            BonusSource::Grid(g) => {
                g.grid_oracle_reset();
                g.grid_oracle_bonus(env.oracle_position()?);
            }
            BonusSource::None | BonusSource::Icm(_) => {}
        }
        Ok(())
    };

    while steps < total {
        let (env_seed, mut env, mut obs) = source.next(task)?;
        if cfg.method != Method::PpoGridOracle {
            env.disable_position_access();
        }
        begin(&mut bonus, &env, &obs)?;
        if let Some(o) = online.as_mut() {
            let st = o.store(episode, cfg.rnet.validation_fraction);
            st.begin_episode(episode);
            st.push(&obs)?;
        }
        let mut stats = EpisodeStats::default();
        let mut actions = Vec::new();
        let mut done = false;
        while !done && steps < total {
            let act = policy_act(&policy, obs.data(), &mut act_rng)?;
            let action = env.actions()[act.action];
            let step = env.step(act.action)?;
            steps += 1;
            let b = match &mut bonus {
                BonusSource::None => 0.0,
                BonusSource::Ec(ec) => {
                    let s = ec.ec_step(&step.observation)?;
                    stats.insertions += usize::from(s.inserted);
                    if cfg.log_bonus {
                        out.bonus_log.push(BonusLogRow {
                            seed,
                            env_step: steps,
                            episode,
                            score: s.score,
                            bonus: s.bonus,
                            inserted: s.inserted,
                            memory_len: s.memory_len,
                        });
                    }
                    s.bonus
                }
                BonusSource::Icm(icm) => icm.icm_bonus(obs.data(), act.action, step.observation.data())?,
                BonusSource::Grid(g) => g.grid_oracle_bonus(env.oracle_position()?),
            };
            if !b.is_finite() {
                return Err(Error::Training(format!("non-finite bonus at step {steps}")));
            }
            stats.record(action, step.reward, b, step.goal_reached);
            if cfg.log_trajectories {
                actions.push(act.action);
            }
            buf.push(obs.data(), act, step.reward, b, step.done, ppo.task_reward_scale);
            next_obs.extend_from_slice(step.observation.data());
            if let Some(o) = online.as_mut() {
                o.store(episode, cfg.rnet.validation_fraction).push(&step.observation)?;
                o.since_retrain += 1;
            }
            done = step.done;
            obs = step.observation;

            if buf.len() == ppo.horizon || steps == total {
                let last_value = if done { 0.0 } else { policy.value(obs.data())? };
                let batch = buf.into_batch(last_value, ppo.discount_gamma, ppo.gae_lambda);
                ppo_update(&mut policy, &mut adam, &batch, ppo, &mut ppo_rng)?;
                if let BonusSource::Icm(icm) = &mut bonus {
                    let mut order: Vec<usize> = (0..buf.len()).collect();
                    for _ in 0..ppo.epochs {
                        order.shuffle(&mut icm_rng);
                        for idx in order.chunks(ppo.minibatch) {
                            let mut o = Vec::with_capacity(idx.len() * obs_len);
                            let mut n = Vec::with_capacity(idx.len() * obs_len);
                            let mut a = Vec::with_capacity(idx.len());
                            for &i in idx {
                                o.extend_from_slice(buf.observation(i));
                                n.extend_from_slice(&next_obs[i * obs_len..(i + 1) * obs_len]);
                                a.push(buf.actions[i]);
                            }
                            icm.icm_train_step(&Transitions {
                                obs: &o,
                                actions: &a,
                                next_obs: &n,
                            })?;
                        }
                    }
                }
                buf.clear();
                next_obs.clear();
            }

            if let (Some(o), BonusSource::Ec(ec)) = (online.as_mut(), &mut bonus) {
                if o.since_retrain >= cfg.rnet.retrain_interval {
                    o.since_retrain = 0;
                    if let Some((net, acc)) = o.retrain(ec.rnet(), &cfg.rnet)? {
                        let net = Arc::new(net);
                        ec.set_rnet(net.clone())?;
                        out.rnet = Some(net);
                        out.rnet_accuracy = Some(acc);
                        pending_accuracy = Some(acc);
                    }
                }
            }
        }
        if let Some(o) = online.as_mut() {
            o.store(episode, cfg.rnet.validation_fraction).end_episode();
        }
        let mut row = stats.row(Phase::Train, seed, episode, steps, env.visited_cells(), !done);
        row.rnet_accuracy = pending_accuracy.take();
        out.rows.push(row);
        if cfg.log_trajectories {
            out.trajectories.push(TrajectoryRecord {
                method: method_label(cfg),
                seed,
                episode,
                env_seed,
                task: task.clone(),
                actions,
                coverage: env.visited_cells(),
                reward: stats.reward,
                truncated: !done,
            });
        }
        episode += 1;
        out.env_steps = steps;
    }
    out.policy = Some(policy);
    Ok(())
}

/// Worker slots from `ECW_WORKERS`, defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var("ECW_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// All seeds of one experiment, merged in seed order.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect()
    }

    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.failure.as_deref().map(|f| (o.seed, f)))
            .collect()
    }
}

/// Runs every seed of `cfg` on up to `workers` threads.
pub fn run_seeds(cfg: &ExperimentConfig, cache: &RunCache, workers: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(cfg.seeds.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, cfg.seeds.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let o = run_seed(cfg, seed, cache);
                results.lock().expect("results lock").push(o);
            });
        }
    });
    let mut outcomes = results.into_inner().expect("results lock");
    outcomes.sort_by_key(|o| o.seed);
    Ok(ExperimentResult {
        config: cfg.clone(),
        outcomes,
    })
}

/// Runs `cfg` and writes its artifacts when an output directory is set.
pub fn run_experiment(cfg: &ExperimentConfig, cache: &RunCache) -> Result<ExperimentResult> {
    let result = run_seeds(cfg, cache, worker_count())?;
    if let Some(dir) = &cfg.output_dir {
        super::output::write_experiment(dir, &result)?;
    }
    Ok(result)
}

/// Trains only the reachability network of every seed and writes checkpoints.
pub fn train_rnets(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<(u64, OfflineRNet)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let r = train_offline_rnet(seed, &cfg.task, &cfg.rnet)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("rnet_seed{seed}.ckpt"));
            super::checkpoint::save_text(&path, &super::checkpoint::rnet_to_text(&r.net))?;
        }
        out.push((seed, r));
    }
    Ok(out)
}
