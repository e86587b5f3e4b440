//! Named sweeps over one knob with everything else at the base config.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{EmbeddingMode, ExperimentConfig, Method};
use super::metrics::per_seed_final;
use super::output::FINAL_FRACTION;
use super::run::{method_label, run_experiment, RunCache};
use crate::error::{Error, Result};
use crate::rnet::ComparatorKind;

pub const ABLATION_SCHEMA: &str = "#schema=ecw-ablation/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    ThresholdK,
    MemorySize,
    RnetBudget,
    RandomEmbedding,
    BranchSharing,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::ThresholdK,
        Suite::MemorySize,
        Suite::RnetBudget,
        Suite::RandomEmbedding,
        Suite::BranchSharing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ThresholdK => "threshold_k",
            Suite::MemorySize => "memory_size",
            Suite::RnetBudget => "rnet_budget",
            Suite::RandomEmbedding => "random_embedding",
            Suite::BranchSharing => "branch_sharing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown ablation suite '{s}' (available: {})",
                Self::ALL.map(Suite::name).join(", ")
            ))
        })
    }
}

pub const THRESHOLD_K: [usize; 6] = [2, 3, 4, 5, 7, 10];
pub const MEMORY_SIZES: [usize; 4] = [100, 200, 350, 500];
/// Collection budgets, spanning the same 1:50 range as the reference sweep.
pub const RNET_BUDGETS: [u64; 5] = [3_000, 10_000, 30_000, 100_000, 150_000];

/// One (setting, config) pair of a suite.
#[derive(Clone, Debug)]
pub struct Variant {
    pub setting: String,
    pub config: ExperimentConfig,
}

fn ec(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        method: Method::PpoEc,
        ..base.clone()
    }
}

/// The configs a suite runs. Branch-sharing variants only train networks.
pub fn suite_variants(suite: Suite, base: &ExperimentConfig) -> Vec<Variant> {
    let v = |setting: String, config: ExperimentConfig| Variant { setting, config };
    match suite {
        Suite::ThresholdK => THRESHOLD_K
            .iter()
            .map(|&k| {
                let mut c = ec(base);
                c.rnet.k = k;
                v(format!("k={k}"), c)
            })
            .collect(),
        Suite::MemorySize => MEMORY_SIZES
            .iter()
            .map(|&m| {
                let mut c = ec(base);
                c.bonus.capacity = m;
                v(format!("memory={m}"), c)
            })
            .collect(),
        Suite::RnetBudget => RNET_BUDGETS
            .iter()
            .filter(|&&b| b < base.total_steps)
            .map(|&b| {
                let mut c = ec(base);
                c.rnet.budget = b;
                v(format!("budget={b}"), c)
            })
            .collect(),
        Suite::RandomEmbedding => {
            let full = ec(base);
            let mut random = ec(base);
            random.rnet.embedding = EmbeddingMode::Random;
            random.label = Some("ppo_ec_random_embedding".into());
            let mut no_cmp = ec(base);
            no_cmp.rnet.arch.comparator = ComparatorKind::DotSigmoid;
            no_cmp.rnet.arch.shared_branches = true;
            no_cmp.label = Some("ppo_ec_no_comparator".into());
            let ppo = ExperimentConfig {
                method: Method::Ppo,
                ..base.clone()
            };
            vec![
                v("full_ec".into(), full),
                v("random_embedding".into(), random),
                v("no_comparator".into(), no_cmp),
                v("plain_ppo".into(), ppo),
            ]
        }
        Suite::BranchSharing => [
            ("concat_shared", ComparatorKind::ConcatMlp, true),
            ("concat_unshared", ComparatorKind::ConcatMlp, false),
            ("dot_shared", ComparatorKind::DotSigmoid, true),
            ("dot_unshared", ComparatorKind::DotSigmoid, false),
        ]
        .into_iter()
        .map(|(name, cmp, shared)| {
            let mut c = ec(base);
            c.rnet.arch.comparator = cmp;
            c.rnet.arch.shared_branches = shared;
            v(name.into(), c)
        })
        .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub suite: Suite,
    pub setting: String,
    pub method: String,
    pub seed: u64,
    pub coverage: Option<f64>,
    pub episode_reward: Option<f64>,
    pub goals: Option<f64>,
    pub rnet_accuracy: Option<f64>,
    pub failed: bool,
}

/// Runs every variant; one row per setting per seed.
pub fn run_ablation(suite: Suite, base: &ExperimentConfig, cache: &RunCache) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for var in suite_variants(suite, base) {
        let cfg = &var.config;
        if suite == Suite::BranchSharing {
            for &seed in &cfg.seeds {
                let r = cache.get_or_train(seed, &cfg.task, &cfg.rnet);
                rows.push(AblationRow {
                    suite,
                    setting: var.setting.clone(),
                    method: method_label(cfg),
                    seed,
                    coverage: None,
                    episode_reward: None,
                    goals: None,
                    rnet_accuracy: r.as_ref().ok().map(|r| r.accuracy),
                    failed: r.is_err(),
                });
            }
            continue;
        }
        let mut cfg = cfg.clone();
        cfg.output_dir = base
            .output_dir
            .as_ref()
            .map(|d| d.join(suite.name()).join(&var.setting));
        let result = run_experiment(&cfg, cache)?;
        let all = result.rows();
        let label = method_label(&cfg);
        let fin = |col: &str| per_seed_final(&all, &label, col, cfg.total_steps, FINAL_FRACTION);
        let (cov, rew, goals) = (fin("coverage"), fin("episode_reward"), fin("goals"));
        for o in &result.outcomes {
            rows.push(AblationRow {
                suite,
                setting: var.setting.clone(),
                method: label.clone(),
                seed: o.seed,
                coverage: cov.get(&o.seed).copied(),
                episode_reward: rew.get(&o.seed).copied(),
                goals: goals.get(&o.seed).copied(),
                rnet_accuracy: o.rnet_accuracy,
                failed: o.failure.is_some(),
            });
        }
    }
    Ok(rows)
}

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s =
        format!("{ABLATION_SCHEMA}\nsuite,setting,method,seed,coverage,episode_reward,goals,rnet_accuracy,failed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.suite.name(),
            r.setting,
            r.method,
            r.seed,
            opt(r.coverage),
            opt(r.episode_reward),
            opt(r.goals),
            opt(r.rnet_accuracy),
            u8::from(r.failed)
        );
    }
    s
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ablation_to_csv(rows)).map_err(|e| Error::io(path, e))
}
