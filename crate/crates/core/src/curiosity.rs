//! Episodic curiosity: compare the current observation against an episodic
//! memory of embeddings and turn the aggregated reachability into a bonus.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::rnet::{Embedding, RNetwork};

/// How the per-entry reachability values are reduced to one score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Max,
    /// Nearest-rank percentile, `p` in `0..=100`.
    Percentile(u8),
    /// `k`-th largest value; the smallest when fewer than `k` values exist.
    KthLargest(usize),
}

impl Aggregation {
    pub fn name(self) -> String {
        match self {
            Aggregation::Max => "max".into(),
            Aggregation::Percentile(p) => format!("percentile_{p}"),
            Aggregation::KthLargest(k) => format!("kth_largest_{k}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown aggregation '{s}' (expected max, percentile_<0..100>, kth_largest_<k>)"
            ))
        };
        if s == "max" {
            return Ok(Aggregation::Max);
        }
        if let Some(p) = s.strip_prefix("percentile_") {
            let p: u8 = p.parse().map_err(|_| bad())?;
            return if p <= 100 {
                Ok(Aggregation::Percentile(p))
            } else {
                Err(bad())
            };
        }
        if let Some(k) = s.strip_prefix("kth_largest_") {
            let k: usize = k.parse().map_err(|_| bad())?;
            return if k > 0 {
                Ok(Aggregation::KthLargest(k))
            } else {
                Err(bad())
            };
        }
        Err(bad())
    }

    /// 1-based ascending rank selected out of `m` values.
    fn rank(self, m: usize) -> usize {
        match self {
            Aggregation::Max => m,
            Aggregation::Percentile(p) => (p as usize * m).div_ceil(100).clamp(1, m),
            Aggregation::KthLargest(k) => m.saturating_sub(k) + 1,
        }
    }
}

/// Reduces `values` with `f`. Reorders `values`.
pub fn aggregate_in_place(values: &mut [f64], f: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Usage("cannot aggregate an empty set of values".into()));
    }
    if let Aggregation::Max = f {
        return Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let r = f.rank(values.len());
    let (_, v, _) = values.select_nth_unstable_by(r - 1, f64::total_cmp);
    Ok(*v)
}

pub fn aggregate(values: &[f64], f: Aggregation) -> Result<f64> {
    aggregate_in_place(&mut values.to_vec(), f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BonusConfig {
    pub alpha: f64,
    pub beta: f64,
    pub novelty_threshold: f64,
    pub aggregation: Aggregation,
    pub capacity: usize,
}

impl Default for BonusConfig {
    fn default() -> Self {
        Self {
            alpha: 0.030,
            beta: 0.5,
            novelty_threshold: 0.0,
            aggregation: Aggregation::Percentile(90),
            capacity: 200,
        }
    }
}

impl BonusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "bonus scale must be positive, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || !self.novelty_threshold.is_finite() {
            return Err(Error::Config(
                "bonus offset and novelty threshold must be finite".into(),
            ));
        }
        if self.capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        if let Aggregation::Percentile(p) = self.aggregation {
            if p > 100 {
                return Err(Error::Config(format!("percentile {p} outside 0..=100")));
            }
        }
        if self.aggregation == Aggregation::KthLargest(0) {
            return Err(Error::Config("kth_largest needs k >= 1".into()));
        }
        Ok(())
    }
}

/// Bounded episodic memory with random replacement once full.
///
/// Besides the embeddings it keeps the comparator keys derived from them and,
/// optionally, the raw observations so entries can be re-embedded after the
/// network changes.
#[derive(Clone, Debug)]
pub struct EpisodicMemory {
    capacity: usize,
    dim: usize,
    key_dim: usize,
    embeddings: Vec<f64>,
    keys: Vec<f64>,
    sources: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl EpisodicMemory {
    pub fn new(capacity: usize, dim: usize, key_dim: usize, seed: u64) -> Result<Self> {
        if capacity == 0 || dim == 0 || key_dim == 0 {
            return Err(Error::Config("memory capacity and widths must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            key_dim,
            embeddings: Vec::with_capacity(capacity * dim),
            keys: Vec::with_capacity(capacity * key_dim),
            sources: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Memory sized for `rnet`.
    pub fn for_network(capacity: usize, rnet: &RNetwork, seed: u64) -> Result<Self> {
        Self::new(capacity, rnet.embedding_dim(), rnet.key_dim(), seed)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// All embeddings, row-major.
    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    /// Empties the memory. The replacement stream is not reseeded.
    pub fn clear(&mut self) {
        self.embeddings.clear();
        self.keys.clear();
        self.sources.clear();
    }

    /// Appends, or overwrites a uniformly chosen slot when full. Returns the slot.
    pub fn store(&mut self, embedding: &[f64], key: &[f64], source: Option<&[f64]>) -> Result<usize> {
        if embedding.len() != self.dim || key.len() != self.key_dim {
            return Err(Error::Config(format!(
                "memory expects embeddings of dimension {}, got {}",
                self.dim,
                embedding.len()
            )));
        }
        let source = source.map(<[f64]>::to_vec).unwrap_or_default();
        if self.len() < self.capacity {
            self.embeddings.extend_from_slice(embedding);
            self.keys.extend_from_slice(key);
            self.sources.push(source);
            Ok(self.len() - 1)
        } else {
            let i = self.rng.gen_range(0..self.capacity);
            self.embeddings[i * self.dim..(i + 1) * self.dim].copy_from_slice(embedding);
            self.keys[i * self.key_dim..(i + 1) * self.key_dim].copy_from_slice(key);
            self.sources[i] = source;
            Ok(i)
        }
    }

    /// Recomputes embeddings and keys from stored observations.
    fn reembed(&mut self, rnet: &RNetwork) -> Result<()> {
        if self.sources.iter().any(Vec::is_empty) {
            return Err(Error::Usage("memory entries were stored without observations".into()));
        }
        self.dim = rnet.embedding_dim();
        self.key_dim = rnet.key_dim();
        self.embeddings.clear();
        self.keys.clear();
        for s in &self.sources {
            let e = rnet.embed_values(s)?;
            self.keys.extend(rnet.memory_key(&e.0)?);
            self.embeddings.extend(e.0);
        }
        Ok(())
    }
}

fn check_memory(rnet: &RNetwork, memory: &EpisodicMemory) -> Result<()> {
    if memory.dim != rnet.embedding_dim() || memory.key_dim != rnet.key_dim() {
        return Err(Error::Config(
            "memory layout does not match the reachability network".into(),
        ));
    }
    Ok(())
}

/// `C(M, e)`: aggregated reachability of the query from memory; 0 when empty.
pub fn similarity_score(rnet: &RNetwork, memory: &EpisodicMemory, query: &Embedding, f: Aggregation) -> Result<f64> {
    let mut scratch = Vec::new();
    score_with(rnet, memory, &query.0, f, &mut scratch)
}

fn score_with(
    rnet: &RNetwork,
    memory: &EpisodicMemory,
    query: &[f64],
    f: Aggregation,
    scratch: &mut Vec<f64>,
) -> Result<f64> {
    check_memory(rnet, memory)?;
    if query.len() != rnet.embedding_dim() {
        return Err(Error::Config(format!(
            "query embedding of dimension {} for a network of dimension {}",
            query.len(),
            rnet.embedding_dim()
        )));
    }
    if memory.is_empty() {
        return Ok(0.0);
    }
    rnet.compare_keys(memory.keys(), query, scratch)?;
    aggregate_in_place(scratch, f)
}

/// `b = alpha * (beta - score)`.
pub fn compute_bonus(score: f64, config: &BonusConfig) -> f64 {
    config.alpha * (config.beta - score)
}

/// Stores the memory-side embedding `e` iff `b` exceeds the novelty threshold.
pub fn maybe_insert(
    memory: &mut EpisodicMemory,
    rnet: &RNetwork,
    e: &Embedding,
    b: f64,
    config: &BonusConfig,
) -> Result<bool> {
    if b > config.novelty_threshold {
        let key = rnet.memory_key(&e.0)?;
        memory.store(&e.0, &key, None)?;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// One row of the per-step bonus log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcStep {
    pub score: f64,
    pub bonus: f64,
    pub inserted: bool,
    pub memory_len: usize,
}

/// Per-environment curiosity state.
#[derive(Clone, Debug)]
pub struct EcModule {
    rnet: Arc<RNetwork>,
    config: BonusConfig,
    memory: EpisodicMemory,
    scratch: Vec<f64>,
}

impl EcModule {
    /// `seed` drives memory replacement only.
    pub fn new(rnet: Arc<RNetwork>, config: BonusConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let memory = EpisodicMemory::for_network(config.capacity, &rnet, seed)?;
        Ok(Self {
            rnet,
            config,
            memory,
            scratch: Vec::with_capacity(config.capacity),
        })
    }

    pub fn rnet(&self) -> &Arc<RNetwork> {
        &self.rnet
    }

    pub fn config(&self) -> &BonusConfig {
        &self.config
    }

    pub fn memory(&self) -> &EpisodicMemory {
        &self.memory
    }

    /// Swaps in a new network; current entries are re-embedded with it.
    pub fn set_rnet(&mut self, rnet: Arc<RNetwork>) -> Result<()> {
        if rnet.input_dim() != self.rnet.input_dim() {
            return Err(Error::Config("replacement network has a different input size".into()));
        }
        self.memory.reembed(&rnet)?;
        self.rnet = rnet;
        Ok(())
    }

    /// Embed, score, compute the bonus, and insert if novel.
    pub fn ec_step(&mut self, obs: &Observation) -> Result<EcStep> {
        let query = self.rnet.embed_query(obs)?;
        let score = score_with(
            &self.rnet,
            &self.memory,
            &query.0,
            self.config.aggregation,
            &mut self.scratch,
        )?;
        let bonus = compute_bonus(score, &self.config);
        let inserted = bonus > self.config.novelty_threshold;
        if inserted {
            let e = if self.rnet.is_shared() {
                query
            } else {
                self.rnet.embed(obs)?
            };
            let key = self.rnet.memory_key(&e.0)?;
            self.memory.store(&e.0, &key, Some(obs.data()))?;
        }
        Ok(EcStep {
            score,
            bonus,
            inserted,
            memory_len: self.memory.len(),
        })
    }

    pub fn episode_reset(&mut self) {
        self.memory.clear();
    }
}
