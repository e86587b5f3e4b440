use std::sync::Arc;

use log::warn;
use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};

/// Within-episode observation sequences stored compactly as `f32`.
///
/// Observation entries are either exact 0/1 values or draws that are
/// representable in `f32`, so the narrowing is lossless.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryStore {
    obs_len: usize,
    data: Vec<f32>,
    /// `(trajectory id, first observation index, length)`
    episodes: Vec<(u64, usize, usize)>,
    open: Option<(u64, usize)>,
}

impl TrajectoryStore {
    pub fn new(obs_len: usize) -> Self {
        Self {
            obs_len,
            ..Self::default()
        }
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    /// Starts a new trajectory; any open one is closed first.
    pub fn begin_episode(&mut self, id: u64) {
        self.end_episode();
        self.open = Some((id, self.len()));
    }

    pub fn push(&mut self, obs: &Observation) -> Result<()> {
        self.push_values(obs.data())
    }

    pub fn push_values(&mut self, values: &[f64]) -> Result<()> {
        if self.open.is_none() {
            return Err(Error::Usage("push before begin_episode".into()));
        }
        if values.len() != self.obs_len {
            return Err(Error::Config(format!(
                "observation of {} values, store expects {}",
                values.len(),
                self.obs_len
            )));
        }
        self.data.extend(values.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn end_episode(&mut self) {
        if let Some((id, start)) = self.open.take() {
            let len = self.len() - start;
            if len > 0 {
                self.episodes.push((id, start, len));
            }
        }
    }

    /// Total stored observations.
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.obs_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Closed trajectories as `(id, first index, length)`.
    pub fn episodes(&self) -> &[(u64, usize, usize)] {
        &self.episodes
    }

    pub fn observation(&self, index: usize) -> &[f32] {
        &self.data[index * self.obs_len..(index + 1) * self.obs_len]
    }

    /// Writes observation `index` as `f64` into `out`.
    pub fn copy_into(&self, index: usize, out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(self.observation(index)) {
            *o = f64::from(v);
        }
    }

    /// Drops whole trajectories from the front until at most
    /// `max_observations` remain.
    pub fn retain_recent(&mut self, max_observations: usize) {
        self.end_episode();
        let total = self.len();
        if total <= max_observations {
            return;
        }
        let mut cut = 0;
        let mut drop = 0;
        for &(_, start, len) in &self.episodes {
            if total - start <= max_observations {
                break;
            }
            cut = start + len;
            drop += 1;
        }
        if drop == 0 {
            return;
        }
        self.data.drain(..cut * self.obs_len);
        self.episodes.drain(..drop);
        for e in &mut self.episodes {
            e.1 -= cut;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
    Excluded,
}

/// Reachable within `k` steps, clearly unreachable beyond `gap_multiplier * k`,
/// and no label inside the gap.
pub fn pair_label(delta: usize, k: usize, gap_multiplier: f64) -> PairLabel {
    if delta <= k {
        PairLabel::Positive
    } else if delta as f64 > gap_multiplier * k as f64 {
        PairLabel::Negative
    } else {
        PairLabel::Excluded
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairExample {
    pub first: u32,
    pub second: u32,
    pub label: u8,
    /// Step distance inside the source trajectory.
    pub delta: u32,
}

/// Labelled observation pairs mined from one trajectory store.
#[derive(Clone, Debug)]
pub struct PairDataset {
    pub store: Arc<TrajectoryStore>,
    pub examples: Vec<PairExample>,
    pub k: usize,
    pub gap_multiplier: f64,
    pub source_ids: Vec<u64>,
    pub split: Split,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().filter(|e| e.label == 1).count() as f64 / self.examples.len() as f64
    }

    /// Copy with labels permuted at random (a no-signal control).
    pub fn with_shuffled_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut labels: Vec<u8> = self.examples.iter().map(|e| e.label).collect();
        labels.shuffle(rng);
        let mut out = self.clone();
        for (e, l) in out.examples.iter_mut().zip(labels) {
            e.label = l;
        }
        out
    }
}

/// Samples `pairs_per_episode` labelled pairs per trajectory, randomises pair
/// order and subsamples the majority class to an exact balance.
pub fn mine_pairs<R: Rng + ?Sized>(
    store: Arc<TrajectoryStore>,
    k: usize,
    gap_multiplier: f64,
    pairs_per_episode: usize,
    split: Split,
    rng: &mut R,
) -> Result<PairDataset> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if !(gap_multiplier > 1.0) {
        return Err(Error::Config(format!(
            "gap multiplier must exceed 1, got {gap_multiplier}"
        )));
    }
    // smallest distance labelled negative
    let min_negative = (gap_multiplier * k as f64).floor() as usize + 1;
    let min_len = min_negative + 1;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut source_ids = Vec::new();
    for &(id, start, len) in store.episodes() {
        if len < min_len {
            warn!("skipping trajectory {id}: {len} steps, pair mining needs at least {min_len}");
            continue;
        }
        source_ids.push(id);
        for _ in 0..pairs_per_episode {
            let (i, j) = if rng.gen_bool(0.5) {
                let i = rng.gen_range(0..len);
                let delta = rng.gen_range(1..=k.min(len - 1));
                let j = if (rng.gen_bool(0.5) && i + delta < len) || i < delta {
                    i + delta
                } else {
                    i - delta
                };
                (i, j)
            } else {
                // i must leave room for a partner at distance >= min_negative
                let i = loop {
                    let i = rng.gen_range(0..len);
                    if i >= min_negative || i + min_negative < len {
                        break i;
                    }
                };
                let below = (i + 1).saturating_sub(min_negative); // j in 0..below
                let above = len.saturating_sub(i + min_negative); // j in i+min_negative..len
                let pick = rng.gen_range(0..below + above);
                let j = if pick < below {
                    pick
                } else {
                    i + min_negative + (pick - below)
                };
                (i, j)
            };
            let delta = i.abs_diff(j);
            let label = match pair_label(delta, k, gap_multiplier) {
                PairLabel::Positive => 1,
                PairLabel::Negative => 0,
                PairLabel::Excluded => unreachable!("sampler never draws gap-zone pairs"),
            };
            let (a, b) = if rng.gen_bool(0.5) { (i, j) } else { (j, i) };
            let ex = PairExample {
                first: (start + a) as u32,
                second: (start + b) as u32,
                label,
                delta: delta as u32,
            };
            if label == 1 {
                positives.push(ex);
            } else {
                negatives.push(ex);
            }
        }
    }
    let n = positives.len().min(negatives.len());
    subsample(&mut positives, n, rng);
    subsample(&mut negatives, n, rng);
    let mut examples = Vec::with_capacity(2 * n);
    examples.extend(positives);
    examples.extend(negatives);
    use rand::seq::SliceRandom;
    examples.shuffle(rng);
    Ok(PairDataset {
        store,
        examples,
        k,
        gap_multiplier,
        source_ids,
        split,
    })
}

fn subsample<T, R: Rng + ?Sized>(items: &mut Vec<T>, n: usize, rng: &mut R) {
    use rand::seq::SliceRandom;
    if items.len() > n {
        items.partial_shuffle(rng, n);
        items.truncate(n);
    }
}
