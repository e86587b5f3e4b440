//! Reachability network: a siamese embedding network followed by a
//! comparator that estimates whether two observations lie within `k` steps
//! of each other.

mod pairs;
mod train;

pub use pairs::{mine_pairs, pair_label, PairDataset, PairExample, PairLabel, Split, TrajectoryStore};
pub use train::{pair_gradient_error, train_rnetwork, validation_accuracy, EpochLog, RNetTrainConfig};

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Activation, Mlp, OutputTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComparatorKind {
    /// MLP over the concatenation `[e1; e2]`.
    ConcatMlp,
    /// `sigmoid(e1 . e2)`.
    DotSigmoid,
}

impl ComparatorKind {
    pub fn name(self) -> &'static str {
        match self {
            ComparatorKind::ConcatMlp => "concat_mlp",
            ComparatorKind::DotSigmoid => "dot_sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "concat_mlp" => Ok(ComparatorKind::ConcatMlp),
            "dot_sigmoid" => Ok(ComparatorKind::DotSigmoid),
            _ => Err(Error::Config(format!(
                "unknown comparator '{s}' (expected concat_mlp, dot_sigmoid)"
            ))),
        }
    }
}

/// Architecture switches of a reachability network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RNetArch {
    pub embedding_dim: usize,
    pub embed_hidden: usize,
    pub comparator_hidden: usize,
    pub comparator: ComparatorKind,
    pub shared_branches: bool,
}

impl Default for RNetArch {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            embed_hidden: 64,
            comparator_hidden: 64,
            comparator: ComparatorKind::ConcatMlp,
            shared_branches: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Comparator {
    ConcatMlp(Mlp),
    DotSigmoid,
}

/// Output of the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `R(o_i, o_j) = C(E_a(o_i), E_b(o_j))`; `E_b` is `E_a` when branches are shared.
#[derive(Clone, Debug, PartialEq)]
pub struct RNetwork {
    branch_a: Mlp,
    branch_b: Option<Mlp>,
    comparator: Comparator,
    arch: RNetArch,
    pub trained: bool,
}

impl RNetwork {
    /// Randomly initialised network. Un-shared branches draw independent
    /// weights from consecutive parts of `rng`'s stream.
    pub fn new<R: Rng + ?Sized>(obs_len: usize, arch: RNetArch, rng: &mut R) -> Result<Self> {
        if arch.embedding_dim == 0 || arch.embed_hidden == 0 || arch.comparator_hidden == 0 {
            return Err(Error::Config("reachability network widths must be positive".into()));
        }
        let branch_sizes = [obs_len, arch.embed_hidden, arch.embed_hidden, arch.embedding_dim];
        let branch_a = Mlp::new(&branch_sizes, Activation::Relu, OutputTransform::Identity, rng)?;
        let branch_b = if arch.shared_branches {
            None
        } else {
            Some(Mlp::new(
                &branch_sizes,
                Activation::Relu,
                OutputTransform::Identity,
                rng,
            )?)
        };
        let comparator = match arch.comparator {
            ComparatorKind::ConcatMlp => Comparator::ConcatMlp(Mlp::new(
                &[
                    2 * arch.embedding_dim,
                    arch.comparator_hidden,
                    arch.comparator_hidden,
                    1,
                ],
                Activation::Relu,
                OutputTransform::Identity,
                rng,
            )?),
            ComparatorKind::DotSigmoid => Comparator::DotSigmoid,
        };
        Ok(Self {
            branch_a,
            branch_b,
            comparator,
            arch,
            trained: false,
        })
    }

    pub fn from_parts(branch_a: Mlp, branch_b: Option<Mlp>, comparator: Comparator, arch: RNetArch) -> Result<Self> {
        if branch_a.output_dim() != arch.embedding_dim {
            return Err(Error::Config(
                "embedding branch width does not match architecture".into(),
            ));
        }
        if let Some(b) = &branch_b {
            if b.sizes() != branch_a.sizes() {
                return Err(Error::Config("un-shared branches must have identical shapes".into()));
            }
        }
        if branch_b.is_some() == arch.shared_branches {
            return Err(Error::Config("branch sharing does not match architecture".into()));
        }
        match (&comparator, arch.comparator) {
            (Comparator::ConcatMlp(c), ComparatorKind::ConcatMlp) => {
                if c.input_dim() != 2 * arch.embedding_dim || c.output_dim() != 1 {
                    return Err(Error::Config("comparator shape does not match embedding".into()));
                }
            }
            (Comparator::DotSigmoid, ComparatorKind::DotSigmoid) => {}
            _ => return Err(Error::Config("comparator does not match architecture".into())),
        }
        Ok(Self {
            branch_a,
            branch_b,
            comparator,
            arch,
            trained: false,
        })
    }

    pub fn arch(&self) -> &RNetArch {
        &self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    pub fn input_dim(&self) -> usize {
        self.branch_a.input_dim()
    }

    pub fn is_shared(&self) -> bool {
        self.branch_b.is_none()
    }

    pub fn branch_a(&self) -> &Mlp {
        &self.branch_a
    }

    /// The second branch; the first one when shared.
    pub fn branch_b(&self) -> &Mlp {
        self.branch_b.as_ref().unwrap_or(&self.branch_a)
    }

    pub fn comparator(&self) -> &Comparator {
        &self.comparator
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Mlp, Option<&mut Mlp>, Option<&mut Mlp>) {
        let cmp = match &mut self.comparator {
            Comparator::ConcatMlp(m) => Some(m),
            Comparator::DotSigmoid => None,
        };
        (&mut self.branch_a, self.branch_b.as_mut(), cmp)
    }

    /// Memory-side embedding (first branch).
    pub fn embed(&self, obs: &Observation) -> Result<Embedding> {
        self.embed_values(obs.data())
    }

    pub fn embed_values(&self, values: &[f64]) -> Result<Embedding> {
        Ok(Embedding(self.branch_a.predict(values, 1)?))
    }

    /// Query-side embedding (second branch). Equals [`Self::embed`] when shared.
    pub fn embed_query(&self, obs: &Observation) -> Result<Embedding> {
        match &self.branch_b {
            None => self.embed(obs),
            Some(b) => Ok(Embedding(b.predict(obs.data(), 1)?)),
        }
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.arch.embedding_dim {
            return Err(Error::Config(format!(
                "embedding of dimension {} given to a network of dimension {}",
                e.len(),
                self.arch.embedding_dim
            )));
        }
        Ok(())
    }

    /// Reachability probability of the pair (memory-side `e1`, query-side `e2`).
    pub fn compare(&self, e1: &Embedding, e2: &Embedding) -> Result<f64> {
        self.check_dim(&e1.0)?;
        self.check_dim(&e2.0)?;
        Ok(self.compare_many(&e1.0, &e2.0)?[0])
    }

    /// Compares every row of `memory` (`[m, n]`, row-major) to `query`.
    pub fn compare_many(&self, memory: &[f64], query: &[f64]) -> Result<Vec<f64>> {
        let n = self.arch.embedding_dim;
        self.check_dim(query)?;
        if !memory.len().is_multiple_of(n) {
            return Err(Error::Config(
                "memory buffer is not a whole number of embeddings".into(),
            ));
        }
        let m = memory.len() / n;
        if m == 0 {
            return Ok(Vec::new());
        }
        match &self.comparator {
            Comparator::DotSigmoid => Ok(memory.chunks(n).map(|e| sigmoid(dot(e, query))).collect()),
            Comparator::ConcatMlp(mlp) => {
                let mut input = Vec::with_capacity(m * 2 * n);
                for e in memory.chunks(n) {
                    input.extend_from_slice(e);
                    input.extend_from_slice(query);
                }
                let logits = mlp.predict(&input, m)?;
                Ok(logits.into_iter().map(sigmoid).collect())
            }
        }
    }

    /// Length of the vectors produced by [`Self::memory_key`].
    pub fn key_dim(&self) -> usize {
        match &self.comparator {
            Comparator::DotSigmoid => self.arch.embedding_dim,
            Comparator::ConcatMlp(c) => c.layers()[0].fan_out(),
        }
    }

    /// Memory-side half of the comparator's first layer (bias included), so
    /// that a stored entry is projected once rather than on every query.
    pub fn memory_key(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(e)?;
        match &self.comparator {
            Comparator::DotSigmoid => Ok(e.to_vec()),
            Comparator::ConcatMlp(c) => {
                let first = &c.layers()[0];
                let h = first.fan_out();
                let mut out = first.bias().to_vec();
                for (i, &x) in e.iter().enumerate() {
                    for (o, w) in out.iter_mut().zip(&first.weight()[i * h..(i + 1) * h]) {
                        *o += x * w;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Same values as [`Self::compare_many`], from precomputed memory keys.
    pub fn compare_keys(&self, keys: &[f64], query: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let n = self.arch.embedding_dim;
        self.check_dim(query)?;
        let kd = self.key_dim();
        if !keys.len().is_multiple_of(kd) {
            return Err(Error::Config("key buffer is not a whole number of keys".into()));
        }
        let m = keys.len() / kd;
        out.clear();
        match &self.comparator {
            Comparator::DotSigmoid => out.extend(keys.chunks(n).map(|e| sigmoid(dot(e, query)))),
            Comparator::ConcatMlp(c) => {
                let layers = c.layers();
                let mut qproj = vec![0.0; kd];
                for (i, &x) in query.iter().enumerate() {
                    let row = &layers[0].weight()[(n + i) * kd..(n + i + 1) * kd];
                    for (o, w) in qproj.iter_mut().zip(row) {
                        *o += x * w;
                    }
                }
                let mut cur = Vec::with_capacity(m * kd);
                for key in keys.chunks(kd) {
                    cur.extend(key.iter().zip(&qproj).map(|(a, b)| a + b));
                }
                Mlp::apply_activation(c.activations()[0], &mut cur);
                for (l, layer) in layers.iter().enumerate().skip(1) {
                    let mut next = vec![0.0; m * layer.fan_out()];
                    for (x, o) in cur.chunks(layer.fan_in()).zip(next.chunks_mut(layer.fan_out())) {
                        layer.apply_row(x, o);
                    }
                    if l + 1 < layers.len() {
                        Mlp::apply_activation(c.activations()[l], &mut next);
                    }
                    cur = next;
                }
                out.extend(cur.into_iter().map(sigmoid));
            }
        }
        Ok(())
    }

    /// All parameters, flattened: branch a, branch b (if un-shared), comparator.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.branch_a.flatten();
        if let Some(b) = &self.branch_b {
            out.extend(b.flatten());
        }
        if let Comparator::ConcatMlp(c) = &self.comparator {
            out.extend(c.flatten());
        }
        out
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        let mut offset = 0;
        let (a, b, c) = self.parts_mut();
        for m in [Some(a), b, c].into_iter().flatten() {
            let n = m.param_count();
            let chunk = values
                .get(offset..offset + n)
                .ok_or_else(|| Error::Config("too few parameters for reachability network".into()))?;
            m.load_flat(chunk)?;
            offset += n;
        }
        if offset != values.len() {
            return Err(Error::Config("too many parameters for reachability network".into()));
        }
        Ok(())
    }
}
