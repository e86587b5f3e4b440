use rand::seq::SliceRandom;
use rand::Rng;

use super::{Comparator, PairDataset, PairExample, RNetwork};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, dot, logistic_loss, max_relative_gradient_error, AdamConfig, AdamState, MlpGrads};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RNetTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `false` freezes both embedding branches at their current weights.
    pub train_embedding: bool,
    pub adam: AdamConfig,
}

impl Default for RNetTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 10,
            train_embedding: true,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
}

/// Gradients for one minibatch, laid out per parameter set.
pub(crate) struct PairGrads {
    pub loss: f64,
    pub branch_a: MlpGrads,
    pub branch_b: Option<MlpGrads>,
    pub comparator: Option<MlpGrads>,
}

fn gather(ds: &PairDataset, batch: &[PairExample]) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let n = ds.store.obs_len();
    let mut x1 = vec![0.0; batch.len() * n];
    let mut x2 = vec![0.0; batch.len() * n];
    for (r, ex) in batch.iter().enumerate() {
        ds.store.copy_into(ex.first as usize, &mut x1[r * n..(r + 1) * n]);
        ds.store.copy_into(ex.second as usize, &mut x2[r * n..(r + 1) * n]);
    }
    (x1, x2, batch.iter().map(|e| e.label).collect())
}

/// Logits for `rows` pairs given flattened observations.
pub(crate) fn pair_logits(net: &RNetwork, x1: &[f64], x2: &[f64], rows: usize) -> Result<Vec<f64>> {
    let e1 = net.branch_a().predict(x1, rows)?;
    let e2 = net.branch_b().predict(x2, rows)?;
    let n = net.embedding_dim();
    match net.comparator() {
        Comparator::DotSigmoid => Ok(e1.chunks(n).zip(e2.chunks(n)).map(|(a, b)| dot(a, b)).collect()),
        Comparator::ConcatMlp(c) => {
            let mut input = Vec::with_capacity(rows * 2 * n);
            for (a, b) in e1.chunks(n).zip(e2.chunks(n)) {
                input.extend_from_slice(a);
                input.extend_from_slice(b);
            }
            c.predict(&input, rows)
        }
    }
}

/// Worst relative error between the analytic pair-loss gradient (all
/// parameters, embedding included) and central differences with step `eps`.
pub fn pair_gradient_error(net: &RNetwork, x1: &[f64], x2: &[f64], labels: &[u8], eps: f64) -> Result<f64> {
    let rows = labels.len();
    let g = pair_loss_and_grads(net, x1, x2, labels, true)?;
    let mut analytic = g.branch_a.flatten();
    if let Some(b) = &g.branch_b {
        analytic.extend(b.flatten());
    }
    if let Some(c) = &g.comparator {
        analytic.extend(c.flatten());
    }
    let mut params = net.flatten();
    let mut probe = net.clone();
    let mut failure = None;
    let err = max_relative_gradient_error(&mut params, &analytic, eps, |p| {
        let logits = probe.load_flat(p).and_then(|()| pair_logits(&probe, x1, x2, rows));
        match logits {
            Ok(z) => z.iter().zip(labels).map(|(&z, &y)| logistic_loss(z, y).0).sum::<f64>() / rows as f64,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        }
    });
    failure.map_or(Ok(err), Err)
}

/// Mean logistic loss of a minibatch and its gradients.
pub(crate) fn pair_loss_and_grads(
    net: &RNetwork,
    x1: &[f64],
    x2: &[f64],
    labels: &[u8],
    train_embedding: bool,
) -> Result<PairGrads> {
    let rows = labels.len();
    let n = net.embedding_dim();
    let (e1, cache1) = net.branch_a().forward_batch(x1, rows)?;
    let (e2, cache2) = net.branch_b().forward_batch(x2, rows)?;

    let mut comparator_grads = None;
    let (logits, cmp_cache) = match net.comparator() {
        Comparator::DotSigmoid => (
            e1.chunks(n)
                .zip(e2.chunks(n))
                .map(|(a, b)| dot(a, b))
                .collect::<Vec<_>>(),
            None,
        ),
        Comparator::ConcatMlp(c) => {
            let mut input = Vec::with_capacity(rows * 2 * n);
            for (a, b) in e1.chunks(n).zip(e2.chunks(n)) {
                input.extend_from_slice(a);
                input.extend_from_slice(b);
            }
            let (out, cache) = c.forward_batch(&input, rows)?;
            (out, Some(cache))
        }
    };

    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut dlogit = Vec::with_capacity(rows);
    for (&z, &y) in logits.iter().zip(labels) {
        let (l, g) = logistic_loss(z, y);
        loss += l * scale;
        dlogit.push(g * scale);
    }

    let (de1, de2) = match (net.comparator(), cmp_cache) {
        (Comparator::ConcatMlp(c), Some(cache)) => {
            let mut g = MlpGrads::zeros_like(c);
            let dinput = c.backward_logits(&cache, &dlogit, &mut g, train_embedding)?;
            comparator_grads = Some(g);
            match dinput {
                Some(d) => {
                    let mut de1 = Vec::with_capacity(rows * n);
                    let mut de2 = Vec::with_capacity(rows * n);
                    for row in d.chunks(2 * n) {
                        de1.extend_from_slice(&row[..n]);
                        de2.extend_from_slice(&row[n..]);
                    }
                    (de1, de2)
                }
                None => (Vec::new(), Vec::new()),
            }
        }
        _ => {
            let mut de1 = vec![0.0; rows * n];
            let mut de2 = vec![0.0; rows * n];
            for r in 0..rows {
                for d in 0..n {
                    de1[r * n + d] = dlogit[r] * e2[r * n + d];
                    de2[r * n + d] = dlogit[r] * e1[r * n + d];
                }
            }
            (de1, de2)
        }
    };

    let mut branch_a = MlpGrads::zeros_like(net.branch_a());
    let mut branch_b = (!net.is_shared()).then(|| MlpGrads::zeros_like(net.branch_b()));
    if train_embedding {
        net.branch_a().backward_batch(&cache1, &de1, &mut branch_a, false)?;
        let target = branch_b.as_mut().unwrap_or(&mut branch_a);
        net.branch_b().backward_batch(&cache2, &de2, target, false)?;
    }
    Ok(PairGrads {
        loss,
        branch_a,
        branch_b,
        comparator: comparator_grads,
    })
}

/// Fraction of pairs whose thresholded prediction matches the label.
/// Probability exactly 0.5 counts as "reachable".
pub fn validation_accuracy(net: &RNetwork, dataset: &PairDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("validation accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for chunk in dataset.examples.chunks(256) {
        let (x1, x2, labels) = gather(dataset, chunk);
        let logits = pair_logits(net, &x1, &x2, chunk.len())?;
        correct += logits
            .iter()
            .zip(&labels)
            .filter(|(&z, &y)| u8::from(z >= 0.0) == y)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Minibatch Adam on the logistic loss, reshuffling before every epoch.
pub fn train_rnetwork<R: Rng + ?Sized>(
    mut net: RNetwork,
    train: &PairDataset,
    validation: Option<&PairDataset>,
    config: &RNetTrainConfig,
    rng: &mut R,
) -> Result<(RNetwork, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::Usage("cannot train on an empty pair dataset".into()));
    }
    if (train.positive_fraction() - 0.5).abs() > 0.05 {
        return Err(Error::Usage(format!(
            "training pairs are unbalanced ({:.3} positive)",
            train.positive_fraction()
        )));
    }
    if train.store.obs_len() != net.input_dim() {
        return Err(Error::Config("pair observations do not match network input".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam_a = AdamState::new(net.branch_a(), config.adam);
    let mut adam_b = (!net.is_shared()).then(|| AdamState::new(net.branch_b(), config.adam));
    let mut adam_c = match net.comparator() {
        Comparator::ConcatMlp(c) => Some(AdamState::new(c, config.adam)),
        Comparator::DotSigmoid => None,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut initial_loss = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<PairExample> = idx.iter().map(|&i| train.examples[i]).collect();
            let (x1, x2, labels) = gather(train, &batch);
            let g = pair_loss_and_grads(&net, &x1, &x2, &labels, config.train_embedding)?;
            if !g.loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            let initial = *initial_loss.get_or_insert(g.loss);
            total += g.loss;
            batches += 1;
            let (a, b, c) = net.parts_mut();
            if config.train_embedding {
                adam_step(a, &g.branch_a, &mut adam_a, config.learning_rate)?;
                if let (Some(b), Some(gb), Some(st)) = (b, g.branch_b.as_ref(), adam_b.as_mut()) {
                    adam_step(b, gb, st, config.learning_rate)?;
                }
            }
            if let (Some(c), Some(gc), Some(st)) = (c, g.comparator.as_ref(), adam_c.as_mut()) {
                adam_step(c, gc, st, config.learning_rate)?;
            }
            if g.loss > 10.0 * initial.max(1e-3) {
                return Err(Error::Training(format!(
                    "reachability training diverged in epoch {epoch}: batch loss {:.4} vs initial {:.4}",
                    g.loss, initial
                )));
            }
        }
        let validation_accuracy = validation.map(|v| validation_accuracy(&net, v)).transpose()?;
        log.push(EpochLog {
            epoch,
            train_loss: total / batches as f64,
            validation_accuracy,
        });
    }
    net.trained = true;
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::rnet::{ComparatorKind, RNetArch, Split, TrajectoryStore};

    fn small_arch(comparator: ComparatorKind, shared: bool) -> RNetArch {
        RNetArch {
            embedding_dim: 4,
            embed_hidden: 6,
            comparator_hidden: 5,
            comparator,
            shared_branches: shared,
        }
    }

    #[test]
    fn pair_gradients_match_finite_differences() {
        for (comparator, shared) in [
            (ComparatorKind::ConcatMlp, true),
            (ComparatorKind::ConcatMlp, false),
            (ComparatorKind::DotSigmoid, true),
            (ComparatorKind::DotSigmoid, false),
        ] {
            for seed in 0..10 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut net = RNetwork::new(7, small_arch(comparator, shared), &mut rng).unwrap();
                // zero biases put a row with all-dead hidden units exactly on a kink
                let jittered: Vec<f64> = net.flatten().iter().map(|w| w + rng.gen_range(-0.1..0.1)).collect();
                net.load_flat(&jittered).unwrap();
                let x1: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x2: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let labels = [1u8, 0, 1];
                let err = pair_gradient_error(&net, &x1, &x2, &labels, 1e-6).unwrap();
                assert!(err <= 1e-4, "{comparator:?} shared={shared} seed {seed}: {err}");
            }
        }
    }

    /// Observations are thermometer codes of a position that advances one
    /// step per frame, so temporal and spatial distance coincide.
    fn toy_dataset(rng: &mut ChaCha8Rng, episodes: usize, split: Split) -> PairDataset {
        let width = 80;
        let mut store = TrajectoryStore::new(width);
        for ep in 0..episodes {
            store.begin_episode(ep as u64);
            let start: usize = rng.gen_range(0..20);
            for t in 0..60 {
                let level = (start + t) as f64;
                let v: Vec<f64> = (0..width).map(|i| (level - i as f64).clamp(0.0, 1.0)).collect();
                store.push_values(&v).unwrap();
            }
        }
        store.end_episode();
        crate::rnet::mine_pairs(Arc::new(store), 2, 2.0, 50, split, rng).unwrap()
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = toy_dataset(&mut rng, 200, Split::Train);
        let valid = toy_dataset(&mut rng, 10, Split::Validation);
        let net = RNetwork::new(80, RNetArch::default(), &mut rng).unwrap();
        let cfg = RNetTrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            ..RNetTrainConfig::default()
        };
        let (net, log) = train_rnetwork(net, &train, Some(&valid), &cfg, &mut rng).unwrap();
        assert!(net.trained);
        assert!(log.last().unwrap().validation_accuracy.unwrap() >= 0.99, "{log:?}");
        // 5-epoch moving average of the loss never increases
        let ma: Vec<f64> = log
            .windows(5)
            .map(|w| w.iter().map(|e| e.train_loss).sum::<f64>() / 5.0)
            .collect();
        assert!(ma.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{ma:?}");
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let train = toy_dataset(&mut rng, 40, Split::Train).with_shuffled_labels(&mut rng);
        let valid = toy_dataset(&mut rng, 40, Split::Validation).with_shuffled_labels(&mut rng);
        let net = RNetwork::new(80, small_arch(ComparatorKind::ConcatMlp, true), &mut rng).unwrap();
        let cfg = RNetTrainConfig {
            epochs: 5,
            ..RNetTrainConfig::default()
        };
        let (net, _) = train_rnetwork(net, &train, None, &cfg, &mut rng).unwrap();
        let acc = validation_accuracy(&net, &valid).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn frozen_embedding_keeps_branch_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = toy_dataset(&mut rng, 10, Split::Train);
        let net = RNetwork::new(80, small_arch(ComparatorKind::ConcatMlp, true), &mut rng).unwrap();
        let before = net.branch_a().clone();
        let cfg = RNetTrainConfig {
            epochs: 2,
            train_embedding: false,
            ..RNetTrainConfig::default()
        };
        let (trained, _) = train_rnetwork(net.clone(), &train, None, &cfg, &mut rng).unwrap();
        assert_eq!(trained.branch_a(), &before);
        assert_ne!(trained.flatten(), net.flatten());
    }

    #[test]
    fn accuracy_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = toy_dataset(&mut rng, 5, Split::Validation);
        // DotSigmoid on all-zero embeddings returns exactly 0.5 => always "reachable"
        let mut net = RNetwork::new(80, small_arch(ComparatorKind::DotSigmoid, true), &mut rng).unwrap();
        let zeros = vec![0.0; net.flatten().len()];
        net.load_flat(&zeros).unwrap();
        let acc = validation_accuracy(&net, &ds).unwrap();
        assert!((acc - ds.positive_fraction()).abs() < 1e-12);
        let empty = PairDataset {
            examples: Vec::new(),
            ..ds
        };
        assert!(matches!(validation_accuracy(&net, &empty), Err(Error::Usage(_))));
    }
}
