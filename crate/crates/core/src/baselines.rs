//! Comparison bonuses: a forward/inverse-dynamics surprise model and a
//! privileged cell-visit oracle.

use std::collections::HashSet;

use rand::Rng;

use crate::env::Cell;
use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, max_relative_gradient_error, softmax_in_place, Activation, AdamConfig, AdamState, Mlp, MlpGrads,
    OutputTransform,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcmConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    /// Weight of the forward loss; the inverse loss gets `1 - forward_ratio`.
    pub forward_ratio: f64,
    /// Bonus scale `eta`.
    pub eta: f64,
    pub learning_rate: f64,
    pub adam: AdamConfig,
}

impl Default for IcmConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            hidden: 64,
            forward_ratio: 0.96,
            eta: 0.55,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

impl IcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.forward_ratio > 0.0 && self.forward_ratio < 1.0) {
            return Err(Error::Config(format!(
                "forward/inverse ratio must lie in (0, 1), got {}",
                self.forward_ratio
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "bonus scale and learning rate must be non-negative and finite".into(),
            ));
        }
        if self.embedding_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// A minibatch of transitions `(o, a, o')`, observations row-major.
#[derive(Clone, Copy, Debug)]
pub struct Transitions<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [usize],
    pub next_obs: &'a [f64],
}

impl Transitions<'_> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcmLosses {
    pub inverse: f64,
    pub forward: f64,
}

struct IcmGrads {
    losses: IcmLosses,
    embed: MlpGrads,
    inverse: MlpGrads,
    forward: MlpGrads,
}

/// Embedding `phi`, inverse head `[phi(o), phi(o')] -> a` and forward head
/// `[phi(o), onehot(a)] -> phi(o')`. The forward loss does not train `phi`.
#[derive(Clone, Debug)]
pub struct Icm {
    embed: Mlp,
    inverse: Mlp,
    forward: Mlp,
    num_actions: usize,
    config: IcmConfig,
    adam: [AdamState; 3],
}

impl Icm {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, num_actions: usize, config: IcmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if num_actions == 0 {
            return Err(Error::Config("at least one action is required".into()));
        }
        let (d, h) = (config.embedding_dim, config.hidden);
        let embed = Mlp::new(&[obs_len, h, d], Activation::Relu, OutputTransform::Identity, rng)?;
        let inverse = Mlp::new(
            &[2 * d, h, num_actions],
            Activation::Relu,
            OutputTransform::Identity,
            rng,
        )?;
        let forward = Mlp::new(
            &[d + num_actions, h, d],
            Activation::Relu,
            OutputTransform::Identity,
            rng,
        )?;
        let adam = [
            AdamState::new(&embed, config.adam),
            AdamState::new(&inverse, config.adam),
            AdamState::new(&forward, config.adam),
        ];
        Ok(Self {
            embed,
            inverse,
            forward,
            num_actions,
            config,
            adam,
        })
    }

    pub fn config(&self) -> &IcmConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Mlp {
        &self.embed
    }

    fn check(&self, batch: &Transitions) -> Result<usize> {
        let rows = batch.len();
        let n = self.embed.input_dim();
        if rows == 0 || batch.obs.len() != rows * n || batch.next_obs.len() != rows * n {
            return Err(Error::Usage(format!(
                "transition batch of {rows} rows does not match observation size {n}"
            )));
        }
        if let Some(&a) = batch.actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::Usage(format!("action {a} outside 0..{}", self.num_actions)));
        }
        Ok(rows)
    }

    fn forward_input(&self, phi: &[f64], actions: &[usize]) -> Vec<f64> {
        let d = self.config.embedding_dim;
        let a_n = self.num_actions;
        let mut input = vec![0.0; actions.len() * (d + a_n)];
        for (r, (row, &a)) in input.chunks_mut(d + a_n).zip(actions).enumerate() {
            row[..d].copy_from_slice(&phi[r * d..(r + 1) * d]);
            row[d + a] = 1.0;
        }
        input
    }

    /// Intrinsic bonus `eta * |f(phi(o), a) - phi(o')|^2 / 2` per transition.
    pub fn bonus_batch(&self, batch: &Transitions) -> Result<Vec<f64>> {
        let rows = self.check(batch)?;
        let d = self.config.embedding_dim;
        let phi = self.embed.predict(batch.obs, rows)?;
        let phi_next = self.embed.predict(batch.next_obs, rows)?;
        let pred = self.forward.predict(&self.forward_input(&phi, batch.actions), rows)?;
        Ok(pred
            .chunks(d)
            .zip(phi_next.chunks(d))
            .map(|(f, t)| self.config.eta * 0.5 * f.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect())
    }

    pub fn icm_bonus(&self, obs: &[f64], action: usize, next_obs: &[f64]) -> Result<f64> {
        let b = self.bonus_batch(&Transitions {
            obs,
            actions: &[action],
            next_obs,
        })?;
        Ok(b[0])
    }

    fn loss_and_grads(&self, batch: &Transitions) -> Result<IcmGrads> {
        let rows = self.check(batch)?;
        let d = self.config.embedding_dim;
        let a_n = self.num_actions;
        let ratio = self.config.forward_ratio;
        let scale = 1.0 / rows as f64;

        let (phi, cache) = self.embed.forward_batch(batch.obs, rows)?;
        let (phi_next, cache_next) = self.embed.forward_batch(batch.next_obs, rows)?;

        let mut inv_input = Vec::with_capacity(rows * 2 * d);
        for (p, q) in phi.chunks(d).zip(phi_next.chunks(d)) {
            inv_input.extend_from_slice(p);
            inv_input.extend_from_slice(q);
        }
        let (mut probs, inv_cache) = self.inverse.forward_batch(&inv_input, rows)?;
        let mut inverse_loss = 0.0;
        for (row, &a) in probs.chunks_mut(a_n).zip(batch.actions) {
            let z = row[a];
            let lse = softmax_in_place(row);
            inverse_loss += (lse - z) * scale;
            row[a] -= 1.0;
            for v in row.iter_mut() {
                *v *= (1.0 - ratio) * scale;
            }
        }
        let mut inverse = MlpGrads::zeros_like(&self.inverse);
        let dinv = self
            .inverse
            .backward_logits(&inv_cache, &probs, &mut inverse, true)?
            .expect("input gradient requested");

        let (pred, fwd_cache) = self
            .forward
            .forward_batch(&self.forward_input(&phi, batch.actions), rows)?;
        let mut forward_loss = 0.0;
        let mut dpred = Vec::with_capacity(rows * d);
        for (f, t) in pred.chunks(d).zip(phi_next.chunks(d)) {
            for (a, b) in f.iter().zip(t) {
                forward_loss += 0.5 * (a - b).powi(2) * scale;
                dpred.push(ratio * (a - b) * scale);
            }
        }
        let mut forward = MlpGrads::zeros_like(&self.forward);
        self.forward.backward_logits(&fwd_cache, &dpred, &mut forward, false)?;

        let mut dphi = Vec::with_capacity(rows * d);
        let mut dphi_next = Vec::with_capacity(rows * d);
        for row in dinv.chunks(2 * d) {
            dphi.extend_from_slice(&row[..d]);
            dphi_next.extend_from_slice(&row[d..]);
        }
        let mut embed = MlpGrads::zeros_like(&self.embed);
        self.embed.backward_batch(&cache, &dphi, &mut embed, false)?;
        self.embed.backward_batch(&cache_next, &dphi_next, &mut embed, false)?;
        Ok(IcmGrads {
            losses: IcmLosses {
                inverse: inverse_loss,
                forward: forward_loss,
            },
            embed,
            inverse,
            forward,
        })
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.embed.flatten();
        p.extend(self.inverse.flatten());
        p.extend(self.forward.flatten());
        p
    }

    fn load_params(&mut self, p: &[f64]) -> Result<()> {
        let (a, b) = (self.embed.param_count(), self.inverse.param_count());
        self.embed.load_flat(&p[..a])?;
        self.inverse.load_flat(&p[a..a + b])?;
        self.forward.load_flat(&p[a + b..])
    }

    /// Mixed loss with the forward term evaluated on `phi` from `frozen`, so
    /// that only the inverse term depends on this model's embedding.
    fn loss_with_frozen_phi(&self, frozen: &Mlp, batch: &Transitions) -> Result<f64> {
        let rows = self.check(batch)?;
        let d = self.config.embedding_dim;
        let a_n = self.num_actions;
        let phi = self.embed.predict(batch.obs, rows)?;
        let phi_next = self.embed.predict(batch.next_obs, rows)?;
        let mut inv_in = Vec::with_capacity(rows * 2 * d);
        for (p, q) in phi.chunks(d).zip(phi_next.chunks(d)) {
            inv_in.extend_from_slice(p);
            inv_in.extend_from_slice(q);
        }
        let logits = self.inverse.predict(&inv_in, rows)?;
        let mut inverse = 0.0;
        for (row, &a) in logits.chunks(a_n).zip(batch.actions) {
            let mut row = row.to_vec();
            let z = row[a];
            inverse += (softmax_in_place(&mut row) - z) / rows as f64;
        }
        let phi_f = frozen.predict(batch.obs, rows)?;
        let phi_nf = frozen.predict(batch.next_obs, rows)?;
        let pred = self.forward.predict(&self.forward_input(&phi_f, batch.actions), rows)?;
        let forward = pred
            .iter()
            .zip(&phi_nf)
            .map(|(a, b)| 0.5 * (a - b).powi(2))
            .sum::<f64>()
            / rows as f64;
        Ok(self.total_loss(IcmLosses { inverse, forward }))
    }

    /// Worst relative error between the analytic gradients and central
    /// differences of the mixed loss, with the embedding held fixed inside
    /// the forward term.
    pub fn gradient_error(&self, batch: &Transitions, eps: f64) -> Result<f64> {
        let g = self.loss_and_grads(batch)?;
        let mut analytic = g.embed.flatten();
        analytic.extend(g.inverse.flatten());
        analytic.extend(g.forward.flatten());
        let mut probe = self.clone();
        let mut params = self.flat_params();
        let mut failure = None;
        let err = max_relative_gradient_error(&mut params, &analytic, eps, |p| {
            let r = probe
                .load_params(p)
                .and_then(|()| probe.loss_with_frozen_phi(&self.embed, batch));
            r.unwrap_or_else(|e| {
                failure = Some(e);
                f64::NAN
            })
        });
        failure.map_or(Ok(err), Err)
    }

    /// Mixed loss `ratio * forward + (1 - ratio) * inverse`, as optimised.
    pub fn total_loss(&self, losses: IcmLosses) -> f64 {
        self.config.forward_ratio * losses.forward + (1.0 - self.config.forward_ratio) * losses.inverse
    }

    /// One Adam step on a minibatch. Returns the losses before the step.
    pub fn icm_train_step(&mut self, batch: &Transitions) -> Result<IcmLosses> {
        let g = self.loss_and_grads(batch)?;
        if !g.losses.inverse.is_finite() || !g.losses.forward.is_finite() {
            return Err(Error::Training(format!(
                "surprise model diverged: inverse loss {}, forward loss {}",
                g.losses.inverse, g.losses.forward
            )));
        }
        let lr = self.config.learning_rate;
        let [a_e, a_i, a_f] = &mut self.adam;
        adam_step(&mut self.embed, &g.embed, a_e, lr)?;
        adam_step(&mut self.inverse, &g.inverse, a_i, lr)?;
        adam_step(&mut self.forward, &g.forward, a_f, lr)?;
        Ok(g.losses)
    }
}

/// Per-episode bonus for entering a cell not visited yet in this episode.
#[derive(Clone, Debug)]
pub struct GridOracle {
    cell_size: i32,
    weight: f64,
    visited: HashSet<(i32, i32)>,
}

impl GridOracle {
    pub fn new(cell_size: i32, weight: f64) -> Result<Self> {
        if cell_size <= 0 {
            return Err(Error::Config(format!(
                "grid cell size must be positive, got {cell_size}"
            )));
        }
        if !weight.is_finite() {
            return Err(Error::Config("grid oracle weight must be finite".into()));
        }
        Ok(Self {
            cell_size,
            weight,
            visited: HashSet::new(),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn grid_cell(&self, pos: Cell) -> (i32, i32) {
        (pos.x.div_euclid(self.cell_size), pos.y.div_euclid(self.cell_size))
    }

    pub fn grid_oracle_bonus(&mut self, pos: Cell) -> f64 {
        if self.visited.insert(self.grid_cell(pos)) {
            self.weight
        } else {
            0.0
        }
    }

    pub fn visited_count(&self) -> usize {
        self.visited.len()
    }

    pub fn grid_oracle_reset(&mut self) {
        self.visited.clear();
    }
}
