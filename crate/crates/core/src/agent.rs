//! PPO learner: a shared MLP trunk with a softmax policy head and a scalar
//! value head, trained with the clipped surrogate and GAE.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, max_relative_gradient_error, softmax_in_place, Activation, AdamConfig, AdamState, Mlp, MlpGrads,
    OutputTransform,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoConfig {
    pub discount_gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub horizon: usize,
    pub task_reward_scale: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    pub hidden: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            discount_gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 2.5e-4,
            epochs: 4,
            minibatch: 64,
            horizon: 1024,
            task_reward_scale: 1.0,
            max_grad_norm: 0.5,
            hidden: 64,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_epsilon > 0.0) {
            return bad("clip epsilon must be positive");
        }
        if !(self.discount_gamma > 0.0 && self.discount_gamma < 1.0) {
            return bad("discount gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae lambda must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("learning rate must be positive and loss coefficients non-negative");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 || self.hidden == 0 {
            return bad("epochs, minibatch, horizon and hidden width must be positive");
        }
        if !self.task_reward_scale.is_finite() || !(self.max_grad_norm >= 0.0) {
            return bad("task reward scale must be finite and the gradient clip non-negative");
        }
        Ok(())
    }
}

/// Policy and value function sharing one MLP whose last layer emits
/// `num_actions` logits followed by the value.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    net: Mlp,
    num_actions: usize,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, num_actions: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::Config("policy needs at least one action".into()));
        }
        let mut net = Mlp::new(
            &[obs_len, hidden, hidden, num_actions + 1],
            Activation::Relu,
            OutputTransform::Identity,
            rng,
        )?;
        // near-uniform initial policy
        let last = net.layers_mut().last_mut().expect("three layers");
        for w in last.weight_mut() {
            *w *= 0.1;
        }
        Ok(Self { net, num_actions })
    }

    pub fn from_mlp(net: Mlp, num_actions: usize) -> Result<Self> {
        if net.output_dim() != num_actions + 1 {
            return Err(Error::Config(format!(
                "policy network emits {} values, expected {} logits plus a value",
                net.output_dim(),
                num_actions
            )));
        }
        Ok(Self { net, num_actions })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn obs_len(&self) -> usize {
        self.net.input_dim()
    }

    /// Action probabilities and value for one observation.
    pub fn evaluate(&self, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut out = self.net.predict(obs, 1)?;
        let value = out.pop().expect("value output");
        softmax_in_place(&mut out);
        Ok((out, value))
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.evaluate(obs)?.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action: usize,
    pub logprob: f64,
    pub value: f64,
}

/// `log softmax(logits)[a]`, computed the same way everywhere so that stored
/// and recomputed log-probabilities agree exactly.
fn log_prob(logits: &[f64], a: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    logits[a] - max - sum.ln()
}

pub fn policy_act<R: Rng + ?Sized>(params: &PolicyParams, obs: &[f64], rng: &mut R) -> Result<PolicyOutput> {
    let out = params.net.predict(obs, 1)?;
    let (logits, value) = out.split_at(params.num_actions);
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut action = params.num_actions - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            action = i;
            break;
        }
    }
    Ok(PolicyOutput {
        action,
        logprob: log_prob(logits, action),
        value: value[0],
    })
}

/// `r_hat = scale * r + b`.
pub fn combine_rewards(task_reward: f64, bonus: f64, task_reward_scale: f64) -> f64 {
    task_reward_scale * task_reward + bonus
}

/// One fixed-horizon rollout. `done[t]` marks that the episode ended after step `t`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    obs_len: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub task_rewards: Vec<f64>,
    pub bonuses: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new(obs_len: usize, horizon: usize) -> Self {
        Self {
            obs_len,
            obs: Vec::with_capacity(obs_len * horizon),
            actions: Vec::with_capacity(horizon),
            logprobs: Vec::with_capacity(horizon),
            values: Vec::with_capacity(horizon),
            task_rewards: Vec::with_capacity(horizon),
            bonuses: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            dones: Vec::with_capacity(horizon),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn observation(&self, t: usize) -> &[f64] {
        &self.obs[t * self.obs_len..(t + 1) * self.obs_len]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        out: PolicyOutput,
        task_reward: f64,
        bonus: f64,
        done: bool,
        task_reward_scale: f64,
    ) {
        debug_assert_eq!(obs.len(), self.obs_len);
        self.obs.extend_from_slice(obs);
        self.actions.push(out.action);
        self.logprobs.push(out.logprob);
        self.values.push(out.value);
        self.task_rewards.push(task_reward);
        self.bonuses.push(bonus);
        self.rewards
            .push(combine_rewards(task_reward, bonus, task_reward_scale));
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.logprobs.clear();
        self.values.clear();
        self.task_rewards.clear();
        self.bonuses.clear();
        self.rewards.clear();
        self.dones.clear();
    }

    /// Advantages and returns, bootstrapping from `last_value` after the final step.
    pub fn into_batch(&self, last_value: f64, gamma: f64, lambda: f64) -> PpoBatch {
        let (advantages, returns) = compute_gae(&self.rewards, &self.values, &self.dones, last_value, gamma, lambda);
        PpoBatch {
            obs_len: self.obs_len,
            obs: self.obs.clone(),
            actions: self.actions.clone(),
            old_logprobs: self.logprobs.clone(),
            advantages,
            returns,
        }
    }
}

/// `delta_t = r_t + gamma V(s_{t+1})(1 - done_t) - V(s_t)`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, returns `A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flattened training data for one update.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub obs_len: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Shifts and scales to zero mean and unit standard deviation (std floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

pub(crate) struct MinibatchLoss {
    pub stats: PpoStats,
    pub total: f64,
    pub grads: MlpGrads,
}

/// Combined loss `policy + value_coef * value - entropy_coef * entropy` of the
/// rows `idx` of `batch` (advantages already normalised) and its gradient.
pub(crate) fn minibatch_loss(
    params: &PolicyParams,
    batch: &PpoBatch,
    idx: &[usize],
    config: &PpoConfig,
) -> Result<MinibatchLoss> {
    let rows = idx.len();
    let a_n = params.num_actions;
    let n = batch.obs_len;
    let mut input = Vec::with_capacity(rows * n);
    for &i in idx {
        input.extend_from_slice(&batch.obs[i * n..(i + 1) * n]);
    }
    let (out, cache) = params.net.forward_batch(&input, rows)?;
    let scale = 1.0 / rows as f64;
    let eps = config.clip_epsilon;
    let mut stats = PpoStats::default();
    let mut dout = vec![0.0; out.len()];
    let mut probs = vec![0.0; a_n];
    for (r, &i) in idx.iter().enumerate() {
        let row = &out[r * (a_n + 1)..(r + 1) * (a_n + 1)];
        let (logits, value) = (&row[..a_n], row[a_n]);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let logp = log_prob(logits, a);
        let ratio = (logp - batch.old_logprobs[i]).exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let (unclipped_obj, clipped_obj) = (ratio * adv, clipped * adv);
        stats.policy_loss -= unclipped_obj.min(clipped_obj) * scale;
        if (ratio - 1.0).abs() > eps {
            stats.clip_fraction += scale;
        }
        // d(-min)/d logp: the unclipped branch is active unless clipping binds
        let g_logp = if unclipped_obj <= clipped_obj {
            -ratio * adv
        } else {
            0.0
        };

        probs.copy_from_slice(logits);
        softmax_in_place(&mut probs);
        let entropy: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        stats.entropy += entropy * scale;
        let err = value - batch.returns[i];
        stats.value_loss += err * err * scale;

        let d = &mut dout[r * (a_n + 1)..(r + 1) * (a_n + 1)];
        for j in 0..a_n {
            let p = probs[j];
            let dlogp = if j == a { 1.0 - p } else { -p };
            let log_p = if p > 0.0 { p.ln() } else { 0.0 };
            let dent = -p * (log_p + entropy);
            d[j] = scale * (g_logp * dlogp - config.entropy_coef * dent);
        }
        d[a_n] = scale * config.value_coef * 2.0 * err;
    }
    let total = stats.policy_loss + config.value_coef * stats.value_loss - config.entropy_coef * stats.entropy;
    let mut grads = MlpGrads::zeros_like(&params.net);
    params.net.backward_logits(&cache, &dout, &mut grads, false)?;
    Ok(MinibatchLoss { stats, total, grads })
}

/// Several epochs of shuffled minibatch Adam on the clipped objective.
/// Advantages are normalised once over the whole batch.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    batch: &PpoBatch,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::Usage("empty rollout".into()));
    }
    let mut batch_norm = batch.clone();
    normalize_advantages(&mut batch_norm.advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut count = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch) {
            let mut mb = minibatch_loss(params, &batch_norm, idx, config)?;
            if !mb.total.is_finite() || !mb.grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite policy loss: policy {} value {} entropy {}",
                    mb.stats.policy_loss, mb.stats.value_loss, mb.stats.entropy
                )));
            }
            if config.max_grad_norm > 0.0 {
                let norm = mb.grads.sum_squares().sqrt();
                if norm > config.max_grad_norm {
                    mb.grads.scale(config.max_grad_norm / norm);
                }
            }
            adam_step(&mut params.net, &mb.grads, adam, config.learning_rate)?;
            stats.policy_loss += mb.stats.policy_loss;
            stats.value_loss += mb.stats.value_loss;
            stats.entropy += mb.stats.entropy;
            stats.clip_fraction += mb.stats.clip_fraction;
            count += 1;
        }
    }
    let c = count as f64;
    Ok(PpoStats {
        policy_loss: stats.policy_loss / c,
        value_loss: stats.value_loss / c,
        entropy: stats.entropy / c,
        clip_fraction: stats.clip_fraction / c,
    })
}

/// Worst relative error between the analytic gradient of the combined loss on
/// rows `idx` and central differences with step `eps`.
pub fn ppo_gradient_error(
    params: &PolicyParams,
    batch: &PpoBatch,
    idx: &[usize],
    config: &PpoConfig,
    eps: f64,
) -> Result<f64> {
    let analytic = minibatch_loss(params, batch, idx, config)?.grads.flatten();
    let mut probe = params.clone();
    let mut flat = params.mlp().flatten();
    let mut failure = None;
    let err = max_relative_gradient_error(&mut flat, &analytic, eps, |p| {
        let r = probe
            .net
            .load_flat(p)
            .and_then(|()| minibatch_loss(&probe, batch, idx, config));
        r.map(|m| m.total).unwrap_or_else(|e| {
            failure = Some(e);
            f64::NAN
        })
    });
    failure.map_or(Ok(err), Err)
}

/// Optimiser state for a policy.
pub fn policy_adam(params: &PolicyParams) -> AdamState {
    AdamState::new(&params.net, AdamConfig::default())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Dense;

    fn fixed_logits(logits: &[f64]) -> PolicyParams {
        let a = logits.len();
        let l1 = Dense::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let l2 = Dense::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let mut bias = logits.to_vec();
        bias.push(0.0);
        let l3 = Dense::new(1, a + 1, vec![0.0; a + 1], bias).unwrap();
        let mlp = Mlp::from_layers(vec![l1, l2, l3], vec![Activation::Relu; 2], OutputTransform::Identity).unwrap();
        PolicyParams::from_mlp(mlp, a).unwrap()
    }

    #[test]
    fn uniform_policy_samples_uniformly() {
        let p = fixed_logits(&[0.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let out = policy_act(&p, &[1.0], &mut rng).unwrap();
            assert!((out.logprob - 0.25f64.ln()).abs() < 1e-12);
            counts[out.action] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn saturated_logit_dominates_and_sampling_is_deterministic() {
        let p = fixed_logits(&[0.0, 50.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..10_000)
            .filter(|_| policy_act(&p, &[1.0], &mut rng).unwrap().action == 1)
            .count();
        assert!(hits >= 9_999);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PolicyParams::new(6, 3, 8, &mut rng).unwrap();
        let obs = [0.5, 0.0, 1.0, 0.0, 0.2, 0.0];
        let a = policy_act(&net, &obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = policy_act(&net, &obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let (probs, v) = net.evaluate(&obs).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12 && v.is_finite());
    }

    #[test]
    fn reward_combination() {
        assert_eq!(combine_rewards(10.0, 0.0, 1.0), 10.0);
        assert_eq!(combine_rewards(0.0, 0.015, 1.0), 0.015);
        assert!((combine_rewards(1.0, -0.01, 5.0) - 4.99).abs() < 1e-15);
    }

    /// Direct recursion: `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at dones.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        fn adv(t: usize, r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> f64 {
            if t == r.len() {
                return 0.0;
            }
            let next_v = if t + 1 < r.len() { v[t + 1] } else { last };
            let live = if d[t] { 0.0 } else { 1.0 };
            let delta = r[t] + g * next_v * live - v[t];
            delta + g * l * live * adv(t + 1, r, v, d, last, g, l)
        }
        (0..r.len()).map(|t| adv(t, r, v, d, last, g, l)).collect()
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let (a, ret) = compute_gae(&r, &[0.0; 4], &[false; 4], 0.0, 0.99, 0.0);
        assert_eq!(a, r.to_vec());
        assert_eq!(ret, r.to_vec());
        let (a, _) = compute_gae(&r, &[0.0; 4], &[false; 4], 0.0, 0.999_999_999_999, 1.0);
        let suffix = [2.5, 1.5, 3.5, 3.0];
        for (x, y) in a.iter().zip(suffix) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn gae_matches_recursive_oracle(
            seed in any::<u64>(),
            gamma in 0.5f64..0.999,
            lambda in 0.0f64..=1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..20).map(|_| rng.gen_bool(0.15)).collect();
            let last = rng.gen_range(-1.0..1.0);
            let (a, ret) = compute_gae(&r, &v, &d, last, gamma, lambda);
            let oracle = gae_oracle(&r, &v, &d, last, gamma, lambda);
            for t in 0..20 {
                prop_assert!((a[t] - oracle[t]).abs() < 1e-12);
                prop_assert!((ret[t] - (oracle[t] + v[t])).abs() < 1e-12);
            }
        }

        #[test]
        fn advantage_normalisation(values in proptest::collection::vec(-100.0f64..100.0, 2..300)) {
            let mut a = values.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - values.iter().copied().fold(f64::INFINITY, f64::min);
            if spread > 1e-3 {
                let mean = a.iter().sum::<f64>() / n;
                let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() <= 1e-10);
                prop_assert!((std - 1.0).abs() <= 1e-6);
            }
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, params: &PolicyParams, rows: usize) -> PpoBatch {
        let n = params.obs_len();
        let obs: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for r in 0..rows {
            let out = policy_act(params, &obs[r * n..(r + 1) * n], rng).unwrap();
            actions.push(out.action);
            old.push(out.logprob);
        }
        PpoBatch {
            obs_len: n,
            obs,
            actions,
            old_logprobs: old,
            advantages: (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            returns: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn combined_loss_gradient_matches_finite_differences() {
        let config = PpoConfig::default();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = PolicyParams::new(5, 4, 7, &mut rng).unwrap();
            // zero biases can leave a hidden unit exactly at its kink
            let jitter: Vec<f64> = params
                .mlp()
                .flatten()
                .iter()
                .map(|w| w + rng.gen_range(-0.1..0.1))
                .collect();
            params.net.load_flat(&jitter).unwrap();
            let mut batch = random_batch(&mut rng, &params, 12);
            // move the old policy so that some ratios are clipped, keeping
            // every ratio away from the clip boundaries
            for lp in batch.old_logprobs.iter_mut() {
                let shift: f64 = if rng.gen_bool(0.5) {
                    rng.gen_range(-0.1..0.1)
                } else {
                    rng.gen_range(0.3..0.6)
                };
                *lp += shift * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
            let idx: Vec<usize> = (0..12).collect();
            let err = ppo_gradient_error(&params, &batch, &idx, &config, 1e-6).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn unchanged_policy_has_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PolicyParams::new(5, 4, 7, &mut rng).unwrap();
        let batch = random_batch(&mut rng, &params, 32);
        let idx: Vec<usize> = (0..32).collect();
        let mb = minibatch_loss(&params, &batch, &idx, &PpoConfig::default()).unwrap();
        assert_eq!(mb.stats.clip_fraction, 0.0);
        let mut p = params.clone();
        let cfg = PpoConfig {
            epochs: 1,
            minibatch: 32,
            ..PpoConfig::default()
        };
        let stats = ppo_update(&mut p, &mut policy_adam(&params), &batch, &cfg, &mut rng).unwrap();
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(stats.entropy >= 0.0 && stats.entropy <= 4f64.ln() + 1e-12);
    }

    #[test]
    fn zero_advantages_leave_only_entropy_and_value_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = PolicyParams::new(5, 4, 7, &mut rng).unwrap();
        let mut batch = random_batch(&mut rng, &params, 16);
        batch.advantages = vec![0.0; 16];
        let idx: Vec<usize> = (0..16).collect();
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let mb = minibatch_loss(&params, &batch, &idx, &cfg).unwrap();
        assert_eq!(mb.grads.max_abs(), 0.0);
        let cfg = PpoConfig {
            entropy_coef: 0.01,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        assert!(minibatch_loss(&params, &batch, &idx, &cfg).unwrap().grads.max_abs() > 0.0);
    }

    #[test]
    fn two_armed_bandit_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = PpoConfig {
            horizon: 32,
            minibatch: 32,
            learning_rate: 3e-3,
            hidden: 16,
            ..PpoConfig::default()
        };
        let mut params = PolicyParams::new(1, 2, cfg.hidden, &mut rng).unwrap();
        let mut adam = policy_adam(&params);
        let obs = [1.0];
        for _ in 0..200 {
            let mut buf = RolloutBuffer::new(1, cfg.horizon);
            for _ in 0..cfg.horizon {
                let out = policy_act(&params, &obs, &mut rng).unwrap();
                let r = if out.action == 0 { 1.0 } else { 0.0 };
                buf.push(&obs, out, r, 0.0, true, cfg.task_reward_scale);
            }
            let batch = buf.into_batch(0.0, cfg.discount_gamma, cfg.gae_lambda);
            ppo_update(&mut params, &mut adam, &batch, &cfg, &mut rng).unwrap();
        }
        let (probs, _) = params.evaluate(&obs).unwrap();
        assert!(probs[0] > 0.95, "{probs:?}");
    }
}
