//! Clipped-surrogate policy optimization: episode-aligned rollout collection,
//! generalized advantage estimation, and the epoch/minibatch update with
//! analytic gradients for the softmax policy and the value head.

use crate::env::{Env, Outcome, ScenarioSpec};
use crate::error::{Error, Result};
use crate::nn::{softmax, AdamState, Mlp, MlpGrads};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Rollouts stop at the first episode boundary at or past this count.
    pub rollout_steps: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden_actor: usize,
    pub hidden_critic: usize,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            gamma: 0.9,
            gae_lambda: 0.95,
            epochs: 20,
            minibatch_size: 256,
            rollout_steps: 2048,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr_actor: 5e-4,
            lr_critic: 1e-3,
            hidden_actor: 128,
            hidden_critic: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpisodeStat {
    pub seed: u64,
    pub n_sv: u32,
    pub ret: f64,
    pub length: u32,
    pub outcome: Outcome,
}

/// One rollout's worth of transitions plus per-episode summaries. Episodes
/// are stored back to back and every episode in the batch is complete.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// True on the last transition of each episode.
    pub dones: Vec<bool>,
    pub log_probs_old: Vec<f64>,
    pub values_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episodes: Vec<EpisodeStat>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Sample an action index from a categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn greedy_action(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

/// Generalized advantage estimation over one trajectory segment. `bootstrap`
/// is the value estimate past the last transition; zero when the segment
/// ends in a terminal state. Returns (advantages, returns) where the return
/// targets are advantage + value.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
    bootstrap: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n);
    assert_eq!(dones.len(), n);
    let mut advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let (next_value, cont) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (values[t + 1], 1.0)
        } else {
            (bootstrap, 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        gae = delta + gamma * lambda * cont * gae;
        advantages[t] = gae;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// Shift to zero mean, scale to unit standard deviation (floored at 1e-8).
pub fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for x in xs {
        *x = (*x - mean) / std;
    }
}

/// Pessimistic clipped objective: min(ratio * adv, clip(ratio) * adv).
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Derivative scale of the surrogate with respect to the new log-probability:
/// ratio * adv while the unclipped branch attains the min, zero once the
/// ratio is pushed past the clip boundary in the favoured direction.
pub fn surrogate_grad_scale(ratio: f64, adv: f64, eps: f64) -> f64 {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Run complete episodes under the stochastic policy until the step budget
/// is met (or `max_episodes` have run, whichever comes first), computing
/// advantages per episode as each one finishes. The episode cap keeps
/// rollouts from crossing curriculum stage boundaries.
pub fn collect_rollout<R: Rng + ?Sized>(
    env: &mut Env,
    actor: &Mlp,
    critic: &Mlp,
    hyper: &PpoHyper,
    scenario: ScenarioSpec,
    max_episodes: usize,
    rng: &mut R,
) -> Result<RolloutBatch> {
    assert!(max_episodes >= 1);
    let mut batch = RolloutBatch {
        obs: Vec::with_capacity(hyper.rollout_steps),
        actions: Vec::new(),
        rewards: Vec::new(),
        dones: Vec::new(),
        log_probs_old: Vec::new(),
        values_old: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
        episodes: Vec::new(),
    };
    while batch.len() < hyper.rollout_steps && batch.episodes.len() < max_episodes {
        let mut obs = env.reset(scenario, rng)?.flatten();
        let ep_start = batch.len();
        let mut ep_return = 0.0;
        let outcome = loop {
            let probs = softmax(&actor.forward(&obs).output);
            let action_idx = sample_action(&probs, rng);
            let value = critic.forward(&obs).output[0];
            let out = env.step(
                crate::dynamics::Action::from_index(action_idx)
                    .expect("action index in range"),
            )?;
            batch.obs.push(obs);
            batch.actions.push(action_idx);
            batch.rewards.push(out.reward.total);
            batch.dones.push(out.outcome.is_terminal());
            batch.log_probs_old.push(probs[action_idx].ln());
            batch.values_old.push(value);
            ep_return += out.reward.total;
            obs = out.obs.flatten();
            if out.outcome.is_terminal() {
                break out.outcome;
            }
        };
        let ep_end = batch.len();
        let (adv, ret) = compute_gae(
            &batch.rewards[ep_start..ep_end],
            &batch.values_old[ep_start..ep_end],
            &batch.dones[ep_start..ep_end],
            hyper.gamma,
            hyper.gae_lambda,
            0.0,
        );
        batch.advantages.extend(adv);
        batch.returns.extend(ret);
        batch.episodes.push(EpisodeStat {
            seed: env.episode_seed(),
            n_sv: env.n_sv_initial(),
            ret: ep_return,
            length: (ep_end - ep_start) as u32,
            outcome,
        });
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Largest |ratio - 1| seen in the first minibatch of the first epoch;
    /// the old policy produced the data, so this should be at rounding level.
    pub first_minibatch_max_ratio_dev: f64,
}

/// Twenty epochs of shuffled minibatch ascent on the clipped objective plus
/// entropy bonus for the actor and squared-error regression for the critic.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    actor: &mut Mlp,
    critic: &mut Mlp,
    adam_actor: &mut AdamState,
    adam_critic: &mut AdamState,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    clip_eps: f64,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::ShapeMismatch("empty rollout batch".into()));
    }
    let mut advantages = batch.advantages.clone();
    standardize(&mut advantages);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut actor_grads = MlpGrads::zeros_like(actor);
    let mut critic_grads = MlpGrads::zeros_like(critic);
    let mut metrics = UpdateMetrics::default();
    let mut tally_policy = 0.0;
    let mut tally_value = 0.0;
    let mut tally_entropy = 0.0;
    let mut tally_clipped = 0usize;
    let mut tally_count = 0usize;

    for epoch in 0..hyper.epochs {
        // Fisher-Yates driven by the shared training stream.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        for (mb, chunk) in indices.chunks(hyper.minibatch_size).enumerate() {
            actor_grads.zero();
            critic_grads.zero();
            let inv = 1.0 / chunk.len() as f64;
            let mut mb_policy_loss = 0.0;
            let mut mb_value_loss = 0.0;
            for &i in chunk {
                let adv = advantages[i];
                let action = batch.actions[i];

                let cache = actor.forward(&batch.obs[i]);
                let probs = softmax(&cache.output);
                let log_prob = probs[action].ln();
                let ratio = (log_prob - batch.log_probs_old[i]).exp();
                if epoch == 0 && mb == 0 {
                    metrics.first_minibatch_max_ratio_dev =
                        metrics.first_minibatch_max_ratio_dev.max((ratio - 1.0).abs());
                }
                mb_policy_loss -= clipped_surrogate(ratio, adv, clip_eps) * inv;
                if (ratio - 1.0).abs() > clip_eps {
                    tally_clipped += 1;
                }

                let entropy: f64 = probs
                    .iter()
                    .filter(|p| **p > 0.0)
                    .map(|p| -p * p.ln())
                    .sum();
                tally_entropy += entropy;
                tally_count += 1;

                // d(-surrogate)/d logit_k = -scale * (onehot_k - p_k);
                // d(-entropy_coef * H)/d logit_k = coef * p_k (ln p_k + H).
                let scale = surrogate_grad_scale(ratio, adv, clip_eps);
                let mut d_logits = vec![0.0; probs.len()];
                for (k, p) in probs.iter().enumerate() {
                    let onehot = if k == action { 1.0 } else { 0.0 };
                    let d_surr = -scale * (onehot - p);
                    let d_ent = hyper.entropy_coef * p * (p.max(1e-300).ln() + entropy);
                    d_logits[k] = (d_surr + d_ent) * inv;
                }
                actor.backward_into(&cache, &d_logits, &mut actor_grads);

                let vcache = critic.forward(&batch.obs[i]);
                let v = vcache.output[0];
                let err = v - batch.returns[i];
                mb_value_loss += hyper.value_coef * err * err * inv;
                critic.backward_into(&vcache, &[2.0 * hyper.value_coef * err * inv], &mut critic_grads);
            }
            if !mb_policy_loss.is_finite() || !mb_value_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, minibatch: mb });
            }
            tally_policy += mb_policy_loss;
            tally_value += mb_value_loss;
            adam_actor.step(actor, &actor_grads, hyper.lr_actor)?;
            adam_critic.step(critic, &critic_grads, hyper.lr_critic)?;
        }
    }
    actor.check_finite("actor")?;
    critic.check_finite("critic")?;

    let n_minibatches = (hyper.epochs * n.div_ceil(hyper.minibatch_size)) as f64;
    metrics.policy_loss = tally_policy / n_minibatches;
    metrics.value_loss = tally_value / n_minibatches;
    metrics.entropy = tally_entropy / tally_count as f64;
    metrics.clip_fraction = tally_clipped as f64 / tally_count as f64;
    Ok(metrics)
}
