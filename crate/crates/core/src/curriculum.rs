//! Three-stage training curriculum with stage-decaying clipping. Stage 1 is
//! an empty intersection with a wide clip range, stage 2 adds light traffic
//! at 0.20, stage 3 runs dense traffic and tightens the clip to 0.15 partway
//! through. The policy is carried across stage boundaries; optimizer moments
//! are reset there.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::env::{Env, Outcome, ScenarioSpec};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp};
use crate::ppo::{collect_rollout, ppo_update};
use crate::road_net::build_intersection;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

pub const N_ACTIONS: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    /// Global episodes at which stages 2 and 3 begin.
    pub switch_episodes: [u64; 2],
    /// Global episode at which stage 3 drops the clip range to its final value.
    pub stage3_eps_switch: u64,
    pub epsilons: [f64; 3],
    /// Inclusive surrounding-vehicle count range per stage.
    pub nsv_ranges: [[u32; 2]; 3],
    pub total_episodes: u64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            switch_episodes: [2000, 5000],
            stage3_eps_switch: 6000,
            epsilons: [0.25, 0.20, 0.15],
            nsv_ranges: [[0, 0], [1, 3], [4, 8]],
            total_episodes: 8000,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        let [s1, s2] = self.switch_episodes;
        if !(0 < s1 && s1 < s2 && s2 < self.total_episodes) {
            return Err(Error::InvalidConfig(format!(
                "curriculum switches {s1}, {s2} must be strictly increasing and inside (0, {})",
                self.total_episodes
            )));
        }
        if self.stage3_eps_switch < s2 || self.stage3_eps_switch > self.total_episodes {
            return Err(Error::InvalidConfig(format!(
                "stage3_eps_switch {} outside stage 3 [{s2}, {}]",
                self.stage3_eps_switch, self.total_episodes
            )));
        }
        for eps in self.epsilons {
            if !(0.0 < eps && eps < 1.0) {
                return Err(Error::InvalidConfig(format!("clip range {eps} outside (0, 1)")));
            }
        }
        for w in self.nsv_ranges.windows(2) {
            if w[1][0] < w[0][0] || w[1][1] < w[0][1] {
                return Err(Error::InvalidConfig(
                    "surrounding-vehicle ranges must be non-decreasing across stages".into(),
                ));
            }
        }
        for [lo, hi] in self.nsv_ranges {
            if lo > hi {
                return Err(Error::InvalidConfig(format!("empty vehicle range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Map a global episode index to (0-based stage index, clip range).
    pub fn stage_for_episode(&self, episode: u64) -> Result<(usize, f64)> {
        if episode >= self.total_episodes {
            return Err(Error::EpisodeBeyondTotal {
                episode,
                total: self.total_episodes,
            });
        }
        let [s1, s2] = self.switch_episodes;
        Ok(if episode < s1 {
            (0, self.epsilons[0])
        } else if episode < s2 {
            (1, self.epsilons[1])
        } else if episode < self.stage3_eps_switch {
            (2, self.epsilons[1])
        } else {
            (2, self.epsilons[2])
        })
    }

    pub fn scenario_for_stage(&self, stage: usize) -> ScenarioSpec {
        let [lo, hi] = self.nsv_ranges[stage];
        ScenarioSpec { n_sv_min: lo, n_sv_max: hi }
    }

    /// First episode index after `episode` at which the stage or the clip
    /// range changes (or training ends). Rollouts never cross it.
    pub fn segment_end(&self, episode: u64) -> u64 {
        let mut end = self.total_episodes;
        for b in [self.switch_episodes[0], self.switch_episodes[1], self.stage3_eps_switch] {
            if b > episode {
                end = end.min(b);
            }
        }
        end
    }
}

/// Curriculum training or a flat single-stage baseline with a constant clip
/// range (trained on the hardest traffic mix for the whole budget).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    Curriculum,
    FixedEpsilon(f64),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub mode: TrainMode,
    /// Pause training at the first update boundary at or past this episode.
    pub stop_at_episode: Option<u64>,
    /// Measure per-update wall time; off by default so logs are byte-stable.
    pub record_wall_time: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            mode: TrainMode::Curriculum,
            stop_at_episode: None,
            record_wall_time: false,
        }
    }
}

/// One finished episode as logged to the training CSV, tagged with the
/// metrics of the update its rollout fed.
#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub episode: u64,
    /// 1-based stage as printed in logs.
    pub stage: u32,
    pub epsilon: f64,
    pub n_sv: u32,
    pub ret: f64,
    pub length: u32,
    pub outcome: Outcome,
    pub update_index: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub wall_time_s: f64,
    /// Not a CSV column; surfaced for the on-policy sanity check.
    pub first_minibatch_max_ratio_dev: f64,
}

/// Run (or continue) training, invoking `on_row` once per finished episode
/// and writing checkpoints under `out_dir`:
/// `policy_stage{1,2,3}.bin` at stage ends, `latest.bin` periodically and on
/// pause, `final.bin` on completion. Returns the last checkpoint written.
pub fn train<F>(
    config: &RunConfig,
    options: &TrainOptions,
    out_dir: &Path,
    resume_from: Option<Checkpoint>,
    mut on_row: F,
) -> Result<Checkpoint>
where
    F: FnMut(&TrainLogRow) -> Result<()>,
{
    config.validate()?;
    let schedule = &config.curriculum;
    std::fs::create_dir_all(out_dir)?;

    let net = Arc::new(build_intersection(&config.road)?);
    let mut env = Env::new(net, config.sim_params(), config.digest());
    let obs_dim = env.obs_dim();

    let seed;
    let mut rng;
    let (mut actor, mut critic, mut adam_actor, mut adam_critic);
    let (mut episode, mut update_index, mut current_stage);
    match resume_from {
        Some(ck) => {
            if ck.actor.in_dim != obs_dim || ck.actor.out_dim != N_ACTIONS {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint actor is {}x{}, config wants {}x{}",
                    ck.actor.in_dim, ck.actor.out_dim, obs_dim, N_ACTIONS
                )));
            }
            seed = ck.rng_seed;
            rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_word_pos(ck.rng_word_pos);
            actor = ck.actor;
            critic = ck.critic;
            adam_actor = ck.adam_actor;
            adam_critic = ck.adam_critic;
            episode = ck.episode;
            update_index = ck.update_index;
            current_stage = ck.stage as usize;
        }
        None => {
            seed = config.run.seed;
            rng = ChaCha8Rng::seed_from_u64(seed);
            actor = Mlp::new(obs_dim, config.ppo.hidden_actor, N_ACTIONS, &mut rng);
            critic = Mlp::new(obs_dim, config.ppo.hidden_critic, 1, &mut rng);
            adam_actor = AdamState::new(&actor);
            adam_critic = AdamState::new(&critic);
            episode = 0;
            update_index = 0;
            current_stage = match options.mode {
                TrainMode::Curriculum => 0,
                TrainMode::FixedEpsilon(_) => 2,
            };
        }
    }

    let total = schedule.total_episodes;
    let stop = options.stop_at_episode.unwrap_or(u64::MAX);

    macro_rules! snapshot {
        () => {
            Checkpoint {
                stage: current_stage as u32,
                episode,
                update_index,
                rng_seed: seed,
                rng_word_pos: rng.get_word_pos(),
                actor: actor.clone(),
                critic: critic.clone(),
                adam_actor: adam_actor.clone(),
                adam_critic: adam_critic.clone(),
            }
        };
    }

    while episode < total && episode < stop {
        let (stage, eps, scenario, seg_end) = match options.mode {
            TrainMode::Curriculum => {
                let (stage, eps) = schedule.stage_for_episode(episode)?;
                (stage, eps, schedule.scenario_for_stage(stage), schedule.segment_end(episode))
            }
            TrainMode::FixedEpsilon(eps) => (2, eps, schedule.scenario_for_stage(2), total),
        };
        if stage != current_stage {
            // Stage handoff: keep the policy, archive it, restart Adam.
            snapshot!().save(&out_dir.join(format!("policy_stage{}.bin", current_stage + 1)))?;
            adam_actor.reset();
            adam_critic.reset();
            current_stage = stage;
        }

        let max_episodes = (seg_end - episode) as usize;
        let batch = collect_rollout(&mut env, &actor, &critic, &config.ppo, scenario, max_episodes, &mut rng)?;
        let t0 = Instant::now();
        let metrics = ppo_update(
            &mut actor,
            &mut critic,
            &mut adam_actor,
            &mut adam_critic,
            &batch,
            &config.ppo,
            eps,
            &mut rng,
        )?;
        let wall_time_s = if options.record_wall_time {
            t0.elapsed().as_secs_f64()
        } else {
            0.0
        };
        update_index += 1;
        assert!(
            metrics.first_minibatch_max_ratio_dev < 1e-6,
            "behavior-policy ratios drifted: {}",
            metrics.first_minibatch_max_ratio_dev
        );

        for (k, ep) in batch.episodes.iter().enumerate() {
            on_row(&TrainLogRow {
                episode: episode + k as u64,
                stage: current_stage as u32 + 1,
                epsilon: eps,
                n_sv: ep.n_sv,
                ret: ep.ret,
                length: ep.length,
                outcome: ep.outcome,
                update_index,
                policy_loss: metrics.policy_loss,
                value_loss: metrics.value_loss,
                clip_fraction: metrics.clip_fraction,
                wall_time_s,
                first_minibatch_max_ratio_dev: metrics.first_minibatch_max_ratio_dev,
            })?;
        }
        episode += batch.episodes.len() as u64;

        if update_index % config.run.checkpoint_every_updates == 0 {
            snapshot!().save(&out_dir.join("latest.bin"))?;
        }
    }

    let last = snapshot!();
    last.save(&out_dir.join("latest.bin"))?;
    if episode >= total {
        last.save(&out_dir.join(format!("policy_stage{}.bin", current_stage + 1)))?;
        last.save(&out_dir.join("final.bin"))?;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::PpoHyper;

    #[test]
    fn default_schedule_fidelity() {
        let s = CurriculumSchedule::default();
        for ep in 0..8000u64 {
            let (stage, eps) = s.stage_for_episode(ep).unwrap();
            let (want_stage, want_eps) = if ep < 2000 {
                (0, 0.25)
            } else if ep < 5000 {
                (1, 0.20)
            } else if ep < 6000 {
                (2, 0.20)
            } else {
                (2, 0.15)
            };
            assert_eq!(stage, want_stage, "episode {ep}");
            assert_eq!(eps, want_eps, "episode {ep}");
        }
        assert!(matches!(
            s.stage_for_episode(8000),
            Err(Error::EpisodeBeyondTotal { episode: 8000, total: 8000 })
        ));
    }

    #[test]
    fn epsilon_is_non_increasing() {
        let s = CurriculumSchedule::default();
        let mut prev = f64::INFINITY;
        for ep in 0..s.total_episodes {
            let (_, eps) = s.stage_for_episode(ep).unwrap();
            assert!(eps <= prev);
            prev = eps;
        }
    }

    #[test]
    fn segment_ends_at_every_boundary() {
        let s = CurriculumSchedule::default();
        assert_eq!(s.segment_end(0), 2000);
        assert_eq!(s.segment_end(1999), 2000);
        assert_eq!(s.segment_end(2000), 5000);
        assert_eq!(s.segment_end(5999), 6000);
        assert_eq!(s.segment_end(6000), 8000);
        assert_eq!(s.segment_end(7999), 8000);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = CurriculumSchedule { switch_episodes: [5000, 2000], ..Default::default() };
        assert!(s.validate().is_err());
        s = CurriculumSchedule { stage3_eps_switch: 100, ..Default::default() };
        assert!(s.validate().is_err());
        s = CurriculumSchedule { nsv_ranges: [[2, 3], [1, 3], [4, 8]], ..Default::default() };
        assert!(s.validate().is_err());
        assert!(CurriculumSchedule::default().validate().is_ok());
    }

    fn tiny_config(seed: u64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.seed = seed;
        cfg.run.checkpoint_every_updates = 2;
        cfg.ppo = PpoHyper {
            rollout_steps: 48,
            minibatch_size: 32,
            epochs: 2,
            hidden_actor: 8,
            hidden_critic: 8,
            ..PpoHyper::default()
        };
        cfg.curriculum = CurriculumSchedule {
            switch_episodes: [3, 6],
            stage3_eps_switch: 8,
            total_episodes: 10,
            ..CurriculumSchedule::default()
        };
        cfg
    }

    #[test]
    fn tiny_run_emits_stage_checkpoints_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(1);
        let mut rows: Vec<TrainLogRow> = Vec::new();
        train(&cfg, &TrainOptions::default(), dir.path(), None, |r| {
            rows.push(*r);
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 10);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.episode, i as u64);
            let want_stage = if i < 3 { 1 } else if i < 6 { 2 } else { 3 };
            assert_eq!(r.stage, want_stage, "episode {i}");
            assert_eq!(r.wall_time_s, 0.0);
        }
        let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(rows[9].epsilon, 0.15);
        for name in ["policy_stage1.bin", "policy_stage2.bin", "policy_stage3.bin", "final.bin", "latest.bin"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        // The archived stage-1 policy stops exactly at the first switch.
        let pi1 = Checkpoint::load(&dir.path().join("policy_stage1.bin")).unwrap();
        assert_eq!(pi1.episode, 3);
        assert_eq!(pi1.stage, 0);
        let pi2 = Checkpoint::load(&dir.path().join("policy_stage2.bin")).unwrap();
        assert_eq!(pi2.episode, 6);
        assert_eq!(pi2.stage, 1);
        assert!(pi2.update_index > pi1.update_index);
        assert!(pi1.adam_actor.t > 0);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = tiny_config(7);
            train(&cfg, &TrainOptions::default(), dir.path(), None, |_| Ok(())).unwrap();
            std::fs::read(dir.path().join("final.bin")).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fixed_epsilon_mode_is_flat() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(3);
        let mut rows: Vec<TrainLogRow> = Vec::new();
        let options = TrainOptions {
            mode: TrainMode::FixedEpsilon(0.15),
            ..Default::default()
        };
        train(&cfg, &options, dir.path(), None, |r| {
            rows.push(*r);
            Ok(())
        })
        .unwrap();
        assert!(rows.len() >= 10);
        for r in &rows {
            assert_eq!(r.stage, 3);
            assert_eq!(r.epsilon, 0.15);
            assert!((4..=8).contains(&r.n_sv));
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = tiny_config(11);

        let dir_a = tempfile::tempdir().unwrap();
        let mut rows_a = Vec::new();
        train(&cfg, &TrainOptions::default(), dir_a.path(), None, |r| {
            rows_a.push((r.episode, r.ret, r.update_index));
            Ok(())
        })
        .unwrap();
        let final_a = std::fs::read(dir_a.path().join("final.bin")).unwrap();

        let dir_b = tempfile::tempdir().unwrap();
        let mut rows_b = Vec::new();
        let paused = TrainOptions { stop_at_episode: Some(5), ..Default::default() };
        train(&cfg, &paused, dir_b.path(), None, |r| {
            rows_b.push((r.episode, r.ret, r.update_index));
            Ok(())
        })
        .unwrap();
        assert!(!dir_b.path().join("final.bin").exists());
        let ck = Checkpoint::load(&dir_b.path().join("latest.bin")).unwrap();
        train(&cfg, &TrainOptions::default(), dir_b.path(), Some(ck), |r| {
            rows_b.push((r.episode, r.ret, r.update_index));
            Ok(())
        })
        .unwrap();
        let final_b = std::fs::read(dir_b.path().join("final.bin")).unwrap();

        assert_eq!(final_a, final_b);
        assert_eq!(rows_a, rows_b);
    }
}
