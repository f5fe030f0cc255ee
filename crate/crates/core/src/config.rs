//! Run configuration: one sectioned TOML file covering every tunable in the
//! stack, with strict unknown-key rejection, dotted-path command-line
//! overrides, and a content digest for manifests and replay headers.

use crate::curriculum::CurriculumSchedule;
use crate::dynamics::DynamicsConfig;
use crate::env::{EnvConfig, SimParams};
use crate::error::{Error, Result};
use crate::ppo::PpoHyper;
use crate::road_net::GeometryConfig;
use crate::traffic::{IdmParams, TrafficConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunMeta {
    pub seed: u64,
    pub checkpoint_every_updates: u64,
}

impl Default for RunMeta {
    fn default() -> Self {
        RunMeta {
            seed: 0,
            checkpoint_every_updates: 25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunMeta,
    pub road: GeometryConfig,
    pub dynamics: DynamicsConfig,
    pub idm: IdmParams,
    pub traffic: TrafficConfig,
    pub env: EnvConfig,
    pub ppo: PpoHyper,
    pub curriculum: CurriculumSchedule,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a file and apply `key.path=value` overrides on top of it.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::ConfigParse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("override '{ov}' is not key.path=value"))
            })?;
            apply_override(&mut value, key.trim(), raw.trim())?;
        }
        let cfg = RunConfig::deserialize(value).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Hex sha256 of the canonical serialized form; equal digests mean
    /// semantically identical configurations.
    pub fn digest(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            env: self.env,
            dynamics: self.dynamics,
            idm: self.idm,
            traffic: self.traffic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.curriculum.validate()?;
        let p = &self.ppo;
        if p.epochs == 0 || p.minibatch_size == 0 || p.rollout_steps == 0 {
            return Err(Error::InvalidConfig(
                "ppo epochs, minibatch_size, and rollout_steps must be positive".into(),
            ));
        }
        if !(p.gamma > 0.0 && p.gamma <= 1.0) || !(0.0..=1.0).contains(&p.gae_lambda) {
            return Err(Error::InvalidConfig(format!(
                "discount {} / smoothing {} outside (0,1] / [0,1]",
                p.gamma, p.gae_lambda
            )));
        }
        if p.lr_actor <= 0.0 || p.lr_critic <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if p.hidden_actor == 0 || p.hidden_critic == 0 {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        if self.env.sim_hz <= 0.0 || self.env.t_max_s <= 0.0 || self.env.goal_radius_m <= 0.0 {
            return Err(Error::InvalidConfig(
                "env.sim_hz, env.t_max_s, env.goal_radius_m must be positive".into(),
            ));
        }
        if self.run.checkpoint_every_updates == 0 {
            return Err(Error::InvalidConfig("run.checkpoint_every_updates must be positive".into()));
        }
        Ok(())
    }
}

/// Set a dotted-path key inside a TOML document, creating intermediate
/// tables as needed. The raw value is parsed as TOML; anything that does not
/// parse is taken as a bare string.
pub fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() {
        return Err(Error::InvalidArgument("empty override key".into()));
    }
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::InvalidArgument(format!("override key '{key}' descends into a non-table"))
        })?;
        if parts.peek().is_none() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop always returns on the last path segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaulted_config_is_valid() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.ppo.gamma, 0.9);
        assert_eq!(cfg.ppo.epochs, 20);
        assert_eq!(cfg.ppo.lr_actor, 5e-4);
        assert_eq!(cfg.ppo.lr_critic, 1e-3);
        assert_eq!(cfg.curriculum.switch_episodes, [2000, 5000]);
        assert_eq!(cfg.road.lane_width_m, 4.0);
        assert_eq!(cfg.env.sim_hz, 15.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[ppo]\nlerning_rate = 0.1\n").is_err());
        assert!(RunConfig::from_toml_str("[typo_section]\nx = 1\n").is_err());
    }

    #[test]
    fn sections_parse_by_name() {
        let cfg = RunConfig::from_toml_str(
            "[road]\nlane_width_m = 3.5\n\n[dynamics]\nv_max = 12.0\n\n[idm]\nt_headway = 2.0\n\n[env]\nw_success = 20.0\n\n[curriculum]\nstage3_eps_switch = 6500\n",
        )
        .unwrap();
        assert_eq!(cfg.road.lane_width_m, 3.5);
        assert_eq!(cfg.dynamics.v_max, 12.0);
        assert_eq!(cfg.env.w_success, 20.0);
        assert_eq!(cfg.curriculum.stage3_eps_switch, 6500);
        // Untouched sections keep defaults.
        assert_eq!(cfg.ppo.minibatch_size, 256);
    }

    #[test]
    fn overrides_apply_and_reject_bad_keys() {
        let cfg = RunConfig::from_toml_with_overrides(
            "",
            &[
                "curriculum.total_episodes=20".into(),
                "ppo.rollout_steps = 128".into(),
                "run.seed=9".into(),
                "curriculum.switch_episodes=[5, 10]".into(),
                "curriculum.stage3_eps_switch=15".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.curriculum.total_episodes, 20);
        assert_eq!(cfg.ppo.rollout_steps, 128);
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.curriculum.switch_episodes, [5, 10]);

        assert!(RunConfig::from_toml_with_overrides("", &["ppo.not_a_key=1".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["no_equals_sign".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_with_overrides("", &["ppo.gamma=0.0".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["ppo.epochs=0".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["env.sim_hz=-1".into()]).is_err());
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let cfg = RunConfig::from_toml_with_overrides(
            "",
            &["run.seed=3".into(), "env.w_collision=12.5".into()],
        )
        .unwrap();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(text, back.to_toml_string());
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.run.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = RunConfig::load(Path::new("/nonexistent/cfg.toml"), &[]).unwrap_err();
        assert!(matches!(err, Error::ConfigParse(_)));
    }
}
