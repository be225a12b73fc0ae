//! Run configuration: TOML file plus `--set section.key=value` overrides,
//! layered over per-environment defaults.

use std::path::PathBuf;

use exoppo::advantage::GaeConfig;
use exoppo::envs::{EnvId, EnvSpec};
use exoppo::objective::SurrogateConfig;
use exoppo::trainer::{OfflineConfig, OptimConfig, TrainConfig};
use exoppo::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSection {
    pub id: EnvId,
    pub max_episode_steps: usize,
    pub reward_scale: f64,
    pub n_envs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    /// Stored generations `M`.
    pub generations: usize,
    pub steps_per_env: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub init_std_scale: f64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSection {
    pub dataset: String,
    pub iterations: usize,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSection,
    pub train: TrainSection,
    pub surrogate: SurrogateConfig,
    pub gae: GaeConfig,
    pub optim: OptimConfig,
    pub offline: OfflineSection,
}

impl RunConfig {
    pub fn defaults(id: EnvId) -> Self {
        let t = TrainConfig::defaults(id);
        let o = OfflineConfig::defaults(PathBuf::new());
        Self {
            env: EnvSection {
                id,
                max_episode_steps: t.env.max_episode_steps,
                reward_scale: t.env.reward_scale,
                n_envs: t.n_envs,
                seed: t.seed,
            },
            train: TrainSection {
                generations: t.generations,
                steps_per_env: t.steps_per_env,
                epochs: t.epochs,
                batch_size: t.batch_size,
                hidden: t.hidden,
                init_std_scale: t.init_std_scale,
                total_steps: t.total_steps,
                eval_interval: t.eval_interval,
                eval_episodes: t.eval_episodes,
            },
            surrogate: t.surrogate,
            gae: t.gae,
            optim: t.optim,
            offline: OfflineSection {
                dataset: String::new(),
                iterations: o.iterations,
                sigma0: o.sigma0,
                sigma_decay: o.sigma_decay,
                sigma_min: o.sigma_min,
                batch_size: o.batch_size,
                lr: o.optim.policy_lr,
                eval_interval: o.eval_interval,
                eval_episodes: o.eval_episodes,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            env: EnvSpec {
                id: self.env.id,
                max_episode_steps: self.env.max_episode_steps,
                reward_scale: self.env.reward_scale,
            },
            n_envs: self.env.n_envs,
            generations: self.train.generations,
            steps_per_env: self.train.steps_per_env,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            hidden: self.train.hidden.clone(),
            init_std_scale: self.train.init_std_scale,
            surrogate: self.surrogate,
            gae: self.gae,
            optim: self.optim.clone(),
            total_steps: self.train.total_steps,
            eval_interval: self.train.eval_interval,
            eval_episodes: self.train.eval_episodes,
            seed: self.env.seed,
        }
    }

    pub fn offline_config(&self) -> OfflineConfig {
        let o = &self.offline;
        OfflineConfig {
            dataset: PathBuf::from(&o.dataset),
            iterations: o.iterations,
            sigma0: o.sigma0,
            sigma_decay: o.sigma_decay,
            sigma_min: o.sigma_min,
            batch_size: o.batch_size,
            hidden: self.train.hidden.clone(),
            init_std_scale: self.train.init_std_scale,
            surrogate: self.surrogate,
            optim: OptimConfig {
                policy_lr: o.lr,
                value_lr: o.lr,
                ..self.optim.clone()
            },
            eval_interval: o.eval_interval,
            eval_episodes: o.eval_episodes,
            seed: self.env.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot encode config: {e}")))
    }
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key {path:?} must be section.key")))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let sect = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{section} is not a section")))?;
    sect.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn valid_keys(defaults: &Table) -> Vec<String> {
    let mut keys = Vec::new();
    for (s, v) in defaults {
        if let Some(t) = v.as_table() {
            keys.extend(t.keys().map(|k| format!("{s}.{k}")));
        }
    }
    keys
}

/// Resolves a config file's text. Precedence, lowest first: per-env
/// defaults, the file, `seed_override`, then `overrides`.
pub fn resolve(text: &str, overrides: &[String], seed_override: Option<u64>) -> Result<RunConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    if let Some(seed) = seed_override {
        apply_override(&mut user, &format!("env.seed={seed}"))?;
    }
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    let id = match user.get("env").and_then(|e| e.get("id")) {
        Some(Value::String(s)) => EnvId::parse(s)?,
        Some(other) => return Err(Error::Config(format!("env.id must be a string, got {other}"))),
        None => return Err(Error::Config("missing required key env.id".into())),
    };
    let mut merged =
        Table::try_from(RunConfig::defaults(id)).map_err(|e| Error::Config(format!("default config: {e}")))?;
    let valid = valid_keys(&merged);
    for (section, value) in user {
        let Some(target) = merged.get_mut(&section).and_then(Value::as_table_mut) else {
            return Err(Error::Config(format!(
                "unknown config section `{section}`; valid keys: {}",
                valid.join(", ")
            )));
        };
        let Value::Table(entries) = value else {
            return Err(Error::Config(format!("`{section}` must be a section")));
        };
        for (key, v) in entries {
            if !target.contains_key(&key) {
                return Err(Error::Config(format!(
                    "unknown config key `{section}.{key}`; valid keys: {}",
                    valid.join(", ")
                )));
            }
            target.insert(key, v);
        }
    }
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid config value: {}", e.message())))?;
    Ok(cfg)
}
