use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentVariant, Cadence, PsrlPrior};
use crate::error::{Error, Result};
use crate::mdp::{GridworldSpec, RewardKind, RewardSign, TransitionKind};
use crate::metrics::ReferenceKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    QGreedy,
    QDecay,
    Ucrl2,
    Psrl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ExactW1,
    Otdd,
}

/// Flat key/value form of an experiment, as read from and written to config files.
///
/// Every key is optional in a file; missing keys take the defaults below (a deterministic
/// dense 5x5 grid with ε(1)-greedy Q-learning). `goal` defaults to the bottom-right corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub name: String,

    pub width: usize,
    pub height: usize,
    pub start: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<[usize; 2]>,
    pub reward_kind: RewardKind,
    pub reward_sign: RewardSign,
    pub transition_kind: TransitionKind,
    pub slip_prob_main: f64,
    pub slip_prob_side: f64,
    pub max_steps: usize,
    pub gamma: f64,

    pub agent: AgentKind,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub warmup_steps: usize,
    pub learning_rate: f64,
    pub delta: f64,
    pub confidence_scale: f64,
    pub dirichlet_alpha: f64,
    pub reward_prior_mean: f64,
    pub reward_prior_var: f64,
    pub reward_noise_var: f64,
    pub total_episodes: usize,
    pub convergence_window: usize,
    pub snapshot_cadence: Cadence,
    pub snapshot_behavior_policy: bool,

    pub trials: usize,
    pub base_seed: u64,
    pub backend: BackendKind,
    pub rollouts: usize,
    pub reference: ReferenceKind,
    pub output_dir: PathBuf,
    pub record_wall_time: bool,
}

/// Keys accepted in config files and overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "name",
    "width",
    "height",
    "start",
    "goal",
    "reward_kind",
    "reward_sign",
    "transition_kind",
    "slip_prob_main",
    "slip_prob_side",
    "max_steps",
    "gamma",
    "agent",
    "epsilon",
    "epsilon_decay",
    "epsilon_floor",
    "warmup_steps",
    "learning_rate",
    "delta",
    "confidence_scale",
    "dirichlet_alpha",
    "reward_prior_mean",
    "reward_prior_var",
    "reward_noise_var",
    "total_episodes",
    "convergence_window",
    "snapshot_cadence",
    "snapshot_behavior_policy",
    "trials",
    "base_seed",
    "backend",
    "rollouts",
    "reference",
    "output_dir",
    "record_wall_time",
];

impl Default for ConfigFile {
    fn default() -> Self {
        let prior = PsrlPrior::default();
        Self {
            name: "custom".into(),
            width: 5,
            height: 5,
            start: [0, 0],
            goal: None,
            reward_kind: RewardKind::Dense,
            reward_sign: RewardSign::Negative,
            transition_kind: TransitionKind::Deterministic,
            slip_prob_main: 0.8,
            slip_prob_side: 0.1,
            max_steps: 40,
            gamma: 0.9,
            agent: AgentKind::QGreedy,
            epsilon: 1.0,
            epsilon_decay: 0.999,
            epsilon_floor: 0.01,
            warmup_steps: 500,
            learning_rate: 0.5,
            delta: 0.1,
            confidence_scale: 1.0,
            dirichlet_alpha: prior.dirichlet_alpha,
            reward_prior_mean: prior.reward_mean,
            reward_prior_var: prior.reward_var,
            reward_noise_var: prior.noise_var,
            total_episodes: 200,
            convergence_window: 5,
            snapshot_cadence: Cadence::PerEpisode,
            snapshot_behavior_policy: false,
            trials: 40,
            base_seed: 0,
            backend: BackendKind::ExactW1,
            rollouts: 1,
            reference: ReferenceKind::OptimalPolicy,
            output_dir: PathBuf::from("results"),
            record_wall_time: false,
        }
    }
}

/// How policies are represented when measuring distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendConfig {
    ExactW1,
    /// Datasets of `rollouts` episodes per policy, each capped at the environment's step limit.
    Otdd {
        rollouts: usize,
    },
}

/// Validated, typed experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: GridworldSpec,
    pub agent: AgentConfig,
    pub trials: usize,
    pub base_seed: u64,
    pub backend: BackendConfig,
    pub reference: ReferenceKind,
    pub output_dir: PathBuf,
    pub record_wall_time: bool,
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let env = GridworldSpec {
            width: self.width,
            height: self.height,
            start: (self.start[0], self.start[1]),
            goal: match self.goal {
                Some([x, y]) => (x, y),
                None => (self.width.saturating_sub(1), self.height.saturating_sub(1)),
            },
            reward_kind: self.reward_kind,
            transition_kind: self.transition_kind,
            slip_prob_main: self.slip_prob_main,
            slip_prob_side: self.slip_prob_side,
            max_steps: self.max_steps,
            gamma: self.gamma,
            reward_sign: self.reward_sign,
        };
        env.validate().map_err(|e| Error::Config(e.to_string()))?;
        let variant = match self.agent {
            AgentKind::QGreedy => AgentVariant::QGreedy { epsilon: self.epsilon },
            AgentKind::QDecay => AgentVariant::QDecay {
                epsilon0: self.epsilon,
                decay: self.epsilon_decay,
                floor: self.epsilon_floor,
            },
            AgentKind::Ucrl2 => AgentVariant::Ucrl2 { delta: self.delta },
            AgentKind::Psrl => AgentVariant::Psrl {
                prior: PsrlPrior {
                    dirichlet_alpha: self.dirichlet_alpha,
                    reward_mean: self.reward_prior_mean,
                    reward_var: self.reward_prior_var,
                    noise_var: self.reward_noise_var,
                },
            },
        };
        let agent = AgentConfig {
            variant,
            learning_rate: self.learning_rate,
            total_episodes: self.total_episodes,
            convergence_window: self.convergence_window,
            cadence: self.snapshot_cadence,
            snapshot_behavior_policy: self.snapshot_behavior_policy,
            warmup_steps: self.warmup_steps,
            confidence_scale: self.confidence_scale,
        };
        agent.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let backend = match self.backend {
            BackendKind::ExactW1 => BackendConfig::ExactW1,
            BackendKind::Otdd if self.rollouts == 0 => {
                return Err(Error::Config(
                    "rollouts must be at least 1 with the otdd backend".into(),
                ))
            }
            BackendKind::Otdd => BackendConfig::Otdd {
                rollouts: self.rollouts,
            },
        };
        Ok(ExperimentConfig {
            name: self.name.clone(),
            env,
            agent,
            trials: self.trials,
            base_seed: self.base_seed,
            backend,
            reference: self.reference,
            output_dir: self.output_dir.clone(),
            record_wall_time: self.record_wall_time,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Parses a config document, applies `key=value` overrides and deserializes.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(table, overrides)
    }

    /// Reads a config file; an optional `preset` key selects the base the file amends.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_table(table, overrides)
    }

    /// The named preset with overrides applied.
    pub fn from_preset(name: &str, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::new();
        table.insert("preset".into(), toml::Value::String(name.into()));
        Self::from_table(table, overrides)
    }

    /// Returns a copy with `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table, overrides)
    }

    fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self> {
        for item in overrides {
            let (key, value) = parse_override(item)?;
            table.insert(key, value);
        }
        let base = match table.remove("preset") {
            None => ConfigFile::default(),
            Some(toml::Value::String(name)) => preset(&name)?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key `preset`: expected a preset name, got {other}"
                )))
            }
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in table {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            // Check each key on its own so errors can name it.
            let mut probe = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
            probe.insert(key.clone(), value.clone());
            if let Err(e) = ConfigFile::deserialize(toml::Value::Table(probe)) {
                return Err(Error::Config(format!("key `{key}`: {}", e.message())));
            }
            merged.insert(key, value);
        }
        ConfigFile::deserialize(toml::Value::Table(merged)).map_err(|e| Error::Config(e.message().to_string()))
    }
}

/// Splits `key=value`; the value is read as a TOML literal, falling back to a bare string.
pub fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim().to_string();
    if key != "preset" && !CONFIG_KEYS.contains(&key.as_str()) {
        return Err(Error::Config(format!("unknown key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "table1-eps1",
    "table1-eps0",
    "table1-eps0.9-decay",
    "table1-ucrl2",
    "table1-psrl",
    "table2-eps1",
    "table2-eps0",
    "table2-eps0.9-decay",
    "table2-ucrl2",
    "table2-psrl",
    "difficulty-5x5-dense",
    "difficulty-5x5-sparse-hard",
    "difficulty-5x5-sparse-easy",
    "difficulty-15x15-dense",
    "difficulty-15x15-sparse",
    "ucrl-delta",
    "rollout-count",
];

fn set_agent(cfg: &mut ConfigFile, agent: &str) {
    match agent {
        "eps1" => {
            cfg.agent = AgentKind::QGreedy;
            cfg.epsilon = 1.0;
            cfg.learning_rate = 0.15;
        }
        "eps0" => {
            cfg.agent = AgentKind::QGreedy;
            cfg.epsilon = 0.0;
            cfg.learning_rate = 0.35;
        }
        "eps0.9-decay" => {
            cfg.agent = AgentKind::QDecay;
            cfg.epsilon = 0.9;
            cfg.learning_rate = 0.1;
        }
        "ucrl2" => cfg.agent = AgentKind::Ucrl2,
        "psrl" => cfg.agent = AgentKind::Psrl,
        _ => unreachable!("agent names come from the preset table"),
    }
}

/// Tuned defaults shared by every preset.
fn base() -> ConfigFile {
    ConfigFile {
        epsilon_decay: 0.9999,
        epsilon_floor: 0.0001,
        warmup_steps: 500,
        confidence_scale: 0.2,
        dirichlet_alpha: 0.04,
        reward_prior_mean: 0.0,
        reward_prior_var: 10.0,
        reward_noise_var: 0.01,
        ..ConfigFile::default()
    }
}

/// Built-in experiment settings.
///
/// - `table1-*`: deterministic dense 5x5 grid, 200 episodes.
/// - `table2-*`: the slippery variant, 500 episodes.
/// - `difficulty-*`: ε(0.9)-decay Q-learning on five grids; 60 steps, window 50, 3000 episodes.
/// - `ucrl-delta`: UCRL2 with 15 steps per episode.
/// - `rollout-count`: the slippery grid measured with the OTDD backend.
pub fn preset(name: &str) -> Result<ConfigFile> {
    let mut cfg = base();
    cfg.name = name.to_string();
    if let Some(agent) = name.strip_prefix("table1-") {
        if !["eps1", "eps0", "eps0.9-decay", "ucrl2", "psrl"].contains(&agent) {
            return Err(unknown_preset(name));
        }
        set_agent(&mut cfg, agent);
    } else if let Some(agent) = name.strip_prefix("table2-") {
        if !["eps1", "eps0", "eps0.9-decay", "ucrl2", "psrl"].contains(&agent) {
            return Err(unknown_preset(name));
        }
        set_agent(&mut cfg, agent);
        cfg.transition_kind = TransitionKind::Slip;
        cfg.total_episodes = 500;
    } else if let Some(task) = name.strip_prefix("difficulty-") {
        set_agent(&mut cfg, "eps0.9-decay");
        cfg.learning_rate = 0.5;
        cfg.max_steps = 60;
        cfg.convergence_window = 50;
        cfg.total_episodes = 3000;
        let (size, kind, goal) = match task {
            "5x5-dense" => (5, RewardKind::Dense, None),
            "5x5-sparse-hard" => (5, RewardKind::Sparse, None),
            "5x5-sparse-easy" => (5, RewardKind::Sparse, Some([2, 2])),
            "15x15-dense" => (15, RewardKind::Dense, None),
            "15x15-sparse" => (15, RewardKind::Sparse, None),
            _ => return Err(unknown_preset(name)),
        };
        cfg.width = size;
        cfg.height = size;
        cfg.reward_kind = kind;
        cfg.goal = goal;
    } else if name == "ucrl-delta" {
        set_agent(&mut cfg, "ucrl2");
        cfg.max_steps = 15;
        cfg.confidence_scale = 0.1;
    } else if name == "rollout-count" {
        set_agent(&mut cfg, "eps0.9-decay");
        cfg.transition_kind = TransitionKind::Slip;
        cfg.total_episodes = 500;
        cfg.backend = BackendKind::Otdd;
        cfg.rollouts = 1;
    } else {
        return Err(unknown_preset(name));
    }
    Ok(cfg)
}

fn unknown_preset(name: &str) -> Error {
    Error::Config(format!(
        "unknown preset `{name}`; known presets: {}",
        PRESETS.join(", ")
    ))
}
