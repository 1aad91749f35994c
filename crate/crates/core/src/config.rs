//! Experiment configuration: TOML schema, validation, environment
//! construction, and the bundled presets.
//!
//! A config names an environment (drifting combination lock, the 3-state
//! chain instance, or its drifting lower-bound schedule), a list of agents,
//! and the run shape (`T`, `trials`, `base_seed`). Everything random —
//! environment construction included — derives from `base_seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentConfig, AgentKind, EpochSpec};
use crate::env::{
    abrupt_schedule, build_combination_lock, build_hard_instance, gradual_schedule,
    lower_bound_schedule, stationary_schedule, EnvError, Environment, HardInstanceSpec,
    InitialStateRule,
};
use crate::rng::label_hash;
use crate::schedule::ScheduleKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {detail}")]
    Invalid { field: String, detail: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("unknown preset `{0}` (available: paper-abrupt, paper-gradual)")]
    UnknownPreset(String),
}

fn invalid(field: impl Into<String>, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), detail: detail.into() }
}

/// Which environment the experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    /// Drifting combination-lock family (uniform initial states).
    CombinationLock {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        dim: usize,
        /// Number of distinct lock regimes the schedule rotates through.
        num_chains: usize,
        schedule: ScheduleKind,
    },
    /// Stationary 3-state chain instance with a sign-vector action cube.
    HardInstance { dim: usize, horizon: usize },
    /// Chain instance with the sign vector redrawn on a budget-driven
    /// interval schedule.
    LowerBound { dim: usize, horizon: usize, budget: f64 },
}

impl EnvConfig {
    pub fn horizon(&self) -> usize {
        match *self {
            EnvConfig::CombinationLock { horizon, .. }
            | EnvConfig::HardInstance { horizon, .. }
            | EnvConfig::LowerBound { horizon, .. } => horizon,
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_out_dir() -> String {
    "results".to_string()
}

fn default_trials() -> usize {
    1
}

/// Everything one experiment run needs. `T` is the field name for the total
/// step budget; episodes are `T / H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "T")]
    pub total_steps: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub env: EnvConfig,
    pub agents: Vec<AgentConfig>,
}

impl ExperimentConfig {
    pub fn horizon(&self) -> usize {
        self.env.horizon()
    }

    pub fn num_episodes(&self) -> usize {
        self.total_steps / self.horizon().max(1)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable 64-bit fingerprint of the full configuration, recorded in
    /// every trace so outputs can be matched back to their settings.
    pub fn stable_hash(&self) -> u64 {
        label_hash(&serde_json::to_string(self).expect("config serializes"))
    }

    /// Field-level validation; every error names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let h = self.horizon();
        if h == 0 {
            return Err(invalid("env.horizon", "must be at least 1"));
        }
        if self.total_steps == 0 || !self.total_steps.is_multiple_of(h) {
            return Err(invalid(
                "T",
                format!("{} is not a positive multiple of the horizon {h}", self.total_steps),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        let mut labels = std::collections::HashSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let field = |name: &str| format!("agents[{i}].{name}");
            if !labels.insert(agent.label().to_string()) {
                return Err(invalid(
                    field("label"),
                    format!("duplicate label `{}` (labels name output files)", agent.label()),
                ));
            }
            let label_ok = !agent.label().is_empty()
                && agent
                    .label()
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
            if !label_ok {
                return Err(invalid(
                    field("label"),
                    format!(
                        "label `{}` must be nonempty and use only [A-Za-z0-9_.-] (labels name output files)",
                        agent.label()
                    ),
                ));
            }
            if let Some(EpochSpec::Steps(w)) = agent.epoch {
                if w < h || w % h != 0 {
                    return Err(invalid(
                        field("epoch"),
                        format!("{w} steps is not a positive multiple of the horizon {h}"),
                    ));
                }
            }
            if agent.epoch.is_some() && agent.kind != AgentKind::LsviUcbRestart {
                return Err(invalid(
                    field("epoch"),
                    format!(
                        "only lsvi_ucb_restart takes an epoch (agent is {})",
                        agent.kind.as_str()
                    ),
                ));
            }
            if !(0.0..=1.0).contains(&agent.epsilon) {
                return Err(invalid(field("epsilon"), format!("{} outside [0, 1]", agent.epsilon)));
            }
            // NaN must fail this check, hence the explicit ordering test.
            if agent.block_coeff.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(invalid(
                    field("block_coeff"),
                    format!("{} is not positive", agent.block_coeff),
                ));
            }
            if let Some(w) = agent.forced_window {
                if agent.kind != AgentKind::AdaLsviUcbRestart {
                    return Err(invalid(
                        field("forced_window"),
                        "only ada_lsvi_ucb_restart takes a forced window".to_string(),
                    ));
                }
                if w < h || w % h != 0 {
                    return Err(invalid(
                        field("forced_window"),
                        format!("{w} steps is not a positive multiple of the horizon {h}"),
                    ));
                }
            }
        }
        match &self.env {
            EnvConfig::CombinationLock {
                num_states,
                num_actions,
                dim,
                num_chains,
                schedule,
                ..
            } => {
                if *num_chains == 0 {
                    return Err(invalid("env.num_chains", "must be at least 1"));
                }
                if *num_states == 0 || *num_actions == 0 || *dim == 0 {
                    return Err(invalid(
                        "env",
                        "num_states, num_actions, and dim must all be positive",
                    ));
                }
                match schedule {
                    ScheduleKind::AbruptCycle { period }
                    | ScheduleKind::GradualCycle { period } => {
                        if *period == 0 {
                            return Err(invalid("env.schedule.period", "must be at least 1"));
                        }
                    }
                    ScheduleKind::Stationary => {}
                    ScheduleKind::Intervals { .. } => {
                        return Err(invalid(
                            "env.schedule.kind",
                            "the intervals schedule is reserved for the lower-bound chain instance",
                        ));
                    }
                }
            }
            EnvConfig::HardInstance { dim, .. } => {
                if *dim < 4 {
                    return Err(invalid("env.dim", format!("{dim} < 4 leaves no action cube")));
                }
            }
            EnvConfig::LowerBound { dim, budget, .. } => {
                if *dim < 4 {
                    return Err(invalid("env.dim", format!("{dim} < 4 leaves no action cube")));
                }
                // NaN must fail this check, hence the explicit ordering test.
                if budget.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                    return Err(invalid("env.budget", format!("{budget} is not positive")));
                }
            }
        }
        Ok(())
    }

    /// Builds the configured environment. Construction randomness (lock
    /// distractor rewards, sign-vector draws) is keyed by `base_seed`.
    pub fn build_environment(&self) -> Result<Environment, ConfigError> {
        let episodes = self.num_episodes();
        match &self.env {
            EnvConfig::CombinationLock {
                num_states,
                num_actions,
                horizon,
                dim,
                num_chains,
                schedule,
            } => {
                let family = build_combination_lock(
                    *num_states,
                    *num_actions,
                    *horizon,
                    *dim,
                    *num_chains,
                    self.base_seed,
                )?;
                let params = match schedule {
                    ScheduleKind::Stationary => stationary_schedule(&family, episodes)?,
                    ScheduleKind::AbruptCycle { period } => {
                        abrupt_schedule(&family, *period, episodes)?
                    }
                    ScheduleKind::GradualCycle { period } => {
                        gradual_schedule(&family, *period, episodes)?
                    }
                    ScheduleKind::Intervals { .. } => {
                        return Err(invalid(
                            "env.schedule.kind",
                            "the intervals schedule is reserved for the lower-bound chain instance",
                        ));
                    }
                };
                Ok(Environment::new(params, InitialStateRule::Uniform)?)
            }
            EnvConfig::HardInstance { dim, horizon } => {
                let spec = HardInstanceSpec {
                    dim: *dim,
                    horizon: *horizon,
                    total_steps: self.total_steps,
                };
                Ok(build_hard_instance(spec, self.base_seed)?)
            }
            EnvConfig::LowerBound { dim, horizon, budget } => {
                Ok(lower_bound_schedule(*budget, *dim, *horizon, episodes, self.base_seed)?)
            }
        }
    }

    /// Bundled presets reproducing the headline comparison: `paper-abrupt`
    /// and `paper-gradual`.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let schedule = match name {
            "paper-abrupt" => ScheduleKind::AbruptCycle { period: 100 },
            "paper-gradual" => ScheduleKind::GradualCycle { period: 100 },
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(Self::bundled_preset(name, schedule))
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["paper-abrupt", "paper-gradual"]
    }

    fn bundled_preset(name: &str, schedule: ScheduleKind) -> Self {
        use crate::agents::BetaPolicy;
        let beta = BetaPolicy::ExperimentScaled { c: 1.0, scale: 0.001 };
        let mut restart = AgentConfig::of_kind(AgentKind::LsviUcbRestart);
        // The drift period is 100 episodes; restarting every 100 episodes
        // (1000 steps) is the variation-aware tuning of the restart window.
        restart.epoch = Some(EpochSpec::Steps(1000));
        restart.beta = Some(beta);
        let mut ada = AgentConfig::of_kind(AgentKind::AdaLsviUcbRestart);
        ada.beta = Some(beta);
        ada.block_coeff = 0.2;
        let mut plain = AgentConfig::of_kind(AgentKind::LsviUcb);
        plain.beta = Some(beta);
        let mut eps = AgentConfig::of_kind(AgentKind::EpsilonGreedy);
        eps.epsilon = 0.05;
        let random = AgentConfig::of_kind(AgentKind::Random);
        ExperimentConfig {
            total_steps: 20000,
            trials: 10,
            base_seed: 42,
            out_dir: "results".to_string(),
            preset: Some(name.to_string()),
            env: EnvConfig::CombinationLock {
                num_states: 15,
                num_actions: 7,
                horizon: 10,
                dim: 10,
                num_chains: 5,
                schedule,
            },
            agents: vec![restart, ada, plain, eps, random],
        }
    }
}
