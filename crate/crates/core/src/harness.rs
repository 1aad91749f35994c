//! Ground-truth planning and the experiment harness.
//!
//! Regret here is *exact*, not estimated: every episode the harness plans
//! the drifting MDP with backward induction ([`optimal_values`]), evaluates
//! the policy the agent is about to play ([`policy_value`]), and records
//! `V*₁(s₁) − V^π₁(s₁)`. Realized rewards are logged separately — they are
//! what the cumulative-reward curves plot.
//!
//! Determinism contract: every random draw of a run comes from a stream
//! keyed by `(trial seed, agent label, purpose, episode)`, so results are
//! independent of thread scheduling, `--jobs`, and which other agents run.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView1, ArrayView3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agents::{
    epoch_size_known, epoch_size_unknown, AgentConfig, AgentError, AgentKind, BetaPolicy,
    EpisodeAgent, EpochFormula, EpochSpec, LocalVariation, LsviAgent, RandomAgent,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{EnvError, Environment};
use crate::linmdp::{LinearMdpParams, MdpError, TabularSnapshot};
use crate::rng::{keyed_rng, label_hash, StreamPurpose};
use crate::schedule::EpisodeKey;
use crate::tuner::{AdaAgent, BlockRecord, TunerError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no planning data for episode {episode}")]
    MissingPlanningData { episode: usize },
    #[error("policy snapshot invalid at step {step}, state {state}: {detail}")]
    InvalidPolicy { step: usize, state: usize, detail: String },
    #[error("thread pool: {detail}")]
    Threads { detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("agent `{agent}` aborted at episode {episode}: {source}")]
    Aborted {
        agent: String,
        episode: usize,
        #[source]
        source: Box<HarnessError>,
        /// Everything recorded before the failure.
        partial: Box<RegretTrace>,
    },
}

/// The policy an agent commits to for one episode: either an action per
/// `(step, state)` or a full distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySnapshot {
    Deterministic(Array2<usize>),
    Stochastic(Array3<f64>),
}

impl PolicySnapshot {
    pub fn horizon(&self) -> usize {
        match self {
            PolicySnapshot::Deterministic(t) => t.dim().0,
            PolicySnapshot::Stochastic(t) => t.dim().0,
        }
    }

    /// Checks shape against the MDP and, for stochastic policies, that every
    /// row is a probability vector (sums to 1 within 1e-12, no negatives).
    pub fn validate(&self, num_actions: usize) -> Result<(), HarnessError> {
        match self {
            PolicySnapshot::Deterministic(table) => {
                for ((h, s), &a) in table.indexed_iter() {
                    if a >= num_actions {
                        return Err(HarnessError::InvalidPolicy {
                            step: h,
                            state: s,
                            detail: format!("action {a} out of range (< {num_actions})"),
                        });
                    }
                }
            }
            PolicySnapshot::Stochastic(table) => {
                if table.dim().2 != num_actions {
                    return Err(HarnessError::InvalidPolicy {
                        step: 0,
                        state: 0,
                        detail: format!(
                            "action dimension {} does not match the MDP's {num_actions}",
                            table.dim().2
                        ),
                    });
                }
                for h in 0..table.dim().0 {
                    for s in 0..table.dim().1 {
                        let row = table.slice(ndarray::s![h, s, ..]);
                        let sum: f64 = row.sum();
                        if (sum - 1.0).abs() > 1e-12 {
                            return Err(HarnessError::InvalidPolicy {
                                step: h,
                                state: s,
                                detail: format!("row sums to {sum}"),
                            });
                        }
                        if row.iter().any(|&p| p < 0.0) {
                            return Err(HarnessError::InvalidPolicy {
                                step: h,
                                state: s,
                                detail: "negative probability".to_string(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Backward induction on a tabular episode: returns the optimal value table
/// `V*` of shape `(H+1, S)` (row `H` is the zero terminal value) and the
/// greedy optimal policy `(H, S)` with ties broken toward the lowest action
/// index.
pub fn optimal_values(snapshot: &TabularSnapshot) -> (Array2<f64>, Array2<usize>) {
    let (hh, ss, aa) = (snapshot.horizon(), snapshot.num_states(), snapshot.num_actions());
    let mut values = Array2::zeros((hh + 1, ss));
    let mut policy = Array2::zeros((hh, ss));
    for h in (0..hh).rev() {
        let next = values.row(h + 1).to_owned();
        for s in 0..ss {
            let mut best_value = f64::NEG_INFINITY;
            let mut best_action = 0;
            for a in 0..aa {
                let p = snapshot.transitions.slice(ndarray::s![h, s, a, ..]);
                let q = snapshot.rewards[(h, s, a)] + p.dot(&next);
                if q > best_value {
                    best_value = q;
                    best_action = a;
                }
            }
            values[(h, s)] = best_value;
            policy[(h, s)] = best_action;
        }
    }
    (values, policy)
}

/// Exact value table `V^π` of shape `(H+1, S)` for a fixed policy;
/// stochastic policies evaluate the action-averaged Bellman backup.
pub fn policy_values(snapshot: &TabularSnapshot, policy: &PolicySnapshot) -> Array2<f64> {
    let (hh, ss, aa) = (snapshot.horizon(), snapshot.num_states(), snapshot.num_actions());
    let mut values = Array2::zeros((hh + 1, ss));
    for h in (0..hh).rev() {
        let next = values.row(h + 1).to_owned();
        for s in 0..ss {
            let q_of = |a: usize| {
                let p = snapshot.transitions.slice(ndarray::s![h, s, a, ..]);
                snapshot.rewards[(h, s, a)] + p.dot(&next)
            };
            values[(h, s)] = match policy {
                PolicySnapshot::Deterministic(table) => q_of(table[(h, s)]),
                PolicySnapshot::Stochastic(table) => (0..aa)
                    .map(|a| {
                        let w = table[(h, s, a)];
                        if w == 0.0 {
                            0.0
                        } else {
                            w * q_of(a)
                        }
                    })
                    .sum(),
            };
        }
    }
    values
}

/// `V^π₁(s₁)` — the exact episode value of `policy` from `initial_state`.
pub fn policy_value(
    snapshot: &TabularSnapshot,
    policy: &PolicySnapshot,
    initial_state: usize,
) -> f64 {
    policy_values(snapshot, policy)[(0, initial_state)]
}

/// Planning artifacts for one distinct episode parameterization.
#[derive(Debug, Clone)]
pub struct PlanningData {
    pub tabular: TabularSnapshot,
    /// `(H+1, S)` optimal values.
    pub v_star: Array2<f64>,
    /// `(H, S)` greedy optimal policy.
    pub optimal_policy: Array2<usize>,
}

/// Planning data deduplicated over the episode sequence: drifting schedules
/// revisit the same parameterization many times, so plan each distinct key
/// once.
#[derive(Debug, Clone, Default)]
pub struct PlanningCache {
    map: HashMap<EpisodeKey, Arc<PlanningData>>,
}

impl PlanningCache {
    pub fn build(params: &LinearMdpParams) -> Result<Self, MdpError> {
        let mut map = HashMap::new();
        for k in 0..params.num_episodes() {
            let key = params.episode_key(k);
            if map.contains_key(&key) {
                continue;
            }
            let tabular = params.to_tabular(k)?;
            let (v_star, optimal_policy) = optimal_values(&tabular);
            map.insert(key, Arc::new(PlanningData { tabular, v_star, optimal_policy }));
        }
        Ok(PlanningCache { map })
    }

    pub fn get(&self, params: &LinearMdpParams, episode: usize) -> Option<&Arc<PlanningData>> {
        self.map.get(&params.episode_key(episode))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// One episode's accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Exact optimal value from this episode's start state.
    pub v_star: f64,
    /// Exact value of the policy the agent played.
    pub v_pi: f64,
    /// Reward actually collected.
    pub realized_reward: f64,
    pub cum_regret: f64,
    pub cum_reward: f64,
}

/// Full per-episode record of one agent's trial.
#[derive(Debug, Clone, Serialize)]
pub struct RegretTrace {
    pub agent_label: String,
    pub agent_kind: String,
    /// Trial-level seed (base seed + trial index).
    pub seed: u64,
    pub config_hash: u64,
    pub records: Vec<EpisodeRecord>,
    pub wall_clock_s: f64,
    /// Per-block diagnostics when the agent is meta-tuned.
    pub block_log: Option<Vec<BlockRecord>>,
}

/// Builds the runtime agent an [`AgentConfig`] describes, resolving
/// formula-based epochs against the environment's ground-truth variation.
pub fn build_agent(
    cfg: &AgentConfig,
    env: &Environment,
    trial_seed: u64,
) -> Result<Box<dyn EpisodeAgent>, HarnessError> {
    let params = env.params();
    let features = params.features().clone();
    let horizon = params.horizon();
    let num_episodes = params.num_episodes();
    let total_steps = num_episodes * horizon;
    let dim = params.dim();
    let label = cfg.label().to_string();
    let beta = cfg.beta.unwrap_or_else(BetaPolicy::experiment_default);

    let resolve_epoch = |spec: Option<EpochSpec>| -> Result<usize, HarnessError> {
        match spec.unwrap_or(EpochSpec::Formula(EpochFormula::Known)) {
            EpochSpec::Steps(w) => Ok(w),
            EpochSpec::Formula(f) => {
                let budgets = params.variation_budgets()?;
                Ok(match f {
                    EpochFormula::Known => {
                        epoch_size_known(budgets.b_total, total_steps, dim, horizon)
                    }
                    EpochFormula::Unknown => {
                        epoch_size_unknown(budgets.b_total, total_steps, dim, horizon)
                    }
                })
            }
        }
    };
    let local_variation = if beta.needs_local_variation() {
        Some(Arc::new(LocalVariation::from_params(params)?))
    } else {
        None
    };

    let agent: Box<dyn EpisodeAgent> = match cfg.kind {
        AgentKind::LsviUcb => Box::new(LsviAgent::new(
            label,
            features,
            horizon,
            num_episodes,
            usize::MAX,
            beta,
            None,
            total_steps,
            local_variation,
        )?),
        AgentKind::LsviUcbRestart => Box::new(LsviAgent::new(
            label,
            features,
            horizon,
            num_episodes,
            resolve_epoch(cfg.epoch)?,
            beta,
            None,
            total_steps,
            local_variation,
        )?),
        AgentKind::EpsilonGreedy => Box::new(LsviAgent::new(
            label,
            features,
            horizon,
            num_episodes,
            usize::MAX,
            beta,
            Some(cfg.epsilon),
            total_steps,
            None,
        )?),
        AgentKind::Random => {
            Box::new(RandomAgent::new(label, horizon, params.num_states(), params.num_actions()))
        }
        AgentKind::AdaLsviUcbRestart => Box::new(AdaAgent::new(
            label,
            features,
            horizon,
            num_episodes,
            cfg.block_coeff,
            beta,
            cfg.forced_window,
            trial_seed,
        )?),
    };
    Ok(agent)
}

/// Runs one agent for every episode of the environment, recording exact
/// per-episode regret and realized reward. On failure the partial trace is
/// preserved inside the error.
pub fn run_trial_with(
    env: &Environment,
    agent: &mut dyn EpisodeAgent,
    agent_kind: &str,
    trial_seed: u64,
    cache: &PlanningCache,
    config_hash: u64,
) -> Result<RegretTrace, HarnessError> {
    let params = env.params();
    let num_episodes = params.num_episodes();
    let num_actions = params.num_actions();
    let label_key = label_hash(agent.label());
    let started = Instant::now();

    let mut records = Vec::with_capacity(num_episodes);
    let mut cum_regret = 0.0;
    let mut cum_reward = 0.0;
    for k in 0..num_episodes {
        let episode = (|| -> Result<EpisodeRecord, HarnessError> {
            let env_rng = keyed_rng(trial_seed, label_key, StreamPurpose::EnvEpisode, k as u64);
            let mut agent_rng =
                keyed_rng(trial_seed, label_key, StreamPurpose::AgentEpisode, k as u64);
            let mut st = env.reset(k, env_rng)?;
            let data =
                cache.get(params, k).ok_or(HarnessError::MissingPlanningData { episode: k })?;
            let snapshot = agent.begin_episode(k, &mut agent_rng)?;
            snapshot.validate(num_actions)?;
            let v_star = data.v_star[(0, st.state)];
            let v_pi = policy_value(&data.tabular, &snapshot, st.state);
            let mut realized = 0.0;
            while !st.done {
                let (h, s) = (st.step, st.state);
                let a = agent.act(h, s, &mut agent_rng);
                let step = env.step(&mut st, a)?;
                agent.observe(h, s, a, step.reward, step.next_state)?;
                realized += step.reward;
            }
            agent.end_episode(k)?;
            Ok(EpisodeRecord {
                episode: k,
                v_star,
                v_pi,
                realized_reward: realized,
                cum_regret: 0.0,
                cum_reward: 0.0,
            })
        })();
        match episode {
            Ok(mut record) => {
                cum_regret += record.v_star - record.v_pi;
                cum_reward += record.realized_reward;
                record.cum_regret = cum_regret;
                record.cum_reward = cum_reward;
                records.push(record);
            }
            Err(source) => {
                let partial = RegretTrace {
                    agent_label: agent.label().to_string(),
                    agent_kind: agent_kind.to_string(),
                    seed: trial_seed,
                    config_hash,
                    records,
                    wall_clock_s: started.elapsed().as_secs_f64(),
                    block_log: agent.block_log().map(<[BlockRecord]>::to_vec),
                };
                return Err(HarnessError::Aborted {
                    agent: agent.label().to_string(),
                    episode: k,
                    source: Box::new(source),
                    partial: Box::new(partial),
                });
            }
        }
    }
    Ok(RegretTrace {
        agent_label: agent.label().to_string(),
        agent_kind: agent_kind.to_string(),
        seed: trial_seed,
        config_hash,
        records,
        wall_clock_s: started.elapsed().as_secs_f64(),
        block_log: agent.block_log().map(<[BlockRecord]>::to_vec),
    })
}

/// [`run_trial_with`] for a declaratively configured agent.
pub fn run_trial(
    env: &Environment,
    cfg: &AgentConfig,
    trial_seed: u64,
    cache: &PlanningCache,
    config_hash: u64,
) -> Result<RegretTrace, HarnessError> {
    let mut agent = build_agent(cfg, env, trial_seed)?;
    run_trial_with(env, agent.as_mut(), cfg.kind.as_str(), trial_seed, cache, config_hash)
}

/// Mean/std curves of one agent across trials.
#[derive(Debug, Clone, Serialize)]
pub struct AgentCurves {
    pub label: String,
    pub kind: String,
    pub mean_cum_reward: Vec<f64>,
    pub std_cum_reward: Vec<f64>,
    pub mean_cum_regret: Vec<f64>,
    pub std_cum_regret: Vec<f64>,
    pub wall_clock_mean_s: f64,
    pub wall_clock_std_s: f64,
    /// `(trial index, block records)` for meta-tuned agents.
    pub block_logs: Vec<(usize, Vec<BlockRecord>)>,
}

impl AgentCurves {
    pub fn final_mean_cum_reward(&self) -> f64 {
        *self.mean_cum_reward.last().unwrap_or(&0.0)
    }

    pub fn final_std_cum_reward(&self) -> f64 {
        *self.std_cum_reward.last().unwrap_or(&0.0)
    }

    pub fn final_mean_cum_regret(&self) -> f64 {
        *self.mean_cum_regret.last().unwrap_or(&0.0)
    }

    pub fn final_std_cum_regret(&self) -> f64 {
        *self.std_cum_regret.last().unwrap_or(&0.0)
    }
}

/// Aggregated output of [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResults {
    pub num_episodes: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub config_hash: u64,
    /// One entry per configured agent, in configuration order.
    pub agents: Vec<AgentCurves>,
    /// Full traces, retained only when requested.
    pub traces: Option<Vec<RegretTrace>>,
}

/// Sample mean and sample standard deviation (n−1 denominator; 0 for a
/// single sample).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn aggregate_curves(label: &str, kind: &str, traces: &[RegretTrace]) -> AgentCurves {
    let episodes = traces.first().map_or(0, |t| t.records.len());
    let mut curves = AgentCurves {
        label: label.to_string(),
        kind: kind.to_string(),
        mean_cum_reward: Vec::with_capacity(episodes),
        std_cum_reward: Vec::with_capacity(episodes),
        mean_cum_regret: Vec::with_capacity(episodes),
        std_cum_regret: Vec::with_capacity(episodes),
        wall_clock_mean_s: 0.0,
        wall_clock_std_s: 0.0,
        block_logs: Vec::new(),
    };
    let mut rewards = Vec::with_capacity(traces.len());
    let mut regrets = Vec::with_capacity(traces.len());
    for k in 0..episodes {
        rewards.clear();
        regrets.clear();
        for trace in traces {
            rewards.push(trace.records[k].cum_reward);
            regrets.push(trace.records[k].cum_regret);
        }
        let (m, s) = mean_std(&rewards);
        curves.mean_cum_reward.push(m);
        curves.std_cum_reward.push(s);
        let (m, s) = mean_std(&regrets);
        curves.mean_cum_regret.push(m);
        curves.std_cum_regret.push(s);
    }
    let clocks: Vec<f64> = traces.iter().map(|t| t.wall_clock_s).collect();
    let (m, s) = mean_std(&clocks);
    curves.wall_clock_mean_s = m;
    curves.wall_clock_std_s = s;
    for (trial, trace) in traces.iter().enumerate() {
        if let Some(log) = &trace.block_log {
            curves.block_logs.push((trial, log.clone()));
        }
    }
    curves
}

/// Runs every configured agent for `trials` trials (seeds `base_seed + i`)
/// and aggregates mean/std curves. `jobs` bounds the worker threads
/// (`None` = library default); results are identical for any value.
pub fn run_experiment(
    config: &ExperimentConfig,
    jobs: Option<usize>,
    keep_traces: bool,
) -> Result<ExperimentResults, HarnessError> {
    config.validate()?;
    let env = config.build_environment()?;
    let cache = PlanningCache::build(env.params())?;
    let config_hash = config.stable_hash();
    let trials = config.trials;

    let units: Vec<(usize, usize)> =
        (0..config.agents.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let run_all = || -> Result<Vec<RegretTrace>, HarnessError> {
        units
            .par_iter()
            .map(|&(a, t)| {
                let trial_seed = config.base_seed.wrapping_add(t as u64);
                run_trial(&env, &config.agents[a], trial_seed, &cache, config_hash)
            })
            .collect()
    };
    let traces = match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Threads { detail: e.to_string() })?;
            pool.install(run_all)?
        }
        None => run_all()?,
    };

    let mut agents = Vec::with_capacity(config.agents.len());
    for (a, cfg) in config.agents.iter().enumerate() {
        let slice = &traces[a * trials..(a + 1) * trials];
        agents.push(aggregate_curves(cfg.label(), cfg.kind.as_str(), slice));
    }
    Ok(ExperimentResults {
        num_episodes: env.params().num_episodes(),
        trials,
        base_seed: config.base_seed,
        config_hash,
        agents,
        traces: keep_traces.then_some(traces),
    })
}

/// 17-significant-digit float formatting — enough to round-trip any f64, so
/// identical results serialize to identical bytes.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    file.write_all(contents.as_bytes())
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Writes one curve file per agent
/// (`episode,mean_cum_reward,std_cum_reward,mean_cum_regret,std_cum_regret`),
/// per-block diagnostics for meta-tuned agents, and `summary.csv` with the
/// final numbers and wall-clock statistics (rows in configuration order).
/// Returns the paths written.
pub fn export_csv(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    for agent in &results.agents {
        let mut out = String::with_capacity(results.num_episodes * 96);
        out.push_str("episode,mean_cum_reward,std_cum_reward,mean_cum_regret,std_cum_regret\n");
        for k in 0..agent.mean_cum_reward.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k,
                format_float(agent.mean_cum_reward[k]),
                format_float(agent.std_cum_reward[k]),
                format_float(agent.mean_cum_regret[k]),
                format_float(agent.std_cum_regret[k]),
            ));
        }
        let path = dir.join(format!("{}.csv", agent.label));
        write_file(&path, &out)?;
        written.push(path);

        if !agent.block_logs.is_empty() {
            let mut out = String::new();
            out.push_str("trial,block,arm,window_steps,block_reward,u\n");
            for (trial, log) in &agent.block_logs {
                for rec in log {
                    let u = rec.u.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(";");
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        trial,
                        rec.block,
                        rec.arm,
                        rec.window_steps,
                        format_float(rec.block_reward),
                        u
                    ));
                }
            }
            let path = dir.join(format!("{}_blocks.csv", agent.label));
            write_file(&path, &out)?;
            written.push(path);
        }
    }

    let mut out = String::new();
    out.push_str(
        "agent,kind,final_mean_cum_reward,final_std_cum_reward,final_mean_cum_regret,final_std_cum_regret,mean_wall_clock_s,std_wall_clock_s\n",
    );
    for agent in &results.agents {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            agent.label,
            agent.kind,
            format_float(agent.final_mean_cum_reward()),
            format_float(agent.final_std_cum_reward()),
            format_float(agent.final_mean_cum_regret()),
            format_float(agent.final_std_cum_regret()),
            format_float(agent.wall_clock_mean_s),
            format_float(agent.wall_clock_std_s),
        ));
    }
    let path = dir.join("summary.csv");
    write_file(&path, &out)?;
    written.push(path);

    if let Some(traces) = &results.traces {
        let json = serde_json::to_string_pretty(traces).expect("traces serialize");
        let path = dir.join("traces.json");
        write_file(&path, &json)?;
        written.push(path);
    }
    Ok(written)
}

/// Reference agent that plays each episode's exact optimal policy — used to
/// pin down the zero line of the regret accounting.
pub struct OracleAgent {
    label: String,
    params: LinearMdpParams,
    cache: Arc<PlanningCache>,
    current: Option<Arc<PlanningData>>,
}

impl OracleAgent {
    pub fn new(label: String, params: LinearMdpParams, cache: Arc<PlanningCache>) -> Self {
        OracleAgent { label, params, cache, current: None }
    }
}

impl EpisodeAgent for OracleAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn begin_episode(
        &mut self,
        episode: usize,
        _rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<PolicySnapshot, AgentError> {
        let data = self
            .cache
            .get(&self.params, episode)
            .expect("oracle cache covers every episode")
            .clone();
        let policy = data.optimal_policy.clone();
        self.current = Some(data);
        Ok(PolicySnapshot::Deterministic(policy))
    }

    fn act(&self, step: usize, state: usize, _rng: &mut rand_chacha::ChaCha8Rng) -> usize {
        self.current.as_ref().expect("episode begun").optimal_policy[(step, state)]
    }

    fn observe(
        &mut self,
        _: usize,
        _: usize,
        _: usize,
        _: f64,
        _: usize,
    ) -> Result<(), AgentError> {
        Ok(())
    }

    fn end_episode(&mut self, _episode: usize) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Convenience wrapper over a raw stochastic table, mostly for tests.
pub fn uniform_policy(horizon: usize, num_states: usize, num_actions: usize) -> PolicySnapshot {
    PolicySnapshot::Stochastic(Array3::from_elem(
        (horizon, num_states, num_actions),
        1.0 / num_actions as f64,
    ))
}

/// View of a stochastic snapshot's table, for diagnostics.
pub fn stochastic_table(policy: &PolicySnapshot) -> Option<ArrayView3<'_, f64>> {
    match policy {
        PolicySnapshot::Stochastic(t) => Some(t.view()),
        PolicySnapshot::Deterministic(_) => None,
    }
}

/// Greedy row helper shared by diagnostics.
pub fn row_max(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        abrupt_schedule, build_combination_lock, build_hard_instance, stationary_schedule,
        HardInstanceSpec, InitialStateRule,
    };

    fn small_env() -> Environment {
        let family = build_combination_lock(6, 3, 4, 5, 2, 13).unwrap();
        let params = abrupt_schedule(&family, 10, 40).unwrap();
        Environment::new(params, InitialStateRule::Uniform).unwrap()
    }

    #[test]
    fn horizon_one_optimum_is_the_best_immediate_reward() {
        let family = build_combination_lock(5, 3, 1, 4, 1, 3).unwrap();
        let params = stationary_schedule(&family, 4).unwrap();
        let snap = params.to_tabular(0).unwrap();
        let (v, policy) = optimal_values(&snap);
        for s in 0..5 {
            let best = (0..3).map(|a| snap.rewards[(0, s, a)]).fold(f64::NEG_INFINITY, f64::max);
            assert!((v[(0, s)] - best).abs() < 1e-15);
            assert_eq!(v[(1, s)], 0.0);
            let a = policy[(0, s)];
            assert!((snap.rewards[(0, s, a)] - best).abs() < 1e-15);
        }
    }

    #[test]
    fn chain_instance_optimal_value_is_exact() {
        let spec = HardInstanceSpec { dim: 7, horizon: 10, total_steps: 10240 };
        let env = build_hard_instance(spec, 5).unwrap();
        let snap = env.params().to_tabular(0).unwrap();
        let (v, _) = optimal_values(&snap);
        // From the start state the best action reaches the absorbing paying
        // state with probability 0.375, which then pays 1 for each of the 9
        // remaining steps: V*₁(s₀) = 9·0.375 = 3.375 exactly.
        assert_eq!(v[(0, 0)], 3.375);
        // The uniform policy averages the alignment terms away: 9·0.25.
        let uniform = uniform_policy(10, 3, snap.num_actions());
        let value = policy_value(&snap, &uniform, 0);
        assert!((value - 2.25).abs() < 1e-12, "uniform value {value}");
    }

    #[test]
    fn greedy_optimal_policy_evaluates_to_the_optimal_value() {
        let env = small_env();
        for k in [0, 10, 25] {
            let snap = env.params().to_tabular(k).unwrap();
            let (v, policy) = optimal_values(&snap);
            let value = policy_value(&snap, &PolicySnapshot::Deterministic(policy), 2);
            assert!((value - v[(0, 2)]).abs() < 1e-12);
        }
    }

    #[test]
    fn planning_cache_deduplicates_by_episode_key() {
        let env = small_env();
        let cache = PlanningCache::build(env.params()).unwrap();
        // 40 episodes, period 10, 2 regimes → 2 distinct parameterizations.
        assert_eq!(cache.len(), 2);
        assert!(cache.get(env.params(), 0).is_some());
        assert!(cache.get(env.params(), 39).is_some());
    }

    #[test]
    fn oracle_agent_collects_zero_regret() {
        let env = small_env();
        let cache = Arc::new(PlanningCache::build(env.params()).unwrap());
        let mut oracle = OracleAgent::new("oracle".into(), env.params().clone(), cache.clone());
        let trace = run_trial_with(&env, &mut oracle, "oracle", 7, &cache, 0).unwrap();
        assert_eq!(trace.records.len(), 40);
        for rec in &trace.records {
            assert!(rec.cum_regret.abs() < 1e-9, "episode {}: {}", rec.episode, rec.cum_regret);
            assert!((rec.v_star - rec.v_pi).abs() < 1e-12);
        }
    }

    #[test]
    fn regret_is_nonnegative_and_cumulative_sums_are_exact() {
        let env = small_env();
        let cache = PlanningCache::build(env.params()).unwrap();
        let cfg = AgentConfig::of_kind(AgentKind::EpsilonGreedy);
        let trace = run_trial(&env, &cfg, 3, &cache, 0).unwrap();
        let mut reward_sum = 0.0;
        let mut prev_regret = 0.0;
        for rec in &trace.records {
            assert!(rec.v_star >= rec.v_pi - 1e-9);
            assert!(rec.cum_regret >= prev_regret - 1e-9);
            prev_regret = rec.cum_regret;
            reward_sum += rec.realized_reward;
            assert_eq!(rec.cum_reward, reward_sum);
        }
    }

    #[test]
    fn same_seed_replays_the_identical_trace() {
        let env = small_env();
        let cache = PlanningCache::build(env.params()).unwrap();
        let cfg = AgentConfig::of_kind(AgentKind::LsviUcbRestart);
        let a = run_trial(&env, &cfg, 11, &cache, 0).unwrap();
        let b = run_trial(&env, &cfg, 11, &cache, 0).unwrap();
        assert_eq!(a.records, b.records);
        let c = run_trial(&env, &cfg, 12, &cache, 0).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn aggregation_matches_hand_computed_mean_and_std() {
        let mk = |cum: f64| RegretTrace {
            agent_label: "x".into(),
            agent_kind: "random".into(),
            seed: 0,
            config_hash: 0,
            records: vec![EpisodeRecord {
                episode: 0,
                v_star: 1.0,
                v_pi: 1.0,
                realized_reward: cum,
                cum_regret: 0.0,
                cum_reward: cum,
            }],
            wall_clock_s: 1.0,
            block_log: None,
        };
        let traces = [mk(1.0), mk(2.0), mk(3.0)];
        let curves = aggregate_curves("x", "random", &traces);
        assert!((curves.mean_cum_reward[0] - 2.0).abs() < 1e-15);
        assert!((curves.std_cum_reward[0] - 1.0).abs() < 1e-15);
        // A single trace has zero spread.
        let one = aggregate_curves("x", "random", &traces[..1]);
        assert_eq!(one.mean_cum_reward[0], 1.0);
        assert_eq!(one.std_cum_reward[0], 0.0);
    }

    #[test]
    fn policy_snapshot_validation_catches_bad_rows() {
        let mut probs = Array3::from_elem((2, 2, 2), 0.5);
        probs[(1, 0, 0)] = 0.7;
        let bad = PolicySnapshot::Stochastic(probs);
        assert!(matches!(
            bad.validate(2),
            Err(HarnessError::InvalidPolicy { step: 1, state: 0, .. })
        ));
        let ok = uniform_policy(2, 2, 2);
        ok.validate(2).unwrap();
        let det = PolicySnapshot::Deterministic(Array2::from_elem((2, 2), 5));
        assert!(det.validate(2).is_err());
    }
}
