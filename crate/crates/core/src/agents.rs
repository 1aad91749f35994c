//! Value-based agents: regularized least-squares value iteration with an
//! optimistic bonus, optional periodic restarts, and the ε-greedy / uniform
//! baselines.
//!
//! Per episode the agent runs one backward sweep `h = H−1 … 0`. At step `h`
//! it solves the ridge regression
//! `w_h = Λ_h⁻¹ Σ_l φ_l · (r_l + max_a Q_{h+1}(s'_l, a))` over the epoch's
//! history, where `Λ_h = I + Σ_l φ_l φ_lᵀ`, bootstrapping from the `Q_{h+1}`
//! table produced earlier in the *same* sweep, and emits
//! `Q_h(s, a) = clamp(w_hᵀφ(s,a) + β·‖φ(s,a)‖_{Λ_h⁻¹}, 0, H)`. Acting is
//! greedy with lowest-index tie-breaking. Restarting wipes the Gram
//! matrices, weights, and history every `W/H` episodes, which is what keeps
//! the agent tracking a drifting MDP.
//!
//! Gram inverses are maintained incrementally by rank-one (Sherman–Morrison)
//! updates; a defensive check turns a non-positive update denominator into
//! [`AgentError::NumericalBreakdown`] instead of silently corrupting state.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::PolicySnapshot;
use crate::linmdp::{FeatureMap, LinearMdpParams};
use crate::rng::sample_categorical;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("rank-one update denominator {denominator} is not positive at step {step}")]
    NumericalBreakdown { step: usize, denominator: f64 },
    #[error("variation-aware bonus requested but no local variation budgets were supplied")]
    MissingLocalVariation,
    #[error("invalid agent parameter `{field}`: {detail}")]
    InvalidParameter { field: &'static str, detail: String },
}

/// Per-epoch regression state of a least-squares value-iteration agent.
#[derive(Debug, Clone)]
pub struct LsviState {
    pub dim: usize,
    pub horizon: usize,
    /// First episode of the current epoch (τ).
    pub epoch_start: usize,
    /// Gram matrices `Λ_h = I + Σ φφᵀ`, one per step.
    pub grams: Vec<Array2<f64>>,
    /// Incrementally maintained inverses `Λ_h⁻¹`.
    pub gram_invs: Vec<Array2<f64>>,
    /// Weights from the latest backward sweep.
    pub weights: Vec<Array1<f64>>,
    /// Epoch history per step: `(state, action, reward, next_state)`.
    pub history: Vec<Vec<(usize, usize, f64, usize)>>,
}

impl LsviState {
    pub fn new(dim: usize, horizon: usize) -> Self {
        LsviState {
            dim,
            horizon,
            epoch_start: 0,
            grams: (0..horizon).map(|_| Array2::eye(dim)).collect(),
            gram_invs: (0..horizon).map(|_| Array2::eye(dim)).collect(),
            weights: (0..horizon).map(|_| Array1::zeros(dim)).collect(),
            history: vec![Vec::new(); horizon],
        }
    }

    /// Wipes the regression state for a fresh epoch starting at `episode`.
    pub fn restart(&mut self, episode: usize) {
        self.epoch_start = episode;
        for h in 0..self.horizon {
            self.grams[h] = Array2::eye(self.dim);
            self.gram_invs[h] = Array2::eye(self.dim);
            self.weights[h].fill(0.0);
            self.history[h].clear();
        }
    }

    /// `‖Λ_h · Λ_h⁻¹ − I‖_∞` — fidelity of the maintained inverse.
    pub fn inverse_fidelity(&self, h: usize) -> f64 {
        let product = self.grams[h].dot(&self.gram_invs[h]);
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((product[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Rank-one update `Λ ← Λ + φφᵀ` with the matching Sherman–Morrison update
/// of the inverse: `Λ⁻¹ ← Λ⁻¹ − (Λ⁻¹φ)(Λ⁻¹φ)ᵀ / (1 + φᵀΛ⁻¹φ)`. `step` only
/// labels the error.
pub fn gram_rank_one_update(
    gram: &mut Array2<f64>,
    gram_inv: &mut Array2<f64>,
    phi: ArrayView1<'_, f64>,
    step: usize,
) -> Result<(), AgentError> {
    let inv_phi = gram_inv.dot(&phi);
    let denominator = 1.0 + phi.dot(&inv_phi);
    if denominator <= 0.0 || !denominator.is_finite() {
        return Err(AgentError::NumericalBreakdown { step, denominator });
    }
    let d = phi.len();
    for i in 0..d {
        for j in 0..d {
            gram[(i, j)] += phi[i] * phi[j];
            gram_inv[(i, j)] -= inv_phi[i] * inv_phi[j] / denominator;
        }
    }
    Ok(())
}

/// One optimistic backward sweep over the epoch history. Returns the `H`
/// value tables (each `S × A`) and stores the fitted weights in `state`.
/// `beta` scales the bonus `‖φ‖_{Λ⁻¹}`; zero yields the plain greedy fit.
pub fn lsvi_backward_pass(
    state: &mut LsviState,
    features: &FeatureMap,
    beta: f64,
) -> Vec<Array2<f64>> {
    let (ss, aa, d) = (features.num_states(), features.num_actions(), state.dim);
    let hh = state.horizon;
    let cap = hh as f64;
    let mut q: Vec<Array2<f64>> = vec![Array2::zeros((ss, aa)); hh];
    // max_a Q_{h+1}(s, a) of the table built in the previous (later-step)
    // iteration of this sweep; the terminal value is zero.
    let mut next_value: Array1<f64> = Array1::zeros(ss);
    for h in (0..hh).rev() {
        let mut b = Array1::zeros(d);
        for &(s, a, r, s_next) in &state.history[h] {
            let target = r + next_value[s_next];
            let phi = features.phi(s, a);
            b.scaled_add(target, &phi);
        }
        let w = state.gram_invs[h].dot(&b);
        for s in 0..ss {
            for a in 0..aa {
                let phi = features.phi(s, a);
                let mut value = w.dot(&phi);
                if beta != 0.0 {
                    let inv_phi = state.gram_invs[h].dot(&phi);
                    value += beta * phi.dot(&inv_phi).max(0.0).sqrt();
                }
                q[h][(s, a)] = value.clamp(0.0, cap);
            }
        }
        for s in 0..ss {
            next_value[s] = greedy_value(q[h].row(s));
        }
        state.weights[h] = w;
    }
    q
}

fn greedy_value(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Lowest-index argmax of a value row.
pub fn greedy_action(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (a, &v) in row.iter().enumerate() {
        if v > best_value {
            best = a;
            best_value = v;
        }
    }
    best
}

/// Restarts the state if `episode` opens a new epoch of `epoch_episodes`
/// episodes; returns whether a restart happened. Episode 0 never restarts
/// (the initial epoch is already fresh).
pub fn maybe_restart(state: &mut LsviState, episode: usize, epoch_episodes: usize) -> bool {
    if episode > 0 && episode.is_multiple_of(epoch_episodes) {
        state.restart(episode);
        true
    } else {
        false
    }
}

/// Bonus-multiplier schedule.
///
/// * `KnownVariation` — grows with elapsed epoch episodes, using the
///   epoch's local variation budgets:
///   `c·d·H·√(log(2dW/p)) + b_θ·√(d(k−τ)) + b_μ·H·√(d(k−τ))`.
/// * `UnknownVariation` — the constant `c·d·H·√(log(2dL/p))`, with `L = T`
///   by default (`L = W` when `use_window`).
/// * `ExperimentScaled` — the down-scaled constant
///   `scale·c·d·H·√(log(200·d·T))` used for experiment-sized problems,
///   where theory-sized bonuses would saturate every value at `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaPolicy {
    KnownVariation {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
        /// Use `T` instead of the epoch length `W` inside the logarithm.
        #[serde(default)]
        use_total_horizon: bool,
    },
    UnknownVariation {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
        /// Use the epoch length `W` instead of `T` inside the logarithm.
        #[serde(default)]
        use_window: bool,
    },
    ExperimentScaled {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_c() -> f64 {
    1.0
}

fn default_p() -> f64 {
    0.05
}

fn default_scale() -> f64 {
    0.001
}

impl BetaPolicy {
    pub fn experiment_default() -> Self {
        BetaPolicy::ExperimentScaled { c: default_c(), scale: default_scale() }
    }

    pub fn unknown_default() -> Self {
        BetaPolicy::UnknownVariation { c: default_c(), p: default_p(), use_window: false }
    }

    /// Whether this policy needs per-epoch local variation budgets.
    pub fn needs_local_variation(&self) -> bool {
        matches!(self, BetaPolicy::KnownVariation { .. })
    }
}

/// Everything a bonus schedule may depend on at episode `k`.
#[derive(Debug, Clone, Copy)]
pub struct BetaContext {
    /// Current episode (zero-based).
    pub episode: usize,
    /// First episode of the current epoch.
    pub epoch_start: usize,
    pub dim: usize,
    pub horizon: usize,
    /// Epoch length in steps (W).
    pub epoch_steps: usize,
    /// Total experiment steps (T).
    pub total_steps: usize,
    /// Local variation budgets `(b_theta, b_mu)` of the current epoch;
    /// required by [`BetaPolicy::KnownVariation`].
    pub local_budgets: Option<(f64, f64)>,
}

/// Evaluates the bonus multiplier `β` for the given context. Values are
/// strictly positive; the known-variation schedule is nondecreasing in the
/// episode within an epoch.
pub fn beta_value(policy: &BetaPolicy, ctx: &BetaContext) -> Result<f64, AgentError> {
    let d = ctx.dim as f64;
    let hh = ctx.horizon as f64;
    match *policy {
        BetaPolicy::KnownVariation { c, p, use_total_horizon } => {
            let (b_theta, b_mu) = ctx.local_budgets.ok_or(AgentError::MissingLocalVariation)?;
            let window = if use_total_horizon { ctx.total_steps } else { ctx.epoch_steps } as f64;
            let elapsed = (ctx.episode - ctx.epoch_start) as f64;
            Ok(c * d * hh * (2.0 * d * window / p).ln().sqrt()
                + b_theta * (d * elapsed).sqrt()
                + b_mu * hh * (d * elapsed).sqrt())
        }
        BetaPolicy::UnknownVariation { c, p, use_window } => {
            let window = if use_window { ctx.epoch_steps } else { ctx.total_steps } as f64;
            Ok(c * d * hh * (2.0 * d * window / p).ln().sqrt())
        }
        BetaPolicy::ExperimentScaled { c, scale } => {
            Ok(scale * c * d * hh * (200.0 * d * ctx.total_steps as f64).ln().sqrt())
        }
    }
}

/// Epoch length (in steps, a multiple of `H`) for a *known* total variation
/// budget `b`: `⌈b^{−2/3}·T^{2/3}·d^{1/3}·H^{−2/3}⌉·H`, clamped into
/// `[H, ⌈T/H⌉·H]`. Non-positive budgets disable restarts (full horizon).
pub fn epoch_size_known(b: f64, t: usize, d: usize, h: usize) -> usize {
    let full = t.div_ceil(h) * h;
    if b <= 0.0 {
        return full;
    }
    let episodes = b.powf(-2.0 / 3.0) * (t as f64).powf(2.0 / 3.0) * (d as f64).powf(1.0 / 3.0)
        / (h as f64).powf(2.0 / 3.0);
    clamp_epoch(episodes, h, full)
}

/// Epoch length when the budget is only assumed, not known:
/// `⌈b^{−1/2}·T^{1/2}·d^{1/2}·H^{1/2}⌉·H`, clamped into `[H, ⌈T/H⌉·H]`.
pub fn epoch_size_unknown(b: f64, t: usize, d: usize, h: usize) -> usize {
    let full = t.div_ceil(h) * h;
    if b <= 0.0 {
        return full;
    }
    let episodes = (t as f64 * d as f64 * h as f64).sqrt() / b.sqrt();
    clamp_epoch(episodes, h, full)
}

fn clamp_epoch(episodes: f64, h: usize, full: usize) -> usize {
    if !episodes.is_finite() {
        return full;
    }
    let steps = episodes.ceil().max(1.0) as usize * h;
    steps.clamp(h, full)
}

/// Which agent to run; the strings are the configuration-facing names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    LsviUcb,
    LsviUcbRestart,
    AdaLsviUcbRestart,
    EpsilonGreedy,
    Random,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::LsviUcb => "lsvi_ucb",
            AgentKind::LsviUcbRestart => "lsvi_ucb_restart",
            AgentKind::AdaLsviUcbRestart => "ada_lsvi_ucb_restart",
            AgentKind::EpsilonGreedy => "epsilon_greedy",
            AgentKind::Random => "random",
        }
    }
}

/// Epoch-length selection for restarting agents: an explicit step count or
/// one of the budget-driven formulas (resolved against the environment's
/// ground-truth variation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpochSpec {
    Steps(usize),
    Formula(EpochFormula),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochFormula {
    Known,
    Unknown,
}

/// Declarative agent configuration as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Display/output label; defaults to the kind string.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Restart epoch (restarting kinds only); defaults to the drift-aware
    /// formula when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<EpochSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaPolicy>,
    /// Exploration rate of `epsilon_greedy`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Block-length coefficient of the meta-tuned agent
    /// (`M = ⌈coeff·√(T·d·H)⌉` episodes per block).
    #[serde(default = "default_block_coeff")]
    pub block_coeff: f64,
    /// Pin the meta-tuned agent to a single restart window (in steps),
    /// collapsing its bandit to one arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_window: Option<usize>,
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_block_coeff() -> f64 {
    0.2
}

impl AgentConfig {
    pub fn of_kind(kind: AgentKind) -> Self {
        AgentConfig {
            kind,
            label: None,
            epoch: None,
            beta: None,
            epsilon: default_epsilon(),
            block_coeff: default_block_coeff(),
            forced_window: None,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or_else(|| self.kind.as_str())
    }
}

/// Interior drift of each epoch, precomputed as prefix sums over episode
/// boundaries so the known-variation bonus can query any epoch in O(1).
#[derive(Debug, Clone)]
pub struct LocalVariation {
    prefix_theta: Vec<f64>,
    prefix_mu: Vec<f64>,
}

impl LocalVariation {
    pub fn from_params(params: &LinearMdpParams) -> Result<Self, crate::linmdp::MdpError> {
        let boundaries = params.boundary_variations()?;
        let mut prefix_theta = Vec::with_capacity(boundaries.len() + 1);
        let mut prefix_mu = Vec::with_capacity(boundaries.len() + 1);
        prefix_theta.push(0.0);
        prefix_mu.push(0.0);
        for (dt, dm) in boundaries {
            prefix_theta.push(prefix_theta.last().unwrap() + dt);
            prefix_mu.push(prefix_mu.last().unwrap() + dm);
        }
        Ok(LocalVariation { prefix_theta, prefix_mu })
    }

    /// `(b_theta, b_mu)` summed over boundaries interior to episodes
    /// `[start, end)`.
    pub fn epoch_budgets(&self, start: usize, end: usize) -> (f64, f64) {
        if end <= start + 1 {
            return (0.0, 0.0);
        }
        let hi = (end - 1).min(self.prefix_theta.len() - 1);
        let lo = start.min(hi);
        (self.prefix_theta[hi] - self.prefix_theta[lo], self.prefix_mu[hi] - self.prefix_mu[lo])
    }
}

/// Runtime interface between the harness and an agent. One episode is:
/// `begin_episode` (returns the policy the agent is about to play), then
/// `act`/`observe` for each step, then `end_episode`.
pub trait EpisodeAgent: Send {
    fn label(&self) -> &str;
    fn begin_episode(
        &mut self,
        episode: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<PolicySnapshot, AgentError>;
    fn act(&self, step: usize, state: usize, rng: &mut ChaCha8Rng) -> usize;
    fn observe(
        &mut self,
        step: usize,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
    ) -> Result<(), AgentError>;
    fn end_episode(&mut self, episode: usize) -> Result<(), AgentError>;
    /// Per-block diagnostics of meta-tuned agents; `None` for everyone else.
    fn block_log(&self) -> Option<&[crate::tuner::BlockRecord]> {
        None
    }
}

/// Exploration flavor layered on the greedy tables.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Exploration {
    /// Optimistic bonus, greedy acting.
    Bonus,
    /// No bonus; uniform action with probability ε.
    EpsilonGreedy(f64),
}

/// The least-squares value-iteration agent family (plain, restarting, and
/// ε-greedy are all parameterizations of this core).
pub struct LsviAgent {
    label: String,
    features: Arc<FeatureMap>,
    state: LsviState,
    q: Vec<Array2<f64>>,
    beta: BetaPolicy,
    exploration: Exploration,
    /// Epoch length in steps; `usize::MAX` disables restarts.
    epoch_steps: usize,
    total_steps: usize,
    local_variation: Option<Arc<LocalVariation>>,
    num_episodes: usize,
}

impl LsviAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: String,
        features: Arc<FeatureMap>,
        horizon: usize,
        num_episodes: usize,
        epoch_steps: usize,
        beta: BetaPolicy,
        exploration_epsilon: Option<f64>,
        total_steps: usize,
        local_variation: Option<Arc<LocalVariation>>,
    ) -> Result<Self, AgentError> {
        if epoch_steps != usize::MAX
            && (epoch_steps < horizon || !epoch_steps.is_multiple_of(horizon))
        {
            return Err(AgentError::InvalidParameter {
                field: "epoch",
                detail: format!(
                    "epoch of {epoch_steps} steps is not a positive multiple of H = {horizon}"
                ),
            });
        }
        if let Some(eps) = exploration_epsilon {
            if !(0.0..=1.0).contains(&eps) {
                return Err(AgentError::InvalidParameter {
                    field: "epsilon",
                    detail: format!("{eps} outside [0, 1]"),
                });
            }
        }
        if beta.needs_local_variation() && local_variation.is_none() {
            return Err(AgentError::MissingLocalVariation);
        }
        let dim = features.dim();
        Ok(LsviAgent {
            label,
            features,
            state: LsviState::new(dim, horizon),
            q: Vec::new(),
            beta,
            exploration: match exploration_epsilon {
                Some(eps) => Exploration::EpsilonGreedy(eps),
                None => Exploration::Bonus,
            },
            epoch_steps,
            total_steps,
            local_variation,
            num_episodes,
        })
    }

    fn epoch_episodes(&self) -> usize {
        if self.epoch_steps == usize::MAX {
            usize::MAX
        } else {
            self.epoch_steps / self.state.horizon
        }
    }

    /// The greedy policy of the current tables, with the ε-mixture applied
    /// for the ε-greedy flavor.
    fn snapshot(&self) -> PolicySnapshot {
        let (ss, aa) = (self.features.num_states(), self.features.num_actions());
        let hh = self.state.horizon;
        let mut greedy = Array2::zeros((hh, ss));
        for h in 0..hh {
            for s in 0..ss {
                greedy[(h, s)] = greedy_action(self.q[h].row(s));
            }
        }
        match self.exploration {
            Exploration::Bonus => PolicySnapshot::Deterministic(greedy),
            Exploration::EpsilonGreedy(eps) => {
                let mut probs = ndarray::Array3::from_elem((hh, ss, aa), eps / aa as f64);
                for h in 0..hh {
                    for s in 0..ss {
                        probs[(h, s, greedy[(h, s)])] += 1.0 - eps;
                    }
                }
                PolicySnapshot::Stochastic(probs)
            }
        }
    }

    pub fn state(&self) -> &LsviState {
        &self.state
    }
}

impl EpisodeAgent for LsviAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn begin_episode(
        &mut self,
        episode: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<PolicySnapshot, AgentError> {
        let epoch_episodes = self.epoch_episodes();
        if epoch_episodes != usize::MAX {
            maybe_restart(&mut self.state, episode, epoch_episodes);
        }
        let beta = match self.exploration {
            Exploration::EpsilonGreedy(_) => 0.0,
            Exploration::Bonus => {
                let local_budgets = if self.beta.needs_local_variation() {
                    let lv =
                        self.local_variation.as_ref().ok_or(AgentError::MissingLocalVariation)?;
                    let epoch_end = self
                        .state
                        .epoch_start
                        .saturating_add(epoch_episodes.min(self.num_episodes))
                        .min(self.num_episodes);
                    Some(lv.epoch_budgets(self.state.epoch_start, epoch_end))
                } else {
                    None
                };
                let ctx = BetaContext {
                    episode,
                    epoch_start: self.state.epoch_start,
                    dim: self.state.dim,
                    horizon: self.state.horizon,
                    epoch_steps: if self.epoch_steps == usize::MAX {
                        self.num_episodes * self.state.horizon
                    } else {
                        self.epoch_steps
                    },
                    total_steps: self.total_steps,
                    local_budgets,
                };
                beta_value(&self.beta, &ctx)?
            }
        };
        self.q = lsvi_backward_pass(&mut self.state, &self.features, beta);
        Ok(self.snapshot())
    }

    fn act(&self, step: usize, state: usize, rng: &mut ChaCha8Rng) -> usize {
        match self.exploration {
            Exploration::Bonus => greedy_action(self.q[step].row(state)),
            Exploration::EpsilonGreedy(eps) => {
                if eps > 0.0 && rng.gen::<f64>() < eps {
                    rng.gen_range(0..self.features.num_actions())
                } else {
                    greedy_action(self.q[step].row(state))
                }
            }
        }
    }

    fn observe(
        &mut self,
        step: usize,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
    ) -> Result<(), AgentError> {
        self.state.history[step].push((state, action, reward, next_state));
        let phi = self.features.phi(state, action).to_owned();
        gram_rank_one_update(
            &mut self.state.grams[step],
            &mut self.state.gram_invs[step],
            phi.view(),
            step,
        )
    }

    fn end_episode(&mut self, _episode: usize) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Uniform-random baseline.
pub struct RandomAgent {
    label: String,
    horizon: usize,
    num_states: usize,
    num_actions: usize,
}

impl RandomAgent {
    pub fn new(label: String, horizon: usize, num_states: usize, num_actions: usize) -> Self {
        RandomAgent { label, horizon, num_states, num_actions }
    }
}

impl EpisodeAgent for RandomAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn begin_episode(
        &mut self,
        _episode: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<PolicySnapshot, AgentError> {
        Ok(PolicySnapshot::Stochastic(ndarray::Array3::from_elem(
            (self.horizon, self.num_states, self.num_actions),
            1.0 / self.num_actions as f64,
        )))
    }

    fn act(&self, _step: usize, _state: usize, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..self.num_actions)
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

/// Samples an action from a snapshot row by inverse CDF — used by tests to
/// cross-check that `act` is distributed like the reported policy.
pub fn sample_from_snapshot(
    snapshot: &PolicySnapshot,
    step: usize,
    state: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    match snapshot {
        PolicySnapshot::Deterministic(actions) => actions[(step, state)],
        PolicySnapshot::Stochastic(probs) => {
            let row: Vec<f64> = probs.slice(ndarray::s![step, state, ..]).iter().cloned().collect();
            sample_categorical(&row, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{keyed_rng, StreamPurpose};
    use ndarray::array;

    #[test]
    fn rank_one_update_of_identity_with_basis_vector() {
        let mut gram = Array2::eye(3);
        let mut inv = Array2::eye(3);
        let phi = array![1.0, 0.0, 0.0];
        gram_rank_one_update(&mut gram, &mut inv, phi.view(), 0).unwrap();
        assert_eq!(gram[(0, 0)], 2.0);
        assert_eq!(gram[(1, 1)], 1.0);
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(inv[(1, 1)], 1.0);
        assert_eq!(inv[(0, 1)], 0.0);
    }

    #[test]
    fn repeated_basis_updates_follow_the_scalar_recursion() {
        // n updates with e_0 drive Λ⁻¹[0,0] to 1/(n+1).
        let mut gram = Array2::eye(2);
        let mut inv = Array2::eye(2);
        let phi = array![1.0, 0.0];
        for n in 1..=64 {
            gram_rank_one_update(&mut gram, &mut inv, phi.view(), 0).unwrap();
            assert!(
                (inv[(0, 0)] - 1.0 / (n as f64 + 1.0)).abs() < 1e-12,
                "after {n} updates: {}",
                inv[(0, 0)]
            );
        }
    }

    #[test]
    fn empty_history_sweep_is_pure_bonus() {
        let table =
            ndarray::Array3::from_shape_fn(
                (2, 2, 2),
                |(s, a, j)| {
                    if (s + a) % 2 == j {
                        1.0
                    } else {
                        0.0
                    }
                },
            );
        let features = FeatureMap::new(table, true).unwrap();
        let mut state = LsviState::new(2, 3);
        let q = lsvi_backward_pass(&mut state, &features, 0.7);
        // w = 0 and Λ = I, so every Q value is min(β·‖φ‖, H) = 0.7.
        for qh in &q {
            for s in 0..2 {
                for a in 0..2 {
                    assert!((qh[(s, a)] - 0.7).abs() < 1e-15);
                }
            }
        }
        assert!(state.weights.iter().all(|w| w.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn q_values_are_clamped_into_the_value_range() {
        let table = ndarray::Array3::from_shape_fn((1, 1, 1), |_| 1.0);
        let features = FeatureMap::new(table, true).unwrap();
        let mut state = LsviState::new(1, 2);
        // One observation with a huge target would push wᵀφ above H.
        state.history[1].push((0, 0, 1.0, 0));
        state.history[0].push((0, 0, 1.0, 0));
        let q = lsvi_backward_pass(&mut state, &features, 1000.0);
        for qh in &q {
            assert!(qh[(0, 0)] <= 2.0);
            assert!(qh[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn greedy_action_breaks_ties_toward_the_lowest_index() {
        assert_eq!(greedy_action(array![3.0, 5.0, 5.0].view()), 1);
        assert_eq!(greedy_action(array![5.0, 5.0, 5.0].view()), 0);
        assert_eq!(greedy_action(array![1.0, 0.0].view()), 0);
    }

    #[test]
    fn restart_schedule_matches_the_epoch_length() {
        let mut state = LsviState::new(2, 10);
        state.history[0].push((0, 0, 0.5, 0));
        // W/H = 200 episodes: restarts exactly at episodes 200, 400, …
        for episode in 1..=401 {
            let restarted = maybe_restart(&mut state, episode, 200);
            assert_eq!(restarted, episode == 200 || episode == 400, "episode {episode}");
        }
        assert_eq!(state.epoch_start, 400);
        assert!(state.history[0].is_empty());
    }

    #[test]
    fn beta_formulas_match_hand_evaluations() {
        // Unknown mode at c = 1, d = 10, H = 10, T = 20000, p = 0.05:
        // 100·√ln(8·10⁶) ≈ 398.7.
        let ctx = BetaContext {
            episode: 0,
            epoch_start: 0,
            dim: 10,
            horizon: 10,
            epoch_steps: 20000,
            total_steps: 20000,
            local_budgets: None,
        };
        let beta = beta_value(&BetaPolicy::unknown_default(), &ctx).unwrap();
        let expected = 100.0 * (2.0f64 * 10.0 * 20000.0 / 0.05).ln().sqrt();
        assert!((beta - expected).abs() < 1e-12);
        assert!((beta - 398.7).abs() < 0.1, "beta = {beta}");

        // Experiment scaling: 0.001·100·√ln(200·10·20000).
        let beta = beta_value(&BetaPolicy::experiment_default(), &ctx).unwrap();
        let expected = 0.001 * 100.0 * (200.0f64 * 10.0 * 20000.0).ln().sqrt();
        assert!((beta - expected).abs() < 1e-12);

        // Known mode at the epoch start reduces to its constant term; later
        // episodes grow with the local budgets.
        let known = BetaPolicy::KnownVariation { c: 1.0, p: 0.05, use_total_horizon: false };
        let ctx0 = BetaContext {
            episode: 100,
            epoch_start: 100,
            epoch_steps: 1000,
            local_budgets: Some((0.5, 2.0)),
            ..ctx
        };
        let beta0 = beta_value(&known, &ctx0).unwrap();
        let constant = 100.0 * (2.0f64 * 10.0 * 1000.0 / 0.05).ln().sqrt();
        assert!((beta0 - constant).abs() < 1e-12);
        let ctx9 = BetaContext { episode: 109, ..ctx0 };
        let beta9 = beta_value(&known, &ctx9).unwrap();
        let grown = constant + 0.5 * (10.0f64 * 9.0).sqrt() + 2.0 * 10.0 * (10.0f64 * 9.0).sqrt();
        assert!((beta9 - grown).abs() < 1e-12);
        assert!(beta9 > beta0);

        // Missing budgets is an error, not a silent zero.
        assert!(matches!(beta_value(&known, &ctx), Err(AgentError::MissingLocalVariation)));
    }

    #[test]
    fn epoch_size_formulas_match_hand_evaluations() {
        // Known budget B = 1 at T = 20000, d = 10, H = 10 → 342 episodes.
        assert_eq!(epoch_size_known(1.0, 20000, 10, 10), 3420);
        // Unknown-budget sizing: ⌈√(T·d·H)⌉·H and the B = 4 halving.
        assert_eq!(epoch_size_unknown(1.0, 20000, 10, 10), 14150);
        assert_eq!(epoch_size_unknown(4.0, 20000, 10, 10), 7080);
        // Clamps: huge budgets floor at H, tiny budgets cap at ⌈T/H⌉·H.
        assert_eq!(epoch_size_known(1e12, 20000, 10, 10), 10);
        assert_eq!(epoch_size_known(1e-12, 20000, 10, 10), 20000);
        assert_eq!(epoch_size_unknown(0.0, 20000, 10, 10), 20000);
    }

    #[test]
    fn epsilon_zero_acts_exactly_greedily() {
        let family = crate::env::build_combination_lock(6, 3, 4, 5, 2, 1).unwrap();
        let params = crate::env::stationary_schedule(&family, 8).unwrap();
        let mut greedy = LsviAgent::new(
            "greedy".into(),
            params.features().clone(),
            4,
            8,
            usize::MAX,
            BetaPolicy::experiment_default(),
            Some(0.0),
            32,
            None,
        )
        .unwrap();
        let mut rng = keyed_rng(5, 0, StreamPurpose::AgentEpisode, 0);
        let snap = greedy.begin_episode(0, &mut rng).unwrap();
        for s in 0..6 {
            for h in 0..4 {
                let a = greedy.act(h, s, &mut rng);
                assert_eq!(a, sample_from_snapshot(&snap, h, s, &mut rng.clone()));
            }
        }
    }

    #[test]
    fn random_agent_frequencies_are_uniform() {
        let agent = RandomAgent::new("random".into(), 10, 15, 7);
        let mut rng = keyed_rng(11, 0, StreamPurpose::AgentEpisode, 0);
        let n = 100_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            counts[agent.act(0, 0, &mut rng)] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 7.0).abs() < 0.01, "frequency {freq}");
        }
        // Same seed replays the same sequence.
        let mut a = keyed_rng(11, 0, StreamPurpose::AgentEpisode, 3);
        let mut b = keyed_rng(11, 0, StreamPurpose::AgentEpisode, 3);
        let xs: Vec<usize> = (0..32).map(|_| agent.act(0, 0, &mut a)).collect();
        let ys: Vec<usize> = (0..32).map(|_| agent.act(0, 0, &mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn local_variation_prefix_sums_recover_interior_budgets() {
        let family = crate::env::build_combination_lock(15, 7, 10, 10, 5, 7).unwrap();
        let params = crate::env::abrupt_schedule(&family, 100, 2000).unwrap();
        let lv = LocalVariation::from_params(&params).unwrap();
        // Change-aligned epochs see no interior drift.
        assert_eq!(lv.epoch_budgets(0, 100), (0.0, 0.0));
        assert_eq!(lv.epoch_budgets(100, 200), (0.0, 0.0));
        // An epoch spanning a change point sees exactly that boundary.
        let (dt, dm) = lv.epoch_budgets(50, 150);
        assert!(dt > 0.0 && dm > 0.0);
        let boundaries = params.boundary_variations().unwrap();
        assert!((dt - boundaries[99].0).abs() < 1e-12);
        assert!((dm - boundaries[99].1).abs() < 1e-12);
    }
}
