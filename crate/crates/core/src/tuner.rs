//! Bandit-over-bandit restart tuning.
//!
//! When the drift budget is unknown there is no principled restart window.
//! [`AdaAgent`] splits the horizon into blocks of `M` episodes, keeps a
//! geometric grid of candidate windows, and runs an adversarial bandit
//! (EXP3-P) over the grid: each block samples a window, runs a *fresh*
//! restarting value-iteration agent with that window for the whole block,
//! and feeds the block's realized reward (normalized by `M·H`) back as the
//! bandit payoff.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{AgentError, BetaPolicy, EpisodeAgent, LsviAgent, LsviState};
use crate::harness::PolicySnapshot;
use crate::linmdp::FeatureMap;
use crate::rng::{keyed_rng, label_hash, sample_categorical, StreamPurpose};

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid tuner parameter `{field}`: {detail}")]
    InvalidParameter { field: &'static str, detail: String },
    #[error(
        "block length {block_episodes} is too short for a geometric window grid (need ⌊ln M⌋ ≥ 1)"
    )]
    DegenerateGrid { block_episodes: usize },
    #[error(
        "exploration floor gamma = {gamma} is not in (0, 1); too few blocks for the arm count"
    )]
    InvalidGamma { gamma: f64 },
    #[error("block reward {reward} outside [0, {max}]")]
    RewardOutOfRange { reward: f64, max: f64 },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// How the horizon is blocked and which restart windows are on the menu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    /// Episodes per block (M).
    pub block_episodes: usize,
    /// `⌈T / (M·H)⌉`.
    pub num_blocks: usize,
    /// Candidate epoch sizes in steps: `⌊M^{l/⌊ln M⌋}⌋·H` for
    /// `l = 0..⌊ln M⌋`, deduplicated; every entry is a positive multiple of
    /// `H` and at most `M·H`.
    pub window_grid: Vec<usize>,
}

/// Builds the block/grid plan: `M = ⌈coeff·√T·√d·√H⌉` episodes per block
/// and a geometric window grid with `⌊ln M⌋ + 1` rungs.
pub fn block_plan(
    total_steps: usize,
    dim: usize,
    horizon: usize,
    coeff: f64,
) -> Result<BlockPlan, TunerError> {
    // NaN must fail this check, hence the explicit ordering test.
    if coeff.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(TunerError::InvalidParameter {
            field: "block_coeff",
            detail: format!("{coeff} is not positive"),
        });
    }
    if horizon == 0 || total_steps < horizon {
        return Err(TunerError::InvalidParameter {
            field: "total_steps",
            detail: format!("need at least one episode (T = {total_steps}, H = {horizon})"),
        });
    }
    let m = (coeff * (total_steps as f64).sqrt() * (dim as f64).sqrt() * (horizon as f64).sqrt())
        .ceil() as usize;
    let m = m.max(1);
    let log_floor = (m as f64).ln().floor() as usize;
    if log_floor == 0 {
        return Err(TunerError::DegenerateGrid { block_episodes: m });
    }
    let mut window_grid = Vec::with_capacity(log_floor + 1);
    for l in 0..=log_floor {
        let episodes = if l == log_floor {
            m
        } else {
            (m as f64).powf(l as f64 / log_floor as f64).floor() as usize
        };
        let steps = (episodes.max(1) * horizon).min(m * horizon);
        if window_grid.last() != Some(&steps) {
            window_grid.push(steps);
        }
    }
    Ok(BlockPlan { block_episodes: m, num_blocks: total_steps.div_ceil(m * horizon), window_grid })
}

/// EXP3-P bandit state over the window grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp3pState {
    pub num_arms: usize,
    /// Learning rate on the score exponent.
    pub alpha: f64,
    /// Implicit-exploration bonus added to every arm each block.
    pub beta: f64,
    /// Uniform-mixture floor.
    pub gamma: f64,
    /// Unnormalized reward scores, one per arm.
    pub q: Vec<f64>,
    /// Selection probabilities for the *current* block (the ones the next
    /// update divides by).
    pub u: Vec<f64>,
    pub block_index: usize,
}

/// Initializes EXP3-P for `num_arms ≥ 2` arms over `num_blocks ≥ 1` blocks:
/// `α = 0.95·r`, `β = r`, `γ = 1.05·r` with `r = √(ln Δ / (Δ·num_blocks))`,
/// scores at zero, and uniform initial probabilities.
pub fn exp3p_init(num_arms: usize, num_blocks: usize) -> Result<Exp3pState, TunerError> {
    if num_arms < 2 {
        return Err(TunerError::InvalidParameter {
            field: "num_arms",
            detail: format!("{num_arms} < 2"),
        });
    }
    if num_blocks == 0 {
        return Err(TunerError::InvalidParameter {
            field: "num_blocks",
            detail: "no blocks to run".to_string(),
        });
    }
    let root = ((num_arms as f64).ln() / (num_arms as f64 * num_blocks as f64)).sqrt();
    let gamma = 1.05 * root;
    if gamma >= 1.0 {
        return Err(TunerError::InvalidGamma { gamma });
    }
    let mut state = Exp3pState {
        num_arms,
        alpha: 0.95 * root,
        beta: root,
        gamma,
        q: vec![0.0; num_arms],
        u: Vec::new(),
        block_index: 0,
    };
    state.u = exp3p_probabilities(&state);
    Ok(state)
}

/// Selection probabilities `u_l = (1−γ)·softmax(α·q)_l + γ/Δ`, with the
/// softmax computed after subtracting the maximum exponent so large scores
/// cannot overflow.
pub fn exp3p_probabilities(state: &Exp3pState) -> Vec<f64> {
    let top = state.q.iter().map(|&x| state.alpha * x).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = state.q.iter().map(|&x| (state.alpha * x - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    let uniform = state.gamma / state.num_arms as f64;
    exps.iter().map(|&e| (1.0 - state.gamma) * e / total + uniform).collect()
}

/// Feeds one block's realized reward back: every arm's score gains
/// `β/u_l`, the chosen arm additionally gains `(R/(M·H))/u_chosen`; the
/// block index advances and the stored probabilities are refreshed.
pub fn exp3p_update(
    state: &mut Exp3pState,
    chosen_arm: usize,
    block_reward: f64,
    block_episodes: usize,
    horizon: usize,
) -> Result<(), TunerError> {
    let max = (block_episodes * horizon) as f64;
    if !(-1e-9..=max + 1e-9).contains(&block_reward) {
        return Err(TunerError::RewardOutOfRange { reward: block_reward, max });
    }
    if chosen_arm >= state.num_arms {
        return Err(TunerError::InvalidParameter {
            field: "chosen_arm",
            detail: format!("{chosen_arm} out of range (< {})", state.num_arms),
        });
    }
    let normalized = (block_reward / max).clamp(0.0, 1.0);
    for l in 0..state.num_arms {
        let gain = if l == chosen_arm { state.beta + normalized } else { state.beta };
        state.q[l] += gain / state.u[l];
    }
    state.block_index += 1;
    state.u = exp3p_probabilities(state);
    Ok(())
}

/// One block of the meta-tuned run, for diagnostics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockRecord {
    pub block: usize,
    pub arm: usize,
    /// Epoch size the block ran with, in steps.
    pub window_steps: usize,
    /// Realized (unnormalized) reward accumulated over the block.
    pub block_reward: f64,
    /// Selection probabilities the arm was drawn from.
    pub u: Vec<f64>,
}

/// Restarting value-iteration agent with the restart window tuned online by
/// EXP3-P over a geometric grid, one choice per block. The sub-agent is
/// rebuilt from scratch at every block boundary.
pub struct AdaAgent {
    label: String,
    features: Arc<FeatureMap>,
    horizon: usize,
    num_episodes: usize,
    total_steps: usize,
    plan: BlockPlan,
    /// `None` when the grid has a single window (no bandit to run).
    exp3p: Option<Exp3pState>,
    beta: BetaPolicy,
    sub: Option<LsviAgent>,
    seed: u64,
    label_key: u64,
    current_arm: usize,
    current_u: Vec<f64>,
    block_reward: f64,
    finalized_blocks: usize,
    log: Vec<BlockRecord>,
}

impl AdaAgent {
    /// `seed` is the trial-level seed; arm draws come from a dedicated
    /// per-block keyed stream so they are independent of episode traffic.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: String,
        features: Arc<FeatureMap>,
        horizon: usize,
        num_episodes: usize,
        coeff: f64,
        beta: BetaPolicy,
        forced_window: Option<usize>,
        seed: u64,
    ) -> Result<Self, TunerError> {
        let total_steps = num_episodes * horizon;
        let mut plan = block_plan(total_steps, features.dim(), horizon, coeff)?;
        if let Some(w) = forced_window {
            if w < horizon || w % horizon != 0 || w > plan.block_episodes * horizon {
                return Err(TunerError::InvalidParameter {
                    field: "forced_window",
                    detail: format!(
                        "{w} is not a multiple of H = {horizon} within [{horizon}, {}]",
                        plan.block_episodes * horizon
                    ),
                });
            }
            plan.window_grid = vec![w];
        }
        let exp3p = if plan.window_grid.len() >= 2 {
            Some(exp3p_init(plan.window_grid.len(), plan.num_blocks)?)
        } else {
            None
        };
        let label_key = label_hash(&label);
        Ok(AdaAgent {
            label,
            features,
            horizon,
            num_episodes,
            total_steps,
            plan,
            exp3p,
            beta,
            sub: None,
            seed,
            label_key,
            current_arm: 0,
            current_u: Vec::new(),
            block_reward: 0.0,
            finalized_blocks: 0,
            log: Vec::new(),
        })
    }

    pub fn plan(&self) -> &BlockPlan {
        &self.plan
    }

    pub fn bandit(&self) -> Option<&Exp3pState> {
        self.exp3p.as_ref()
    }

    /// Regression state of the currently running sub-agent.
    pub fn sub_state(&self) -> Option<&LsviState> {
        self.sub.as_ref().map(|s| s.state())
    }

    fn finalize_block(&mut self, block: usize) -> Result<(), TunerError> {
        if self.finalized_blocks > block {
            return Ok(());
        }
        if let Some(state) = self.exp3p.as_mut() {
            exp3p_update(
                state,
                self.current_arm,
                self.block_reward,
                self.plan.block_episodes,
                self.horizon,
            )?;
        }
        self.log.push(BlockRecord {
            block,
            arm: self.current_arm,
            window_steps: self.plan.window_grid[self.current_arm],
            block_reward: self.block_reward,
            u: self.current_u.clone(),
        });
        self.block_reward = 0.0;
        self.finalized_blocks = block + 1;
        Ok(())
    }

    fn open_block(&mut self, block: usize) -> Result<(), TunerError> {
        self.current_arm = match self.exp3p.as_ref() {
            Some(state) => {
                let mut rng =
                    keyed_rng(self.seed, self.label_key, StreamPurpose::TunerBlock, block as u64);
                sample_categorical(&state.u, &mut rng)
            }
            None => 0,
        };
        self.current_u = self.exp3p.as_ref().map(|s| s.u.clone()).unwrap_or_else(|| vec![1.0]);
        let window = self.plan.window_grid[self.current_arm];
        let remaining = self
            .num_episodes
            .saturating_sub(block * self.plan.block_episodes)
            .min(self.plan.block_episodes);
        self.sub = Some(LsviAgent::new(
            format!("{}#block{block}", self.label),
            self.features.clone(),
            self.horizon,
            remaining.max(1),
            window,
            self.beta,
            None,
            self.total_steps,
            None,
        )?);
        self.block_reward = 0.0;
        Ok(())
    }
}

impl EpisodeAgent for AdaAgent {
    fn label(&self) -> &str {
        &self.label
    }

    fn begin_episode(
        &mut self,
        episode: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<PolicySnapshot, AgentError> {
        let block = episode / self.plan.block_episodes;
        let sub_episode = episode % self.plan.block_episodes;
        if sub_episode == 0 {
            if episode > 0 {
                self.finalize_block(block - 1).map_err(tuner_to_agent)?;
            }
            self.open_block(block).map_err(tuner_to_agent)?;
        }
        self.sub
            .as_mut()
            .expect("sub-agent exists after open_block")
            .begin_episode(sub_episode, rng)
    }

    fn act(&self, step: usize, state: usize, rng: &mut ChaCha8Rng) -> usize {
        self.sub.as_ref().expect("sub-agent exists within an episode").act(step, state, rng)
    }

    fn observe(
        &mut self,
        step: usize,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
    ) -> Result<(), AgentError> {
        self.block_reward += reward;
        self.sub
            .as_mut()
            .expect("sub-agent exists within an episode")
            .observe(step, state, action, reward, next_state)
    }

    fn end_episode(&mut self, episode: usize) -> Result<(), AgentError> {
        if episode + 1 == self.num_episodes {
            let block = episode / self.plan.block_episodes;
            self.finalize_block(block).map_err(tuner_to_agent)?;
        }
        Ok(())
    }

    fn block_log(&self) -> Option<&[BlockRecord]> {
        Some(&self.log)
    }
}

/// Collapses a tuner error into the agent error surface so the harness can
/// treat every agent uniformly.
fn tuner_to_agent(err: TunerError) -> AgentError {
    match err {
        TunerError::Agent(e) => e,
        other => AgentError::InvalidParameter { field: "tuner", detail: other.to_string() },
    }
}

/// Gram matrix of a fresh sub-agent — identity check used by tests.
pub fn is_identity(matrix: &Array2<f64>, tol: f64) -> bool {
    let (r, c) = matrix.dim();
    if r != c {
        return false;
    }
    for i in 0..r {
        for j in 0..c {
            let target = if i == j { 1.0 } else { 0.0 };
            if (matrix[(i, j)] - target).abs() > tol {
                return false;
            }
        }
    }
    true
}
