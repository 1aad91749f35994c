//! Environment generators and the episode state machine.
//!
//! Two families are provided:
//!
//! * **Combination locks** — `num_chains` one-hot-featured chain MDPs over a
//!   shared feature map. In regime `g`, staying on chain `g` (state `g`,
//!   action `g`) succeeds with probability 0.99 and pays 1 at the final
//!   step; every other chain ejects with probability 0.99 and all other
//!   rewards are small distractors. Cycling the good chain abruptly or
//!   gradually produces the drifting benchmark environments.
//! * **Hard instances** — a 3-state construction (`s_0` plus two absorbing
//!   states) whose actions are the sign hypercube `{±1/√(d−3)}^{d−3}` and
//!   whose transition edge depends on the inner product with a hidden sign
//!   vector `v`. Piecewise-stationary sequences of these instances with
//!   independently redrawn `v` realize a target variation budget.
//!
//! All construction randomness is drawn from a keyed substream of the
//! construction seed in a fixed order, so a `(spec, seed)` pair always
//! produces the same environment, bit for bit.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linmdp::{EpisodeParams, FeatureMap, LinearMdpParams, MdpError};
use crate::rng::{keyed_rng, sample_categorical, StreamPurpose};
use crate::schedule::{ScheduleKind, ScheduleSpec};

/// Success probability of the good chain's stay transition.
const LOCK_STAY: f64 = 0.99;
/// Probability mass on the first of the two targets of a "normal" measure
/// row.
const LOCK_NORMAL_MAIN: f64 = 0.8;
/// Distractor reward range for off-chain coordinates.
const LOCK_DISTRACTOR: (f64, f64) = (0.005, 0.008);
/// Escape probability of the hard instance's start state,
/// `P(s_1 | s_0, a) = HARD_DELTA + ⟨a, v⟩`.
pub const HARD_DELTA: f64 = 0.25;
/// Cap on the sign-hypercube exponent so the action set (2^(d−3)) stays
/// enumerable.
const HARD_MAX_CUBE_DIM: usize = 12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment spec: field `{field}`: {detail}")]
    InvalidSpec { field: &'static str, detail: String },
    #[error("episode already finished; call reset before stepping")]
    EpisodeFinished,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// How episode initial states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitialStateRule {
    /// Uniform over all states.
    Uniform,
    /// Always the given state.
    Fixed { state: usize },
    /// Uniform over the chain-head states `0..num_chains` of a combination
    /// lock.
    SpecialHeads { count: usize },
}

/// A playable environment: drifting parameters plus the initial-state rule.
#[derive(Debug, Clone)]
pub struct Environment {
    params: LinearMdpParams,
    initial_rule: InitialStateRule,
}

/// Progress of one episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub episode: usize,
    pub step: usize,
    pub state: usize,
    pub done: bool,
    rng: ChaCha8Rng,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

impl Environment {
    pub fn new(params: LinearMdpParams, initial_rule: InitialStateRule) -> Result<Self, EnvError> {
        let s = params.num_states();
        match initial_rule {
            InitialStateRule::Fixed { state } if state >= s => {
                return Err(EnvError::InvalidSpec {
                    field: "initial_state",
                    detail: format!("fixed state {state} out of range (< {s})"),
                })
            }
            InitialStateRule::SpecialHeads { count } if count == 0 || count > s => {
                return Err(EnvError::InvalidSpec {
                    field: "initial_state",
                    detail: format!("special-head count {count} out of range (1..={s})"),
                })
            }
            _ => {}
        }
        Ok(Environment { params, initial_rule })
    }

    pub fn params(&self) -> &LinearMdpParams {
        &self.params
    }

    pub fn initial_rule(&self) -> InitialStateRule {
        self.initial_rule
    }

    /// Starts episode `k`. The caller supplies the episode-keyed RNG (see
    /// [`crate::rng`]); the initial-state draw, then the transition draws,
    /// consume it in order.
    pub fn reset(&self, episode: usize, mut rng: ChaCha8Rng) -> Result<EnvState, EnvError> {
        if episode >= self.params.num_episodes() {
            return Err(EnvError::Mdp(MdpError::IndexOutOfRange {
                what: "episode",
                index: episode,
                bound: self.params.num_episodes(),
            }));
        }
        let state = match self.initial_rule {
            InitialStateRule::Uniform => rng.gen_range(0..self.params.num_states()),
            InitialStateRule::Fixed { state } => state,
            InitialStateRule::SpecialHeads { count } => rng.gen_range(0..count),
        };
        Ok(EnvState { episode, step: 0, state, done: false, rng })
    }

    /// Advances one step: pays the mean reward of `(state, action)` and
    /// samples the next state by inverse CDF on the episode's RNG. The
    /// episode is done after exactly `H` steps.
    pub fn step(&self, st: &mut EnvState, action: usize) -> Result<Step, EnvError> {
        if st.done {
            return Err(EnvError::EpisodeFinished);
        }
        let reward = self.params.reward(st.episode, st.step, st.state, action)?;
        let probs = self.params.transition_probs(st.episode, st.step, st.state, action)?;
        let next_state = sample_categorical(probs.as_slice().unwrap(), &mut st.rng);
        st.step += 1;
        st.state = next_state;
        st.done = st.step == self.params.horizon();
        Ok(Step { reward, next_state, done: st.done })
    }
}

/// Feature map plus regime list of a combination-lock family; feed it to
/// [`abrupt_schedule`], [`gradual_schedule`], or [`stationary_schedule`].
#[derive(Debug, Clone)]
pub struct LockFamily {
    pub features: Arc<FeatureMap>,
    pub regimes: Vec<EpisodeParams>,
    pub horizon: usize,
    pub num_chains: usize,
}

/// Builds `num_chains` combination-lock regimes over one shared feature
/// map. Regime `g` makes chain `g` the rewarding one.
///
/// Feature map: chain states `i < num_chains` map their chain action to
/// `e_i` and every other action to `e_n` with `n` drawn uniformly from the
/// other coordinates; the remaining states map every action to a uniformly
/// drawn coordinate. Measures: in regime `g`, row `g` keeps mass
/// `0.99/0.01` on `(s_g, s_{g+1})`, the other chain rows eject with
/// `0.01/0.99`, and non-chain rows place `0.8/0.2` on two distinct states
/// drawn per step. Rewards: coordinate `g` pays 1 at the final step and 0
/// before; every other coordinate pays a distractor drawn from
/// `[0.005, 0.008]` per step. All draws happen here, once, and are frozen.
pub fn build_combination_lock(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    num_chains: usize,
    seed: u64,
) -> Result<LockFamily, EnvError> {
    if num_chains == 0 {
        return Err(EnvError::InvalidSpec {
            field: "num_chains",
            detail: "must be at least 1".into(),
        });
    }
    if num_chains + 1 > num_states {
        return Err(EnvError::InvalidSpec {
            field: "num_states",
            detail: format!("need at least num_chains + 1 = {} states", num_chains + 1),
        });
    }
    if num_chains > num_actions {
        return Err(EnvError::InvalidSpec {
            field: "num_actions",
            detail: format!("need at least num_chains = {num_chains} actions"),
        });
    }
    if num_chains > dim || dim < 2 {
        return Err(EnvError::InvalidSpec {
            field: "dim",
            detail: format!("need dim >= max(2, num_chains = {num_chains})"),
        });
    }
    let mut rng = keyed_rng(seed, 0, StreamPurpose::Construction, 0);

    // Shared one-hot feature map.
    let mut table = Array3::zeros((num_states, num_actions, dim));
    for s in 0..num_states {
        for a in 0..num_actions {
            let coord = if s < num_chains && a == s {
                s
            } else if s < num_chains {
                // Uniform over coordinates other than the chain's own.
                let raw = rng.gen_range(0..dim - 1);
                if raw >= s {
                    raw + 1
                } else {
                    raw
                }
            } else {
                rng.gen_range(0..dim)
            };
            table[(s, a, coord)] = 1.0;
        }
    }
    let features = Arc::new(FeatureMap::new(table, true)?);

    let mut regimes = Vec::with_capacity(num_chains);
    for g in 0..num_chains {
        let mut theta = Array2::zeros((horizon, dim));
        let mut mu = Array3::zeros((horizon, dim, num_states));
        for h in 0..horizon {
            for row in 0..dim {
                if row < num_chains {
                    if row == g {
                        mu[(h, row, row)] = LOCK_STAY;
                        mu[(h, row, row + 1)] = 1.0 - LOCK_STAY;
                    } else {
                        mu[(h, row, row)] = 1.0 - LOCK_STAY;
                        mu[(h, row, row + 1)] = LOCK_STAY;
                    }
                } else {
                    let first = rng.gen_range(0..num_states);
                    let raw = rng.gen_range(0..num_states - 1);
                    let second = if raw >= first { raw + 1 } else { raw };
                    mu[(h, row, first)] = LOCK_NORMAL_MAIN;
                    mu[(h, row, second)] = 1.0 - LOCK_NORMAL_MAIN;
                }
            }
            for i in 0..dim {
                theta[(h, i)] = if i == g {
                    if h == horizon - 1 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    rng.gen_range(LOCK_DISTRACTOR.0..LOCK_DISTRACTOR.1)
                };
            }
        }
        regimes.push(EpisodeParams { theta, mu });
    }
    Ok(LockFamily { features, regimes, horizon, num_chains })
}

/// Piecewise-constant cycling over the family's regimes: the good chain
/// switches every `period` episodes.
pub fn abrupt_schedule(
    family: &LockFamily,
    period: usize,
    episodes: usize,
) -> Result<LinearMdpParams, EnvError> {
    schedule_family(family, ScheduleKind::AbruptCycle { period }, period, episodes)
}

/// Linear drift between consecutive regimes over each `period`; endpoints
/// coincide with the abrupt schedule's regimes. Convexity keeps every
/// interpolated episode a valid linear MDP.
pub fn gradual_schedule(
    family: &LockFamily,
    period: usize,
    episodes: usize,
) -> Result<LinearMdpParams, EnvError> {
    schedule_family(family, ScheduleKind::GradualCycle { period }, period, episodes)
}

/// Regime 0 for every episode.
pub fn stationary_schedule(
    family: &LockFamily,
    episodes: usize,
) -> Result<LinearMdpParams, EnvError> {
    schedule_family(family, ScheduleKind::Stationary, 1, episodes)
}

fn schedule_family(
    family: &LockFamily,
    kind: ScheduleKind,
    period: usize,
    episodes: usize,
) -> Result<LinearMdpParams, EnvError> {
    if period == 0 {
        return Err(EnvError::InvalidSpec { field: "period", detail: "must be positive".into() });
    }
    if episodes == 0 {
        return Err(EnvError::InvalidSpec { field: "episodes", detail: "must be positive".into() });
    }
    let num_regimes =
        if matches!(kind, ScheduleKind::Stationary) { 1 } else { family.regimes.len() };
    let spec = ScheduleSpec { kind, num_regimes };
    Ok(LinearMdpParams::new(
        family.features.clone(),
        family.horizon,
        episodes,
        family.regimes.clone(),
        spec,
    )?)
}

/// Spec of the 3-state hard instance. `dim` is the ambient feature
/// dimension `d`; the action set is the sign hypercube of dimension
/// `d − 3` (so `2^(d−3)` actions). `total_steps = T` must satisfy
/// `T ≥ 64·(d−3)²·H` so the hidden vector's magnitude keeps the escape
/// probability inside `[0, 1]`, with margin.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HardInstanceSpec {
    pub dim: usize,
    pub horizon: usize,
    pub total_steps: usize,
}

fn check_hard_dims(dim: usize, horizon: usize) -> Result<usize, EnvError> {
    if dim < 4 {
        return Err(EnvError::InvalidSpec {
            field: "dim",
            detail: "need dim >= 4 (d − 3 >= 1)".into(),
        });
    }
    let m = dim - 3;
    if m > HARD_MAX_CUBE_DIM {
        return Err(EnvError::InvalidSpec {
            field: "dim",
            detail: format!(
                "d − 3 = {m} exceeds the enumerable cap {HARD_MAX_CUBE_DIM} (2^(d−3) actions)"
            ),
        });
    }
    if horizon < 2 {
        return Err(EnvError::InvalidSpec { field: "horizon", detail: "need horizon >= 2".into() });
    }
    Ok(m)
}

/// Feature table of the hard instance: `φ(s_0, a) = (0, 1, δ, a)`,
/// `φ(s_1, ·) = e_0`, `φ(s_2, ·) = e_1`.
fn hard_feature_map(dim: usize, m: usize) -> Result<Arc<FeatureMap>, EnvError> {
    let num_actions = 1usize << m;
    let mut table = Array3::zeros((3, num_actions, dim));
    let scale = 1.0 / (m as f64).sqrt();
    for a in 0..num_actions {
        table[(0, a, 1)] = 1.0;
        table[(0, a, 2)] = HARD_DELTA;
        for j in 0..m {
            table[(0, a, 3 + j)] = if (a >> j) & 1 == 1 { scale } else { -scale };
        }
        table[(1, a, 0)] = 1.0;
        table[(2, a, 1)] = 1.0;
    }
    // ‖φ(s_0, ·)‖² = 1 + δ² + 1 > 1: deliberately unnormalized.
    Ok(Arc::new(FeatureMap::new(table, false)?))
}

/// Parameters of one hard-instance regime for hidden vector `v`:
/// `μ(·, s_1) = (1, 0, 1, v)`, `μ(·, s_2) = (0, 1, −1, −v)`,
/// `θ = (1, 0, …, 0)`, identical at every step.
fn hard_regime(dim: usize, horizon: usize, v: &[f64]) -> EpisodeParams {
    let mut theta = Array2::zeros((horizon, dim));
    let mut mu = Array3::zeros((horizon, dim, 3));
    for h in 0..horizon {
        theta[(h, 0)] = 1.0;
        mu[(h, 0, 1)] = 1.0;
        mu[(h, 1, 2)] = 1.0;
        mu[(h, 2, 1)] = 1.0;
        mu[(h, 2, 2)] = -1.0;
        for (j, &vj) in v.iter().enumerate() {
            mu[(h, 3 + j, 1)] = vj;
            mu[(h, 3 + j, 2)] = -vj;
        }
    }
    EpisodeParams { theta, mu }
}

/// Builds the stationary hard instance: hidden vector signs drawn from the
/// construction seed with per-coordinate magnitude `√((d−3)·H / T)`. Always
/// starts episodes at the probing state `s_0`.
pub fn build_hard_instance(spec: HardInstanceSpec, seed: u64) -> Result<Environment, EnvError> {
    let m = check_hard_dims(spec.dim, spec.horizon)?;
    if !spec.total_steps.is_multiple_of(spec.horizon) {
        return Err(EnvError::InvalidSpec {
            field: "total_steps",
            detail: format!("T = {} must be a multiple of H = {}", spec.total_steps, spec.horizon),
        });
    }
    let required = 64 * m * m * spec.horizon;
    if spec.total_steps < required {
        return Err(EnvError::InvalidSpec {
            field: "total_steps",
            detail: format!(
                "T = {} violates the precondition T >= 64*(d-3)^2*H = {required}",
                spec.total_steps
            ),
        });
    }
    let episodes = spec.total_steps / spec.horizon;
    let magnitude = (m as f64 * spec.horizon as f64 / spec.total_steps as f64).sqrt();
    let mut rng = keyed_rng(seed, 0, StreamPurpose::Construction, 0);
    let v: Vec<f64> =
        (0..m).map(|_| if rng.gen::<bool>() { magnitude } else { -magnitude }).collect();
    let features = hard_feature_map(spec.dim, m)?;
    let params = LinearMdpParams::new(
        features,
        spec.horizon,
        episodes,
        vec![hard_regime(spec.dim, spec.horizon, &v)],
        ScheduleSpec::stationary(),
    )?;
    Environment::new(params, InitialStateRule::Fixed { state: 0 })
}

/// Worst-case measured drift across one interval boundary of the
/// piecewise-stationary hard instance: both measure columns carry `±v`, all
/// `d − 3` coordinates can flip by `2·√((d−3)/N)`, and the budget
/// definition sums the Frobenius change over all `H` steps.
fn hard_boundary_worst_case(m: usize, horizon: usize, n: usize) -> f64 {
    horizon as f64 * 2.0 * std::f64::consts::SQRT_2 * m as f64 / (n as f64).sqrt()
}

/// Piecewise-stationary sequence of hard instances realizing variation
/// budget at most `b`.
///
/// The episode axis is split into intervals of `N` episodes; each interval
/// draws an independent hidden vector with per-coordinate magnitude
/// `√((d−3)/N)`. `N` is the smallest interval length whose worst-case
/// measured drift, summed over the `⌈K/N⌉ − 1` interior boundaries, stays
/// within `b` — and at least `16·(d−3)²`, the validity floor keeping the
/// escape probability nonnegative. A budget too small to afford any switch
/// degenerates to a single stationary interval.
pub fn lower_bound_schedule(
    b: f64,
    dim: usize,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<Environment, EnvError> {
    let m = check_hard_dims(dim, horizon)?;
    if b <= 0.0 {
        return Err(EnvError::InvalidSpec {
            field: "b",
            detail: "variation budget must be positive".into(),
        });
    }
    if episodes == 0 {
        return Err(EnvError::InvalidSpec { field: "episodes", detail: "must be positive".into() });
    }
    let validity_floor = 16 * m * m;
    if episodes < validity_floor {
        return Err(EnvError::InvalidSpec {
            field: "episodes",
            detail: format!(
                "need at least 16*(d-3)^2 = {validity_floor} episodes for a valid hidden-vector magnitude"
            ),
        });
    }
    // Smallest N whose summed worst-case boundary drift fits the budget; the
    // left side is nonincreasing in N and hits 0 at N = K, so the scan
    // terminates.
    let mut n = validity_floor;
    while n < episodes {
        // One interior boundary per interval beyond the first; the count
        // must match the ⌈K/N⌉ intervals actually built below.
        let boundaries = episodes.div_ceil(n) - 1;
        if boundaries as f64 * hard_boundary_worst_case(m, horizon, n) <= b {
            break;
        }
        n += 1;
    }
    let n = n.min(episodes);

    let num_intervals = episodes.div_ceil(n);
    let magnitude = (m as f64 / n as f64).sqrt();
    let mut rng = keyed_rng(seed, 0, StreamPurpose::Construction, 0);
    let regimes: Vec<EpisodeParams> = (0..num_intervals)
        .map(|_| {
            let v: Vec<f64> =
                (0..m).map(|_| if rng.gen::<bool>() { magnitude } else { -magnitude }).collect();
            hard_regime(dim, horizon, &v)
        })
        .collect();
    let features = hard_feature_map(dim, m)?;
    let params = LinearMdpParams::new(
        features,
        horizon,
        episodes,
        regimes,
        ScheduleSpec {
            kind: ScheduleKind::Intervals { interval_len: n },
            num_regimes: num_intervals,
        },
    )?;
    Environment::new(params, InitialStateRule::Fixed { state: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset_lock() -> LockFamily {
        build_combination_lock(15, 7, 10, 10, 5, 7).unwrap()
    }

    #[test]
    fn lock_good_chain_transitions_and_rewards() {
        let family = preset_lock();
        let params = abrupt_schedule(&family, 100, 2000).unwrap();
        // Episodes 0..100 run regime 0: chain 0 is good.
        for h in 0..10 {
            let row = params.transition_probs(0, h, 0, 0).unwrap();
            assert!((row[0] - 0.99).abs() < 1e-12);
            assert!((row[1] - 0.01).abs() < 1e-12);
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // Chain 1 is not good in regime 0: its stay mass is 0.01.
        let row = params.transition_probs(0, 0, 1, 1).unwrap();
        assert!((row[1] - 0.01).abs() < 1e-12);
        assert!((row[2] - 0.99).abs() < 1e-12);
        // Good chain pays 1 exactly at the final step, 0 before.
        assert_eq!(params.reward(0, 9, 0, 0).unwrap(), 1.0);
        for h in 0..9 {
            assert_eq!(params.reward(0, h, 0, 0).unwrap(), 0.0);
        }
        // Off-chain rewards are distractors.
        let r = params.reward(0, 3, 1, 1).unwrap();
        assert!((0.005..=0.008).contains(&r), "distractor {r}");
    }

    #[test]
    fn lock_regimes_rotate_with_abrupt_schedule() {
        let family = preset_lock();
        let params = abrupt_schedule(&family, 100, 2000).unwrap();
        // Episode 100 runs regime 1: chain 1 becomes good ...
        let row = params.transition_probs(100, 0, 1, 1).unwrap();
        assert!((row[1] - 0.99).abs() < 1e-12);
        // ... and the cycle wraps at episode 500.
        let row = params.transition_probs(500, 0, 0, 0).unwrap();
        assert!((row[0] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn lock_construction_is_deterministic_in_the_seed() {
        let a = build_combination_lock(15, 7, 10, 10, 5, 7).unwrap();
        let b = build_combination_lock(15, 7, 10, 10, 5, 7).unwrap();
        assert_eq!(a.features.table(), b.features.table());
        for (ra, rb) in a.regimes.iter().zip(&b.regimes) {
            assert_eq!(ra, rb);
        }
        let c = build_combination_lock(15, 7, 10, 10, 5, 8).unwrap();
        assert_ne!(a.features.table(), c.features.table());
    }

    #[test]
    fn lock_rejects_inconsistent_dims() {
        assert!(matches!(
            build_combination_lock(5, 7, 10, 10, 5, 7),
            Err(EnvError::InvalidSpec { field: "num_states", .. })
        ));
        assert!(matches!(
            build_combination_lock(15, 4, 10, 10, 5, 7),
            Err(EnvError::InvalidSpec { field: "num_actions", .. })
        ));
        assert!(matches!(
            build_combination_lock(15, 7, 10, 4, 5, 7),
            Err(EnvError::InvalidSpec { field: "dim", .. })
        ));
    }

    #[test]
    fn hard_instance_probabilities_match_the_inner_product() {
        // d = 7, H = 10, T = 10240: per-coordinate magnitude
        // √(4·10/10240) = 1/16, so the aligned action reaches
        // P(s_1) = 1/4 + 4·(1/2)·(1/16) = 0.375 and the anti-aligned one
        // 0.125.
        let env =
            build_hard_instance(HardInstanceSpec { dim: 7, horizon: 10, total_steps: 10240 }, 3)
                .unwrap();
        let params = env.params();
        assert_eq!(params.num_actions(), 16);
        let probs: Vec<f64> =
            (0..16).map(|a| params.transition_probs(0, 0, 0, a).unwrap()[1]).collect();
        let max = probs.iter().cloned().fold(f64::MIN, f64::max);
        let min = probs.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(max, 0.375);
        assert_eq!(min, 0.125);
        // Absorbing states and rewards.
        let row = params.transition_probs(0, 3, 1, 5).unwrap();
        assert_eq!(row[1], 1.0);
        let row = params.transition_probs(0, 3, 2, 5).unwrap();
        assert_eq!(row[2], 1.0);
        assert_eq!(params.reward(0, 2, 1, 0).unwrap(), 1.0);
        assert_eq!(params.reward(0, 2, 0, 0).unwrap(), 0.0);
        assert_eq!(params.reward(0, 2, 2, 0).unwrap(), 0.0);
        // The escape rows always sum to 1.
        for a in 0..16 {
            let row = params.transition_probs(0, 0, 0, a).unwrap();
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn hard_instance_enforces_the_horizon_precondition() {
        let err =
            build_hard_instance(HardInstanceSpec { dim: 7, horizon: 10, total_steps: 10230 }, 3)
                .unwrap_err();
        assert!(matches!(err, EnvError::InvalidSpec { field: "total_steps", .. }));
        // 10240 = 64·16·10 is exactly the boundary and is accepted.
        assert!(build_hard_instance(
            HardInstanceSpec { dim: 7, horizon: 10, total_steps: 10240 },
            3
        )
        .is_ok());
        let err =
            build_hard_instance(HardInstanceSpec { dim: 7, horizon: 10, total_steps: 6400 }, 3)
                .unwrap_err();
        assert!(err.to_string().contains("64*(d-3)^2*H"));
    }

    #[test]
    fn hard_instance_caps_the_action_space() {
        let err = build_hard_instance(
            HardInstanceSpec { dim: 20, horizon: 10, total_steps: 64 * 17 * 17 * 10 },
            3,
        )
        .unwrap_err();
        assert!(matches!(err, EnvError::InvalidSpec { field: "dim", .. }));
    }

    #[test]
    fn lower_bound_intervals_fit_the_budget() {
        let env = lower_bound_schedule(25.0, 7, 10, 1024, 11).unwrap();
        let params = env.params();
        // d−3 = 4 ⇒ validity floor N ≥ 256; with B = 25 the scan accepts
        // 256 (3 boundaries × 10·2√2·4/16 ≈ 21.2 ≤ 25).
        match params.schedule().kind {
            ScheduleKind::Intervals { interval_len } => assert_eq!(interval_len, 256),
            other => panic!("unexpected schedule {other:?}"),
        }
        assert_eq!(params.schedule().num_regimes, 4);
        let budget = params.variation_budgets().unwrap();
        assert!(budget.b_total <= 25.0, "measured budget {} > 25", budget.b_total);
        assert!(budget.b_theta == 0.0);
    }

    #[test]
    fn lower_bound_tiny_budget_degenerates_to_stationary() {
        let env = lower_bound_schedule(1e-6, 7, 10, 1024, 11).unwrap();
        let budget = env.params().variation_budgets().unwrap();
        assert_eq!(budget.b_total, 0.0);
        assert_eq!(env.params().schedule().num_regimes, 1);
    }

    #[test]
    fn episodes_run_exactly_horizon_steps() {
        let family = preset_lock();
        let params = stationary_schedule(&family, 4).unwrap();
        let env = Environment::new(params, InitialStateRule::Uniform).unwrap();
        let rng = keyed_rng(42, 0, StreamPurpose::EnvEpisode, 0);
        let mut st = env.reset(0, rng).unwrap();
        for h in 0..10 {
            let step = env.step(&mut st, 0).unwrap();
            assert_eq!(step.done, h == 9);
        }
        assert!(matches!(env.step(&mut st, 0), Err(EnvError::EpisodeFinished)));
    }

    #[test]
    fn reset_is_reproducible_per_episode_key() {
        let family = preset_lock();
        let params = stationary_schedule(&family, 8).unwrap();
        let env = Environment::new(params, InitialStateRule::Uniform).unwrap();
        let states_a: Vec<usize> = (0..8)
            .map(|k| {
                env.reset(k, keyed_rng(42, 1, StreamPurpose::EnvEpisode, k as u64)).unwrap().state
            })
            .collect();
        let states_b: Vec<usize> = (0..8)
            .map(|k| {
                env.reset(k, keyed_rng(42, 1, StreamPurpose::EnvEpisode, k as u64)).unwrap().state
            })
            .collect();
        assert_eq!(states_a, states_b);
    }

    #[test]
    fn special_heads_rule_draws_only_chain_heads() {
        let family = preset_lock();
        let params = stationary_schedule(&family, 64).unwrap();
        let env = Environment::new(params, InitialStateRule::SpecialHeads { count: 5 }).unwrap();
        for k in 0..64 {
            let st = env.reset(k, keyed_rng(9, 0, StreamPurpose::EnvEpisode, k as u64)).unwrap();
            assert!(st.state < 5);
        }
    }
}
