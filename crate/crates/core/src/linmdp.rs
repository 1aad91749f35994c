//! Episodic linear MDPs with per-episode parameter drift.
//!
//! An instance is described by a feature map `φ : S × A → R^d` shared by all
//! episodes, plus per-episode parameters `(θ_h, μ_h)` for each step
//! `h ∈ 0..H`: transition masses are `P_h(s' | s, a) = φ(s,a)ᵀ μ_h(·, s')`
//! and mean rewards are `r_h(s, a) = φ(s,a)ᵀ θ_h`. Drift is expressed as a
//! small set of regimes plus a [`ScheduleSpec`] assigning (a blend of)
//! regimes to every episode; see [`crate::schedule`].
//!
//! Numerical contract: transition rows may carry floating residue. Entries
//! in `[-1e-12, 0)` are clamped to zero and the row is renormalized as long
//! as its mass is within `1e-9` of one; anything worse is an error, not a
//! warning. Rewards must lie in `[-1e-12, 1 + 1e-9]` and are clamped into
//! `[0, 1]` after the check.

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1};
use thiserror::Error;

use crate::schedule::{Assignment, EpisodeKey, ScheduleKind, ScheduleSpec};

/// Negative transition mass below this magnitude is floating residue and is
/// clamped to zero; anything more negative is a modeling error.
pub const PROB_CLAMP_TOL: f64 = 1e-12;
/// A transition row's mass must be within this distance of 1 to qualify for
/// renormalization.
pub const PROB_SUM_TOL: f64 = 1e-9;
/// Rewards may undershoot 0 by `PROB_CLAMP_TOL` and overshoot 1 by this.
pub const REWARD_UPPER_TOL: f64 = 1e-9;
/// Slack on the `‖·‖ ≤ √d` normalization checks.
pub const NORM_TOL: f64 = 1e-9;

/// Errors from constructing or querying a linear MDP.
#[derive(Debug, Error)]
pub enum MdpError {
    #[error("{what} index {index} out of range (< {bound} required)")]
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error(
        "invalid transition distribution at episode {episode}, step {step}, \
         state {state}, action {action}: {detail}"
    )]
    InvalidDistribution { episode: usize, step: usize, state: usize, action: usize, detail: String },
    #[error(
        "invalid reward {value} at episode {episode}, step {step}, \
         state {state}, action {action} (must lie in [0, 1] up to tolerance)"
    )]
    InvalidReward { episode: usize, step: usize, state: usize, action: usize, value: f64 },
    #[error("feature norm {norm} exceeds 1 at state {state}, action {action} (normalized map)")]
    FeatureNormExceeded { state: usize, action: usize, norm: f64 },
    #[error("{what} norm {norm} exceeds sqrt(d) = {bound} in regime {regime}, step {step}")]
    ParamNormExceeded { what: &'static str, regime: usize, step: usize, norm: f64, bound: f64 },
    #[error("schedule references {required} regimes but only {available} are defined")]
    MissingRegimes { required: usize, available: usize },
}

/// Feature map `φ(s, a) ∈ R^d`, stored dense as an `(S, A, d)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    table: Array3<f64>,
    normalized: bool,
}

impl FeatureMap {
    /// Builds a feature map from a dense table. When `normalized` is true
    /// (the regular case), every `‖φ(s,a)‖₂ ≤ 1` up to tolerance is
    /// enforced; generators of deliberately unnormalized instances pass
    /// `normalized: false` to opt out.
    pub fn new(table: Array3<f64>, normalized: bool) -> Result<Self, MdpError> {
        let (s, a, d) = table.dim();
        if normalized {
            for si in 0..s {
                for ai in 0..a {
                    let norm = table
                        .slice(ndarray::s![si, ai, ..])
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    if norm > 1.0 + NORM_TOL {
                        return Err(MdpError::FeatureNormExceeded { state: si, action: ai, norm });
                    }
                }
            }
        }
        Ok(FeatureMap { num_states: s, num_actions: a, dim: d, table, normalized })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Feature vector for `(s, a)`.
    pub fn phi(&self, state: usize, action: usize) -> ArrayView1<'_, f64> {
        self.table.slice(ndarray::s![state, action, ..])
    }

    pub fn table(&self) -> &Array3<f64> {
        &self.table
    }
}

/// One regime's parameters: `theta` is `(H, d)`, `mu` is `(H, d, S)` (row
/// `j` of `mu[h]` is the measure vector paired with feature coordinate `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeParams {
    pub theta: Array2<f64>,
    pub mu: Array3<f64>,
}

impl EpisodeParams {
    /// Convex blend `(1−λ)·a + λ·b`. At `λ = 1` the result equals `b`
    /// bitwise, which keeps gradual-drift endpoints exact.
    pub fn blend(a: &EpisodeParams, b: &EpisodeParams, lambda: f64) -> EpisodeParams {
        let w0 = 1.0 - lambda;
        let mut theta = a.theta.clone();
        theta.zip_mut_with(&b.theta, |x, &y| *x = w0 * *x + lambda * y);
        let mut mu = a.mu.clone();
        mu.zip_mut_with(&b.mu, |x, &y| *x = w0 * *x + lambda * y);
        EpisodeParams { theta, mu }
    }
}

/// A full drifting instance: shared feature map, regime list, schedule, and
/// horizon/episode-count bookkeeping.
#[derive(Debug, Clone)]
pub struct LinearMdpParams {
    features: Arc<FeatureMap>,
    horizon: usize,
    episodes: usize,
    regimes: Vec<Arc<EpisodeParams>>,
    schedule: ScheduleSpec,
}

impl LinearMdpParams {
    /// Validates dimensional agreement between the feature map, regimes, and
    /// schedule, and (for normalized maps) the `‖θ_h‖ ≤ √d`, `‖μ_h‖_F ≤ √d`
    /// parameter norms.
    pub fn new(
        features: Arc<FeatureMap>,
        horizon: usize,
        episodes: usize,
        regimes: Vec<EpisodeParams>,
        schedule: ScheduleSpec,
    ) -> Result<Self, MdpError> {
        let d = features.dim();
        let s = features.num_states();
        if schedule.num_regimes > regimes.len() {
            return Err(MdpError::MissingRegimes {
                required: schedule.num_regimes,
                available: regimes.len(),
            });
        }
        let bound = (d as f64).sqrt() + NORM_TOL;
        for (ri, regime) in regimes.iter().enumerate() {
            if regime.theta.dim() != (horizon, d) {
                return Err(MdpError::DimensionMismatch {
                    what: "theta rows",
                    expected: horizon * d,
                    actual: regime.theta.len(),
                });
            }
            if regime.mu.dim() != (horizon, d, s) {
                return Err(MdpError::DimensionMismatch {
                    what: "mu entries",
                    expected: horizon * d * s,
                    actual: regime.mu.len(),
                });
            }
            if features.is_normalized() {
                for h in 0..horizon {
                    let tnorm = regime
                        .theta
                        .slice(ndarray::s![h, ..])
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    if tnorm > bound {
                        return Err(MdpError::ParamNormExceeded {
                            what: "theta",
                            regime: ri,
                            step: h,
                            norm: tnorm,
                            bound,
                        });
                    }
                    let mnorm = regime
                        .mu
                        .slice(ndarray::s![h, .., ..])
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    if mnorm > bound {
                        return Err(MdpError::ParamNormExceeded {
                            what: "mu",
                            regime: ri,
                            step: h,
                            norm: mnorm,
                            bound,
                        });
                    }
                }
            }
        }
        Ok(LinearMdpParams {
            features,
            horizon,
            episodes,
            regimes: regimes.into_iter().map(Arc::new).collect(),
            schedule,
        })
    }

    /// Wraps an explicit per-episode parameter list (one regime per episode,
    /// piecewise over unit intervals).
    pub fn from_episode_list(
        features: Arc<FeatureMap>,
        horizon: usize,
        per_episode: Vec<EpisodeParams>,
    ) -> Result<Self, MdpError> {
        let episodes = per_episode.len();
        let schedule = ScheduleSpec {
            kind: ScheduleKind::Intervals { interval_len: 1 },
            num_regimes: episodes,
        };
        Self::new(features, horizon, episodes, per_episode, schedule)
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes
    }

    pub fn num_states(&self) -> usize {
        self.features.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.features.num_actions()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn schedule(&self) -> &ScheduleSpec {
        &self.schedule
    }

    pub fn regimes(&self) -> &[Arc<EpisodeParams>] {
        &self.regimes
    }

    fn check_episode(&self, k: usize) -> Result<(), MdpError> {
        if k >= self.episodes {
            return Err(MdpError::IndexOutOfRange {
                what: "episode",
                index: k,
                bound: self.episodes,
            });
        }
        Ok(())
    }

    /// Identity key of episode `k`'s parameters (equal keys ⇒ bitwise-equal
    /// parameters), for snapshot caching.
    pub fn episode_key(&self, k: usize) -> EpisodeKey {
        self.schedule.episode_key(k)
    }

    /// Materializes episode `k`'s parameters. Pure assignments borrow the
    /// regime; blends allocate. Regimes are frozen at construction, so
    /// repeated calls are bitwise-stable and safe from any thread.
    pub fn episode_params(&self, k: usize) -> Result<Cow<'_, EpisodeParams>, MdpError> {
        self.check_episode(k)?;
        Ok(match self.schedule.assignment(k) {
            Assignment::Pure(i) => Cow::Borrowed(self.regimes[i].as_ref()),
            Assignment::Blend { from, to, lambda } => Cow::Owned(EpisodeParams::blend(
                self.regimes[from].as_ref(),
                self.regimes[to].as_ref(),
                lambda,
            )),
        })
    }

    /// Transition distribution `P_h(· | s, a)` for episode `k`, cleaned per
    /// the module-level numerical contract.
    pub fn transition_probs(
        &self,
        k: usize,
        h: usize,
        state: usize,
        action: usize,
    ) -> Result<Array1<f64>, MdpError> {
        let params = self.episode_params(k)?;
        self.transition_probs_from(&params, k, h, state, action)
    }

    /// Same as [`Self::transition_probs`] but against already-materialized
    /// episode parameters (used by the tabular conversion to avoid repeated
    /// blending).
    pub fn transition_probs_from(
        &self,
        params: &EpisodeParams,
        k: usize,
        h: usize,
        state: usize,
        action: usize,
    ) -> Result<Array1<f64>, MdpError> {
        self.check_indices(h, state, action)?;
        let phi = self.features.phi(state, action);
        let mu_h = params.mu.slice(ndarray::s![h, .., ..]);
        let mut probs = phi.dot(&mu_h);
        let mut sum = 0.0;
        for (j, p) in probs.iter_mut().enumerate() {
            if *p < 0.0 {
                if *p < -PROB_CLAMP_TOL {
                    return Err(MdpError::InvalidDistribution {
                        episode: k,
                        step: h,
                        state,
                        action,
                        detail: format!("negative mass {} on next state {j}", *p),
                    });
                }
                *p = 0.0;
            }
            sum += *p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(MdpError::InvalidDistribution {
                episode: k,
                step: h,
                state,
                action,
                detail: format!("row mass {sum} deviates from 1 beyond tolerance"),
            });
        }
        probs.mapv_inplace(|p| p / sum);
        Ok(probs)
    }

    /// Mean reward `r_h(s, a)` for episode `k`, checked against `[0, 1]` up
    /// to tolerance and clamped into `[0, 1]`.
    pub fn reward(&self, k: usize, h: usize, state: usize, action: usize) -> Result<f64, MdpError> {
        let params = self.episode_params(k)?;
        self.reward_from(&params, k, h, state, action)
    }

    /// See [`Self::reward`].
    pub fn reward_from(
        &self,
        params: &EpisodeParams,
        k: usize,
        h: usize,
        state: usize,
        action: usize,
    ) -> Result<f64, MdpError> {
        self.check_indices(h, state, action)?;
        let phi = self.features.phi(state, action);
        let r = phi.dot(&params.theta.slice(ndarray::s![h, ..]));
        if !(-PROB_CLAMP_TOL..=1.0 + REWARD_UPPER_TOL).contains(&r) {
            return Err(MdpError::InvalidReward { episode: k, step: h, state, action, value: r });
        }
        Ok(r.clamp(0.0, 1.0))
    }

    fn check_indices(&self, h: usize, state: usize, action: usize) -> Result<(), MdpError> {
        if h >= self.horizon {
            return Err(MdpError::IndexOutOfRange { what: "step", index: h, bound: self.horizon });
        }
        if state >= self.num_states() {
            return Err(MdpError::IndexOutOfRange {
                what: "state",
                index: state,
                bound: self.num_states(),
            });
        }
        if action >= self.num_actions() {
            return Err(MdpError::IndexOutOfRange {
                what: "action",
                index: action,
                bound: self.num_actions(),
            });
        }
        Ok(())
    }

    /// Dense tabular view of episode `k` (all transition rows and rewards),
    /// with the same cleaning/validation as the per-entry accessors.
    pub fn to_tabular(&self, k: usize) -> Result<TabularSnapshot, MdpError> {
        self.check_episode(k)?;
        let params = self.episode_params(k)?;
        let (hh, ss, aa) = (self.horizon, self.num_states(), self.num_actions());
        let mut transitions = Array4::zeros((hh, ss, aa, ss));
        let mut rewards = Array3::zeros((hh, ss, aa));
        for h in 0..hh {
            for s in 0..ss {
                for a in 0..aa {
                    let row = self.transition_probs_from(&params, k, h, s, a)?;
                    transitions.slice_mut(ndarray::s![h, s, a, ..]).assign(&row);
                    rewards[(h, s, a)] = self.reward_from(&params, k, h, s, a)?;
                }
            }
        }
        Ok(TabularSnapshot { episode: k, transitions, rewards })
    }

    /// Exhaustively validates every episode, step, state, and action,
    /// returning all violations (empty means the instance is well formed).
    /// Episodes sharing a parameter key are checked once.
    pub fn validate(&self) -> Vec<Violation> {
        let mut seen = std::collections::HashSet::new();
        let mut violations = Vec::new();
        for k in 0..self.episodes {
            if !seen.insert(self.episode_key(k)) {
                continue;
            }
            let params = match self.episode_params(k) {
                Ok(p) => p,
                Err(e) => {
                    violations.push(Violation {
                        episode: k,
                        step: 0,
                        state: 0,
                        action: 0,
                        detail: e.to_string(),
                    });
                    continue;
                }
            };
            for h in 0..self.horizon {
                for s in 0..self.num_states() {
                    for a in 0..self.num_actions() {
                        if let Err(e) = self.transition_probs_from(&params, k, h, s, a) {
                            violations.push(Violation {
                                episode: k,
                                step: h,
                                state: s,
                                action: a,
                                detail: e.to_string(),
                            });
                        }
                        if let Err(e) = self.reward_from(&params, k, h, s, a) {
                            violations.push(Violation {
                                episode: k,
                                step: h,
                                state: s,
                                action: a,
                                detail: e.to_string(),
                            });
                        }
                    }
                }
            }
        }
        violations
    }

    /// Total parameter drift across the episode sequence:
    /// `b_theta = Σ_k Σ_h ‖θ_{h,k} − θ_{h,k−1}‖₂` and
    /// `b_mu = Σ_k Σ_h ‖μ_{h,k} − μ_{h,k−1}‖_F`, summed over `k = 1..K`
    /// (outer) and `h` (inner).
    pub fn variation_budgets(&self) -> Result<VariationBudgets, MdpError> {
        let mut b_theta = 0.0;
        let mut b_mu = 0.0;
        let mut prev = self.episode_params(0)?.into_owned();
        for k in 1..self.episodes {
            let cur = self.episode_params(k)?;
            for h in 0..self.horizon {
                let dt = (&cur.theta.slice(ndarray::s![h, ..])
                    - &prev.theta.slice(ndarray::s![h, ..]))
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                b_theta += dt;
                let dm = (&cur.mu.slice(ndarray::s![h, .., ..])
                    - &prev.mu.slice(ndarray::s![h, .., ..]))
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                b_mu += dm;
            }
            prev = cur.into_owned();
        }
        Ok(VariationBudgets { b_theta, b_mu, b_total: b_theta + b_mu })
    }

    /// Drift across each consecutive episode boundary: entry `i` holds
    /// `(Σ_h ‖θ_{h,i+1} − θ_{h,i}‖₂, Σ_h ‖μ_{h,i+1} − μ_{h,i}‖_F)`.
    /// Used to derive per-epoch local budgets for variation-aware bonus
    /// schedules.
    pub fn boundary_variations(&self) -> Result<Vec<(f64, f64)>, MdpError> {
        let mut out = Vec::with_capacity(self.episodes.saturating_sub(1));
        let mut prev = self.episode_params(0)?.into_owned();
        for k in 1..self.episodes {
            let cur = self.episode_params(k)?;
            let mut dt_sum = 0.0;
            let mut dm_sum = 0.0;
            for h in 0..self.horizon {
                dt_sum += (&cur.theta.slice(ndarray::s![h, ..])
                    - &prev.theta.slice(ndarray::s![h, ..]))
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                dm_sum += (&cur.mu.slice(ndarray::s![h, .., ..])
                    - &prev.mu.slice(ndarray::s![h, .., ..]))
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
            }
            out.push((dt_sum, dm_sum));
            prev = cur.into_owned();
        }
        Ok(out)
    }
}

/// One invalid `(episode, step, state, action)` cell found by
/// [`LinearMdpParams::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub episode: usize,
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub detail: String,
}

/// Dense tabular form of one episode's MDP.
#[derive(Debug, Clone)]
pub struct TabularSnapshot {
    pub episode: usize,
    /// `(H, S, A, S)`: `transitions[(h, s, a, s')] = P_h(s' | s, a)`.
    pub transitions: Array4<f64>,
    /// `(H, S, A)` mean rewards.
    pub rewards: Array3<f64>,
}

impl TabularSnapshot {
    pub fn horizon(&self) -> usize {
        self.transitions.dim().0
    }

    pub fn num_states(&self) -> usize {
        self.transitions.dim().1
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.dim().2
    }
}

/// Total drift of an episode sequence, split by parameter kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationBudgets {
    pub b_theta: f64,
    pub b_mu: f64,
    pub b_total: f64,
}
