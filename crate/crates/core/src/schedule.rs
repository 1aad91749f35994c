//! Drift schedules: how per-episode MDP parameters are assigned from a small
//! set of regimes.
//!
//! A schedule maps a zero-based episode index `k ∈ 0..K` to either a single
//! regime or a convex blend of two consecutive regimes. Schedules are pure
//! descriptions; materialization lives in [`crate::linmdp`].

use serde::{Deserialize, Serialize};

/// The drift pattern over episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Regime 0 for every episode.
    Stationary,
    /// Piecewise-constant cycling: episodes `[0, period)` use regime 0,
    /// `[period, 2·period)` regime 1, …, wrapping around the regime list.
    AbruptCycle { period: usize },
    /// Linear drift: during the `p`-th period the parameters move from
    /// regime `p mod R` toward regime `(p+1) mod R`; at offset `j` within
    /// the period the blend weight on the target regime is `(j+1)/period`,
    /// so the final episode of the period sits exactly on the target.
    GradualCycle { period: usize },
    /// Piecewise-constant intervals without wrap-around: episode `k` uses
    /// regime `k / interval_len`. The regime list must cover
    /// `ceil(K / interval_len)` entries.
    Intervals { interval_len: usize },
}

/// A schedule over a fixed number of regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub num_regimes: usize,
}

/// Where episode `k`'s parameters come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    /// Exactly the parameters of one regime.
    Pure(usize),
    /// Convex blend `(1−λ)·regime[from] + λ·regime[to]`.
    Blend { from: usize, to: usize, lambda: f64 },
}

/// Hashable identity of an episode's parameter set. Episodes with equal keys
/// have bitwise-identical parameters, which the harness exploits to share
/// tabular snapshots and planning results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpisodeKey {
    Pure(usize),
    /// Blend identified by the regime pair and the exact rational weight
    /// `num/den` (so distinct offsets never collide).
    Blend {
        from: usize,
        to: usize,
        num: u32,
        den: u32,
    },
}

impl ScheduleSpec {
    /// Stationary single-regime schedule.
    pub fn stationary() -> Self {
        ScheduleSpec { kind: ScheduleKind::Stationary, num_regimes: 1 }
    }

    /// Parameter source for episode `k`.
    pub fn assignment(&self, k: usize) -> Assignment {
        let r = self.num_regimes;
        match self.kind {
            ScheduleKind::Stationary => Assignment::Pure(0),
            ScheduleKind::AbruptCycle { period } => Assignment::Pure((k / period) % r),
            ScheduleKind::GradualCycle { period } => {
                let p = k / period;
                let j = k % period;
                let from = p % r;
                let to = (p + 1) % r;
                Assignment::Blend { from, to, lambda: (j + 1) as f64 / period as f64 }
            }
            ScheduleKind::Intervals { interval_len } => {
                Assignment::Pure((k / interval_len).min(r - 1))
            }
        }
    }

    /// Cache key for episode `k`; see [`EpisodeKey`].
    pub fn episode_key(&self, k: usize) -> EpisodeKey {
        match self.assignment(k) {
            Assignment::Pure(i) => EpisodeKey::Pure(i),
            Assignment::Blend { from, to, .. } => {
                let period = match self.kind {
                    ScheduleKind::GradualCycle { period } => period,
                    _ => unreachable!("only gradual schedules blend"),
                };
                let j = k % period;
                EpisodeKey::Blend { from, to, num: (j + 1) as u32, den: period as u32 }
            }
        }
    }
}
