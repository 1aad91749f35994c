//! Nonstationary episodic reinforcement learning in linear MDPs.
//!
//! The crate provides three layers:
//!
//! * a data model for episodic linear MDPs whose parameters drift across
//!   episodes ([`linmdp`]), together with generators for drifting
//!   combination-lock families and a low-dimensional hard instance
//!   ([`env`]);
//! * value-based agents built on least-squares value iteration with
//!   optimistic bonuses, periodic restarts, and a bandit meta-tuner that
//!   selects the restart window online ([`agents`], [`tuner`]);
//! * an exact dynamic-regret harness that evaluates each episode's policy
//!   against the episode's optimal value by backward induction and exports
//!   aggregated CSV curves ([`harness`], [`config`]).
//!
//! Conventions used throughout: episodes `k ∈ 0..K`, steps `h ∈ 0..H`,
//! states `s ∈ 0..S`, and actions `a ∈ 0..A` are all zero-based. An episode
//! lasts exactly `H` steps, so a horizon budget of `T` total steps holds
//! `K = T / H` episodes.

pub mod agents;
pub mod config;
pub mod env;
pub mod harness;
pub mod linmdp;
pub mod rng;
pub mod schedule;
pub mod schema;
pub mod tuner;
