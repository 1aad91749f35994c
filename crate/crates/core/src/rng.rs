//! Keyed, reproducible random substreams.
//!
//! Every random draw in an experiment comes from a stream addressed by
//! `(trial seed, agent label, purpose, index)`. Streams are independent of
//! execution order, so trials can run on any number of threads and still
//! produce bitwise-identical results, and an agent added to a config cannot
//! perturb another agent's environment draws. Keying by episode (or block)
//! index additionally makes suffix replays exact: the draws of episode `k`
//! do not depend on how many draws earlier episodes consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Each purpose gets draws that are
/// statistically independent of every other purpose's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Environment randomness for one episode: the initial-state draw
    /// followed by the transition draws, in step order.
    EnvEpisode,
    /// Agent-side randomness for one episode (ε-greedy coin flips, uniform
    /// action draws).
    AgentEpisode,
    /// Meta-tuner randomness for one block (arm sampling).
    TunerBlock,
    /// Construction-time randomness (feature-map and parameter draws).
    Construction,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::EnvEpisode => 0x01,
            StreamPurpose::AgentEpisode => 0x02,
            StreamPurpose::TunerBlock => 0x03,
            StreamPurpose::Construction => 0x04,
        }
    }
}

/// splitmix64 step; the standard finalizer used to expand small keys into
/// well-mixed 64-bit words.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a label so that streams are keyed by agent identity rather
/// than by position in the config (stable under reordering and insertion).
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A ChaCha8 stream for `(seed, label, purpose, index)`. The 256-bit ChaCha
/// seed is produced by chaining the four key words through splitmix64.
pub fn keyed_rng(seed: u64, label: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    let mut state =
        seed ^ label.rotate_left(17) ^ purpose.tag().rotate_left(41) ^ index.rotate_left(29);
    // Feed the raw key words in before expanding so collisions between
    // different (label, index) combinations cannot survive the mixing.
    for word in [seed, label, purpose.tag(), index] {
        state = state.wrapping_add(word).wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Draws one sample from a categorical distribution by inverse CDF.
///
/// `probs` must be a (possibly renormalized) probability vector; the walk
/// accumulates mass left to right and returns the first index whose
/// cumulative mass exceeds the uniform draw. Any floating residue below the
/// final cumulative sum falls back to the last index with positive mass.
pub fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
