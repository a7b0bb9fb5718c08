//! Counter-based RNG substreams.
//!
//! Every independent work item (a patient, a bootstrap replicate, a
//! simulation) draws from its own ChaCha8 stream keyed by
//! (root seed, stream tag, item index). Streams never depend on thread
//! count or iteration order, which is what makes parallel runs reproduce
//! sequential ones bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep substreams disjoint even when they share an index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Demographics = 1,
    Events = 2,
    Labels = 3,
    Visits = 4,
    Bootstrap = 5,
    Split = 6,
    Downsample = 7,
    Sim = 8,
}

/// splitmix64 finalizer; bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(state: u64, value: u64) -> u64 {
    mix(state ^ value)
}

/// Derives a child seed from a parent seed and a label. Used to split a
/// run-level seed into independent domains (e.g. a cohort seed and the
/// Monte-Carlo seed of its oracle).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut state = absorb(0x517c_c1b7_2722_0a95, seed);
    for chunk in label.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state = absorb(state, u64::from_le_bytes(word));
    }
    state
}

/// The substream for (`seed`, `stream`, `index`).
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut state = absorb(0x6a09_e667_f3bc_c908, seed);
    state = absorb(state, stream as u64);
    state = absorb(state, index);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
