//! Random streams keyed by `(seed, t, member, purpose)`.
//!
//! Each key maps to its own ChaCha8 stream, so draws never depend on the
//! order in which members or blocks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    ReferenceField = 1,
    ObservationNoise = 2,
    InitialEnsemble = 3,
    Gibbs = 4,
    Test = 255,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for one `(t, member, purpose)` key under `seed`.
///
/// # Panics
/// If `t >= 2^24` or `member >= 2^32`.
pub fn stream(seed: u64, t: usize, member: usize, purpose: Purpose) -> StreamRng {
    assert!(t < 1 << 24, "time index {t} too large for a stream key");
    assert!((member as u64) < 1 << 32, "member index {member} too large for a stream key");
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((t as u64) << 40) | ((member as u64) << 8) | purpose as u64);
    rng
}
