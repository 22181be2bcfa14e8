//! Named random streams.
//!
//! Every stream is xoshiro256** seeded through SplitMix64 from the run seed,
//! advanced by `long_jump()` once per purpose index and by `jump()` once per
//! stream index. Bounded integers use the 128-bit multiply-shift
//! `(next_u64 · n) >> 64`.

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type StreamRng = Xoshiro256StarStar;

/// What a stream is used for. The discriminant is the number of long jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    FewShotSplit = 0,
    PrototypeInit = 1,
    BatchOrder = 2,
    Synthetic = 3,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    for _ in 0..purpose as u64 {
        rng.long_jump();
    }
    for _ in 0..index {
        rng.jump();
    }
    rng
}

/// Integer in `[0, n)`.
pub fn bounded(rng: &mut StreamRng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// In-place Fisher–Yates shuffle drawing `j = i + bounded(n − i)`.
pub fn shuffle<T>(rng: &mut StreamRng, items: &mut [T]) {
    let n = items.len();
    for i in 0..n.saturating_sub(1) {
        let j = i + bounded(rng, n - i);
        items.swap(i, j);
    }
}
