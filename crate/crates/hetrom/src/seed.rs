//! Deterministic seed derivation.
//!
//! Every random draw in the crate flows from one of two user-facing seeds
//! (model seed, data seed) through this mixer. Independent streams are
//! derived per (purpose, iteration, slot) path, so no generator state is
//! shared and any batch can be regenerated without replaying earlier draws.

/// SplitMix64 finalizer. Stable across platforms and Rust versions.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a path of stream identifiers.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    let mut s = mix(root ^ 0x6c62_272e_07bb_0142);
    for &p in path {
        s = mix(s ^ mix(p));
    }
    s
}

/// Stream tags. Each distinct consumer of randomness gets its own tag so
/// streams never overlap even when index arguments coincide.
pub mod stream {
    pub const POOL_GEN: u64 = 0x01;
    pub const POOL_NOISE: u64 = 0x02;
    pub const ONE_STEP: u64 = 0x03;
    pub const TWO_STEP: u64 = 0x04;
    pub const BATCH: u64 = 0x05;
    pub const PROBE: u64 = 0x06;
    pub const EVAL: u64 = 0x07;
    // Within-task streams, rooted at the task's own seed.
    pub const TASK_PARAMS: u64 = 0x11;
    pub const TASK_SUPPORT: u64 = 0x12;
    pub const TASK_QUERY: u64 = 0x13;
}
