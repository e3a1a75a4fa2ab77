//! Counter-based 64-bit generator used wherever output must be reproducible
//! across platforms and languages.
//!
//! The `i`-th draw for seed `s` is the SplitMix64 finalizer applied to
//! `s + (i + 1) * 0x9E3779B97F4A7C15` (wrapping). This is exactly the
//! `i`-th output of a SplitMix64 stream started at state `s`, but each draw
//! can be computed independently, so parallel consumers agree with serial
//! ones.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw 64-bit draw number `index` of the stream for `seed`.
#[inline]
pub fn draw_u64(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn draw_unit(seed: u64, index: u64) -> f64 {
    (draw_u64(seed, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent child seed, e.g. one per scene of a dataset.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    mix64(draw_u64(seed, stream) ^ 0xD1B5_4A32_D192_ED03)
}
