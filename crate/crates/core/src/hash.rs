//! Seeded 64-bit mixing used for home-slot placement, shard routing and the
//! baseline assignment.

/// Salt folded into the id before computing its home slot inside a shard.
pub const HOME_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Salt folded into the id before routing it to a shard.
pub const SHARD_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Xor-shift-multiply avalanche finalizer over `id ^ seed`.
///
/// All arithmetic wraps, so the output is bit-exact on every platform.
#[inline]
pub fn mix64(id: u64, seed: u64) -> u64 {
    let mut x = id ^ seed;
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}
