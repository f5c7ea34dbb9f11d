//! Deterministic sub-stream seed derivation.
//!
//! All randomness in a run flows from a single master seed. Independent
//! components (simulation replicates, chains, real-time iterations) each get
//! their own derived seed so results do not depend on execution order.

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the domain label, so distinct labels give unrelated streams.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed for sub-stream `(label, index)` of `master`.
pub fn sub_seed(master: u64, label: &str, index: u64) -> u64 {
    mix(mix(master ^ label_hash(label)) ^ index)
}
