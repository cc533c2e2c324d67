//! Deterministic derivation of independent RNG seeds.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream identified by `parts` under `base`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc.rotate_left(23) ^ mix(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = derive_seed(0, &[2, 0, 1]);
        let b = derive_seed(0, &[2, 1, 0]);
        let c = derive_seed(1, &[2, 0, 1]);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(0, &[2, 0, 1]));
        assert_ne!(derive_seed(0, &[]), derive_seed(0, &[0]));
    }
}
