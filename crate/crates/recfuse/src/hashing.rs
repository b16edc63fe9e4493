/// Seeded FNV-1a, stable across runs and platforms. Used for text-embedding
/// buckets and user-level split assignment, where `DefaultHasher` would not
/// be reproducible.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_seed_sensitive() {
        assert_eq!(fnv1a64(1, b"abc"), fnv1a64(1, b"abc"));
        assert_ne!(fnv1a64(1, b"abc"), fnv1a64(2, b"abc"));
        assert_ne!(fnv1a64(1, b"abc"), fnv1a64(1, b"abd"));
    }
}
