//! Deterministic seed derivation.
//!
//! Every random stream in the engine is a ChaCha8 generator whose seed is
//! derived from the global run seed plus a path of labels and indices, e.g.
//! `SeedPath::new(seed).label("mosaic").index(epoch).index(sample)`. Each step
//! folds its input through splitmix64, so streams are independent of the order
//! in which they are created and parallel execution reproduces serial output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn new(seed: u64) -> Self {
        SeedPath(splitmix64(seed))
    }

    pub fn index(self, i: u64) -> Self {
        SeedPath(splitmix64(self.0 ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn label(self, s: &str) -> Self {
        self.index(fnv1a(s.as_bytes()))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let a: Vec<u64> = {
            let mut r = SeedPath::new(7).label("x").index(3).rng();
            (0..8).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SeedPath::new(7).label("x").index(3).rng();
            (0..8).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn paths_differ() {
        let base = SeedPath::new(7);
        assert_ne!(base.index(0), base.index(1));
        assert_ne!(base.label("a"), base.label("b"));
        assert_ne!(base.index(1).index(2), base.index(2).index(1));
        assert_ne!(SeedPath::new(1), SeedPath::new(2));
    }

    #[test]
    fn fnv_known_value() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
