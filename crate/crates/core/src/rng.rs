//! Counter-based random streams.
//!
//! Every random decision in the crate is drawn from a stream identified by a
//! `(seed, key)` pair, where `key` is usually the position key of a tree
//! vertex. The `i`-th output of a stream is a pure function of
//! `(seed, key, i)`, so the order in which vertices are visited never changes
//! what is sampled at a given vertex.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Position key of the root vertex.
pub const ROOT_KEY: u64 = 0x0D1C_E5EE_D000_0001;

/// Position key of the `index`-th child of a vertex with key `parent`.
#[inline]
pub fn child_key(parent: u64, index: u32) -> u64 {
    mix64(parent.rotate_left(17) ^ mix64(u64::from(index).wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Purpose tags keep streams drawn for different jobs disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Tree = 1,
    Sandpile = 2,
    Forest = 3,
    Sample = 4,
    Bootstrap = 5,
    Wilson = 6,
}

/// Derives an independent 64-bit seed from a master seed, a purpose and an index.
#[inline]
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    mix64(mix64(master ^ (purpose as u64).wrapping_mul(GOLDEN)) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// A SplitMix64 stream addressed by `(seed, key)` with an explicit counter.
#[derive(Debug, Clone)]
pub struct Stream {
    base: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, key: u64) -> Self {
        Self { base: mix64(seed ^ mix64(key ^ GOLDEN)), counter: 0 }
    }

    /// The `i`-th uniform of stream `(seed, key)` without building the stream.
    #[inline]
    pub fn uniform_at(seed: u64, key: u64, i: u64) -> f64 {
        let base = mix64(seed ^ mix64(key ^ GOLDEN));
        to_unit(mix64(base.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN))))
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer in `lo..hi`.
    #[inline]
    pub fn below(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo < hi);
        let span = u64::from(hi - lo);
        // Lemire's multiply-shift; bias is < 2^-32 for the spans used here.
        lo + ((u128::from(self.next_u64()) * u128::from(span)) >> 64) as u32
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_at_matches_stream() {
        let mut s = Stream::new(42, 7);
        for i in 0..10 {
            assert_eq!(s.uniform(), Stream::uniform_at(42, 7, i));
        }
    }

    #[test]
    fn streams_differ_by_key_and_seed() {
        let a = Stream::uniform_at(1, 2, 0);
        assert_ne!(a, Stream::uniform_at(1, 3, 0));
        assert_ne!(a, Stream::uniform_at(2, 2, 0));
    }

    #[test]
    fn uniform_mean_and_range() {
        let mut s = Stream::new(9, 9);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        // 6 sigma of a uniform mean
        assert!((mean - 0.5).abs() < 6.0 * (1.0f64 / 12.0 / n as f64).sqrt());
    }

    #[test]
    fn below_covers_range() {
        let mut s = Stream::new(3, 4);
        let mut seen = [0u32; 5];
        for _ in 0..10_000 {
            seen[(s.below(2, 7) - 2) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 1800 && c < 2200));
    }

    #[test]
    fn child_keys_distinct() {
        let mut keys: Vec<u64> = (0..1000).map(|i| child_key(ROOT_KEY, i)).collect();
        keys.extend((0..1000).map(|i| child_key(child_key(ROOT_KEY, 0), i)));
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 2000);
    }
}
