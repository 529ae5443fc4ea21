//! Deterministic pseudo-random streams.
//!
//! Every stochastic choice in the engine draws from a [`StreamRng`]
//! identified by a `(seed, stage label)` pair plus any number of derived
//! substream indices. Substreams are derived by mixing rather than by
//! advancing the parent, so pipeline stages never perturb each other's
//! draws and any stage can be re-executed in isolation.
//!
//! The generator is splitmix-style: a fixed-increment counter passed
//! through a 64-bit finalizer, keyed by the stream id. Output is stable
//! across platforms and releases; it is not cryptographically secure.

use alloc::vec::Vec;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x1000_0000_01B3);
    }
    hash
}

/// A deterministic random stream.
///
/// The upper half of the state is the stream identity (never advanced);
/// the lower half is the draw counter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamRng {
    id: u64,
    ctr: u64,
}

impl StreamRng {
    /// Stream for a `(seed, stage)` pair, e.g. `("seen-test")` draws of a
    /// split never collide with `("class-imbalance")` draws of a
    /// partition built from the same seed.
    pub fn new(seed: u64, stage: &str) -> Self {
        let id = mix64(seed.wrapping_mul(GOLDEN) ^ fnv1a64(stage.as_bytes()));
        let ctr = mix64(id ^ 0xD134_2543_DE82_EF95);
        Self { id, ctr }
    }

    /// Derive an independent child stream without advancing `self`.
    pub fn derive(&self, index: u64) -> Self {
        let id = mix64(self.id ^ mix64(index ^ 0x94D0_49BB_1331_11EB));
        let ctr = mix64(id ^ 0xD134_2543_DE82_EF95);
        Self { id, ctr }
    }

    /// Collapse the stream identity into a plain seed, for APIs that take
    /// `u64` seeds rather than streams.
    pub fn to_seed(&self) -> u64 {
        mix64(self.id ^ 0xBF58_476D_1CE4_E5B9)
    }

    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(GOLDEN);
        mix64(self.id ^ self.ctr)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform draw in `(0, 1]`; safe as a logarithm argument.
    #[inline]
    fn unit_open(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) + 1) as f64 * SCALE
    }

    /// Uniform draw in `[0, n)`. `n` must be nonzero.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // multiply-shift range reduction
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.unit_open();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Draw `k` distinct indices from `0..n` uniformly without
    /// replacement, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = StreamRng::new(7, "test");
        let mut b = StreamRng::new(7, "test");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn stages_are_independent() {
        let mut a = StreamRng::new(7, "alpha");
        let mut b = StreamRng::new(7, "beta");
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn derive_does_not_advance_parent() {
        let a = StreamRng::new(3, "test");
        let b = a.clone();
        let _ = a.derive(1);
        let _ = a.derive(2);
        assert_eq!(a, b);
    }

    #[test]
    fn derived_streams_differ_by_index() {
        let base = StreamRng::new(3, "test");
        let mut c0 = base.derive(0);
        let mut c1 = base.derive(1);
        assert_ne!(c0.next_u64(), c1.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = StreamRng::new(11, "test");
        for n in [1u64, 2, 3, 7, 1000] {
            for _ in 0..200 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = StreamRng::new(5, "test");
        for _ in 0..1000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = StreamRng::new(42, "test");
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = StreamRng::new(9, "test");
        let mut xs: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn sample_indices_distinct_and_bounded() {
        let mut rng = StreamRng::new(13, "test");
        let picked = rng.sample_indices(20, 8);
        assert_eq!(picked.len(), 8);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert!(picked.iter().all(|&i| i < 20));
    }
}
