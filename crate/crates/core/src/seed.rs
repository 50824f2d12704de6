//! Deterministic, splittable randomness.
//!
//! A [`SeedStream`] names one ChaCha8 keystream: the key comes from the
//! root seed and the 64-bit ChaCha stream id is the stream index. Child
//! streams are derived by passing `(parent index, child index)` through
//! the SplitMix64 finalizer, which is a bijection on `u64`, so distinct
//! child indices of one parent always give distinct streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    pub root_seed: u64,
    pub stream_index: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(root_seed: u64) -> Self {
        SeedStream { root_seed, stream_index: 0 }
    }

    /// Independent sub-stream number `index` of this stream.
    pub fn child(&self, index: u64) -> SeedStream {
        SeedStream {
            root_seed: self.root_seed,
            stream_index: splitmix64(splitmix64(self.stream_index).wrapping_add(index)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Free-function form of [`SeedStream::child`].
pub fn child_seed(s: SeedStream, index: u64) -> SeedStream {
    s.child(index)
}

/// One standard normal draw by the Box–Muller transform.
///
/// Uses the cosine branch only; each call consumes two uniforms.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // u1 in (0, 1] so the log is finite
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn first_bytes(s: SeedStream) -> Vec<u32> {
        let mut rng = s.rng();
        (0..8).map(|_| rng.gen()).collect()
    }

    #[test]
    fn children_are_distinct_and_deterministic() {
        let root = SeedStream::new(7);
        assert_ne!(child_seed(root, 0), child_seed(root, 1));
        assert_eq!(child_seed(root, 3), child_seed(root, 3));
        assert_eq!(first_bytes(root.child(3)), first_bytes(root.child(3)));
        let streams: HashSet<_> = (0..5).map(|i| first_bytes(root.child(i))).collect();
        assert_eq!(streams.len(), 5);
    }

    #[test]
    fn child_differs_from_parent_and_other_roots() {
        let a = SeedStream::new(1);
        let b = SeedStream::new(2);
        assert_ne!(first_bytes(a), first_bytes(a.child(0)));
        assert_ne!(first_bytes(a.child(0)), first_bytes(b.child(0)));
    }

    #[test]
    fn box_muller_moments() {
        let mut rng = SeedStream::new(11).rng();
        let xs: Vec<f64> = (0..20_000).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert!(xs.iter().all(|x| x.is_finite()));
    }
}
