use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A labelled random stream derived from a master seed.
///
/// The key is `hash(seed, tag, index)`, so the stream for a given label does
/// not depend on which other streams were created or consumed first. This is
/// what lets per-frame generation run in any order.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl RngStream {
    pub fn new(seed: u64, tag: &str, index: u64) -> Self {
        let mut key = splitmix64(seed);
        key = splitmix64(key ^ fnv1a64(tag.as_bytes()));
        key = splitmix64(key ^ index);
        let mut bytes = [0u8; 32];
        let mut k = key;
        for chunk in bytes.chunks_exact_mut(8) {
            k = splitmix64(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Standard normal draw, sampled in f64 and rounded to f32.
    #[inline]
    pub fn gaussian(&mut self) -> f32 {
        let v: f64 = self.rng.sample(StandardNormal);
        v as f32
    }

    #[inline]
    pub fn gaussian_f64(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.gaussian();
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}
