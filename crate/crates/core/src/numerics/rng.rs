use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

/// Seeded random stream.
///
/// Backed by PCG32 (`Lcg64Xsh32`): a 64-bit LCG state transition with an
/// xorshift-rotate output function. The draw sequence depends only on the
/// seed, so runs reproduce bit for bit across platforms.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: Pcg32,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            rng: Pcg32::seed_from_u64(seed),
        }
    }

    /// An independent stream keyed by `(seed, keys…)`, for work that must not
    /// depend on scheduling order (e.g. per-instance dropout masks).
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
        for &k in keys {
            h = splitmix(h ^ splitmix(k));
        }
        RandomStream::new(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
