//! Reproducible random streams: one ChaCha8 stream per replica.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for replica `stream` of the experiment seeded by `seed`.
pub fn replica_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draws from `{0, .., n-1}` for small `n`: 16-bit chunks of 64-bit words
/// mapped by multiply-shift, with the exact rejection step (taken with probability
/// below `n / 2^16`).
#[derive(Clone, Debug)]
pub struct SmallUniform {
    n: u32,
    threshold: u32,
    buf: u64,
    left: u32,
}

impl SmallUniform {
    pub fn new(n: u64) -> Self {
        assert!((2..=1 << 15).contains(&n), "SmallUniform supports 2..=32768 outcomes");
        let n = n as u32;
        SmallUniform { n, threshold: (1u32 << 16) % n, buf: 0, left: 0 }
    }

    #[inline(always)]
    pub fn sample<R: RngCore>(&mut self, rng: &mut R) -> usize {
        loop {
            if self.left == 0 {
                self.buf = rng.next_u64();
                self.left = 4;
            }
            let x = (self.buf & 0xffff) as u32;
            self.buf >>= 16;
            self.left -= 1;
            let m = x * self.n;
            if (m & 0xffff) >= self.threshold {
                return (m >> 16) as usize;
            }
        }
    }
}

/// Uniform `f64` in `(0, 1]`.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
