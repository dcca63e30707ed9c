use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Named consumers of randomness. Each tag maps to its own ChaCha stream so
/// toggling one consumer never shifts another's draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Init = 1,
    Batching = 2,
    PckdSampling = 3,
    Selection = 4,
    Diagnostics = 5,
    Synthetic = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream identified by `(seed, tag, keys)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, tag: StreamTag) -> Self {
        Self::keyed(seed, tag, &[])
    }

    /// Substream keyed by extra integers, e.g. `(epoch, user)`.
    pub fn keyed(seed: u64, tag: StreamTag, keys: &[u64]) -> Self {
        let mut stream = splitmix64(tag as u64);
        for &k in keys {
            stream = splitmix64(stream ^ k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Standard Gumbel draw, `-ln(-ln U)`.
    pub fn gumbel(&mut self) -> f64 {
        // open interval keeps both logs finite
        let mut u = self.uniform();
        while u <= 0.0 {
            u = self.uniform();
        }
        -(-u.ln()).ln()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}

/// Draws index `k` with probability `weights[k] / sum(weights)`.
pub fn rng_draw_categorical(stream: &mut RngStream, weights: &[f64]) -> Result<usize> {
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::domain(format!("weight {k} is {w}")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::domain("categorical weights sum to zero"));
    }
    let target = stream.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if target < acc {
                return Ok(k);
            }
        }
    }
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_weights() {
        let mut s = RngStream::new(3, StreamTag::Init);
        for _ in 0..1000 {
            assert_eq!(rng_draw_categorical(&mut s, &[1.0, 0.0, 0.0]).unwrap(), 0);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let mut s = RngStream::new(11, StreamTag::Init);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| rng_draw_categorical(&mut s, &[1.0, 1.0]).unwrap() == 0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn repeatable_sequence() {
        let draw = || {
            let mut s = RngStream::new(42, StreamTag::PckdSampling);
            (0..100)
                .map(|_| rng_draw_categorical(&mut s, &[0.3, 0.7]).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn rejects_zero_and_negative_weights() {
        let mut s = RngStream::new(0, StreamTag::Init);
        assert!(matches!(
            rng_draw_categorical(&mut s, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(rng_draw_categorical(&mut s, &[1.0, -0.5]).is_err());
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = RngStream::new(5, StreamTag::Batching);
        let mut b = RngStream::new(5, StreamTag::Selection);
        let mut a2 = RngStream::new(5, StreamTag::Batching);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xa2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        assert_eq!(xa, xa2);
        assert_ne!(xa, xb);
        let k1 = RngStream::keyed(5, StreamTag::PckdSampling, &[1, 2]).stream_id();
        let k2 = RngStream::keyed(5, StreamTag::PckdSampling, &[2, 1]).stream_id();
        assert_ne!(k1, k2);
    }
}
