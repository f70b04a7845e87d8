//! Seed discipline: every source of randomness descends from a run seed
//! through a fixed stream offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type StreamRng = ChaCha8Rng;

/// Fixed per-component stream offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Policy = 3,
    WorldModel = 4,
    Buffer = 5,
    Shaping = 6,
    Eval = 7,
    Surface = 8,
}

pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream for a sub-task (a grid point, a matrix cell) derived from a parent seed.
pub fn derived(seed: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream as u64);
    rng
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::of(rng.sample::<f64, _>(StandardNormal))
}

pub fn fill_standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for v in out {
        *v = standard_normal(rng);
    }
}

/// Uniform draw on `[lo, hi)`.
pub fn uniform(rng: &mut (impl Rng + ?Sized), lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Exact serializable snapshot of a stream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &StreamRng) -> Self {
        RngSnapshot {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<StreamRng> {
        let bytes = hex::decode(&self.seed)
            .map_err(|e| Error::Format(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Format("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Format(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}
