//! Seed-derivable randomness: Laplace sampling for the privacy noise and
//! per-trial stream derivation for reproducible parallel Monte Carlo.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Noise operating mode. `Zero` disables noise entirely so the detector
/// reduces to the non-private SUM-CUSUM baseline on identical data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    Live,
    Zero,
}

/// Laplace noise specification. In `Live` mode the scale is `2 * delta_max / epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    scale: f64,
    mode: NoiseMode,
}

impl NoiseSpec {
    pub fn live(epsilon: f64, delta_max: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(delta_max > 0.0) || !delta_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "delta_max must be positive and finite, got {delta_max}"
            )));
        }
        Ok(NoiseSpec {
            scale: 2.0 * delta_max / epsilon,
            mode: NoiseMode::Live,
        })
    }

    pub fn zero() -> Self {
        NoiseSpec {
            scale: 0.0,
            mode: NoiseMode::Zero,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn is_zero(&self) -> bool {
        self.mode == NoiseMode::Zero
    }

    /// One Laplace draw. Zero mode returns 0 without consuming randomness.
    pub fn sample(&self, rng: &mut RngHandle) -> f64 {
        match self.mode {
            NoiseMode::Zero => 0.0,
            NoiseMode::Live => laplace_from_u(uniform_open(rng), self.scale),
        }
    }
}

/// Deterministic PRNG stream. Every (master_seed, trial_index, role) triple
/// maps to an independent stream via SHA-256 key derivation, so results are
/// reproducible on any platform and under any worker count.
#[derive(Debug, Clone)]
pub struct RngHandle {
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn derive(master_seed: u64, trial_index: u64, role: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(trial_index.to_le_bytes());
        hasher.update(role.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        RngHandle {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Raw 53-bit draw; `(raw + 0.5) * 2^-53` is a uniform on the open (0,1).
    #[inline]
    pub fn next_u53(&mut self) -> u64 {
        self.inner.next_u64() >> 11
    }
}

impl RngCore for RngHandle {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

const U53_SCALE: f64 = 1.0 / (1u64 << 53) as f64;

/// Map a 53-bit integer into the open interval (0, 1); endpoints excluded.
#[inline]
pub fn u53_to_open(raw: u64) -> f64 {
    (raw as f64 + 0.5) * U53_SCALE
}

/// Uniform draw in the open interval (0, 1).
#[inline]
pub fn uniform_open(rng: &mut RngHandle) -> f64 {
    u53_to_open(rng.next_u53())
}

/// Inverse-CDF Laplace transform of a uniform in (0,1):
/// `-scale * sign(u - 0.5) * ln(1 - 2|u - 0.5|)`.
#[inline]
pub fn laplace_from_u(u: f64, scale: f64) -> f64 {
    let t = u - 0.5;
    let s = if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        return 0.0;
    };
    -scale * s * (1.0 - 2.0 * t.abs()).ln()
}

/// Laplace CDF at `x` for location `mu`, scale `b`.
pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    let z = (x - mu) / b;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}
