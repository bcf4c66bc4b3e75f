//! Rayleigh-fading channel model.
//!
//! Every link power gain is exponentially distributed. Gains are normalized by
//! the receiver noise variance, so transmit budgets elsewhere in the crate are
//! transmit SNRs and the noise term in every SINR is exactly one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

/// Converts a value in decibels to a linear ratio.
pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Converts a linear ratio to decibels.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Mean normalized power gain of each link, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDistribution {
    /// Near user to base station.
    pub mean_gain_n_db: f64,
    /// Far user to base station.
    pub mean_gain_f_db: f64,
    /// Far user to near user (the cooperative link).
    pub mean_gain_nf_db: f64,
    /// Residual self-interference at the full-duplex near user.
    pub mean_gain_si_db: f64,
}

impl ChannelDistribution {
    /// λ_n = λ_nf = 12 dB, λ_f = 3 dB, λ_SI = 5 dB.
    pub const REFERENCE: ChannelDistribution = ChannelDistribution {
        mean_gain_n_db: 12.0,
        mean_gain_f_db: 3.0,
        mean_gain_nf_db: 12.0,
        mean_gain_si_db: 5.0,
    };

    pub fn is_finite(&self) -> bool {
        [
            self.mean_gain_n_db,
            self.mean_gain_f_db,
            self.mean_gain_nf_db,
            self.mean_gain_si_db,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Linear mean gains in the order (n, f, nf, si).
    pub fn linear_means(&self) -> [f64; 4] {
        [
            db_to_linear(self.mean_gain_n_db),
            db_to_linear(self.mean_gain_f_db),
            db_to_linear(self.mean_gain_nf_db),
            db_to_linear(self.mean_gain_si_db),
        ]
    }

    /// Draws one independent realization of all four gains.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelGains {
        let [n, f, nf, si] = self.linear_means();
        let mut draw = |mean: f64| -> f64 {
            let e: f64 = rng.sample(Exp1);
            mean * e
        };
        ChannelGains {
            gamma_n: draw(n),
            gamma_f: draw(f),
            gamma_nf: draw(nf),
            gamma_si: draw(si),
        }
    }
}

impl Default for ChannelDistribution {
    fn default() -> Self {
        Self::REFERENCE
    }
}

/// One fading realization of the noise-normalized power gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    pub gamma_n: f64,
    pub gamma_f: f64,
    pub gamma_nf: f64,
    pub gamma_si: f64,
}

impl ChannelGains {
    pub fn new(gamma_n: f64, gamma_f: f64, gamma_nf: f64, gamma_si: f64) -> Self {
        Self {
            gamma_n,
            gamma_f,
            gamma_nf,
            gamma_si,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.gamma_n, self.gamma_f, self.gamma_nf, self.gamma_si]
            .iter()
            .all(|g| g.is_finite() && *g >= 0.0)
    }

    /// Multiplies every gain by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(
            self.gamma_n * c,
            self.gamma_f * c,
            self.gamma_nf * c,
            self.gamma_si * c,
        )
    }
}

/// Deterministic random stream for one trial.
///
/// ChaCha exposes a 64-bit stream id next to the 256-bit key, so each
/// (sweep point, trial) pair gets its own non-overlapping stream under the
/// master seed. Streams can be built in any order from any thread.
pub fn trial_stream(master_seed: u64, point: u32, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// Samples the gains for `(master_seed, point, trial)`.
pub fn sample_gains(
    dist: &ChannelDistribution,
    master_seed: u64,
    point: u32,
    trial: u32,
) -> ChannelGains {
    dist.sample(&mut trial_stream(master_seed, point, trial))
}
