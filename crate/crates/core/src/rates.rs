//! SINR and achievable-rate expressions.
//!
//! Rates are in nats per channel use (natural log). The relay hop is the
//! full-duplex decode-and-forward link at the near user; the base station
//! combines both copies of the far user's message by MRC.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelGains;

/// Transmit SNR budgets (linear, noise-normalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudgets {
    pub p_n_max: f64,
    pub p_f_max: f64,
}

impl PowerBudgets {
    pub fn new(p_n_max: f64, p_f_max: f64) -> Self {
        Self { p_n_max, p_f_max }
    }

    pub fn from_db(p_n_max_db: f64, p_f_max_db: f64) -> Self {
        Self::new(
            crate::channel::db_to_linear(p_n_max_db),
            crate::channel::db_to_linear(p_f_max_db),
        )
    }

    pub fn is_valid(&self) -> bool {
        self.p_n_max.is_finite()
            && self.p_f_max.is_finite()
            && self.p_n_max >= 0.0
            && self.p_f_max >= 0.0
    }
}

/// SIC order at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingOrder {
    /// Far user decoded first.
    Fudf,
    /// Near user decoded first.
    Nudf,
}

impl DecodingOrder {
    pub const ALL: [DecodingOrder; 2] = [DecodingOrder::Fudf, DecodingOrder::Nudf];

    pub fn as_str(self) -> &'static str {
        match self {
            DecodingOrder::Fudf => "fudf",
            DecodingOrder::Nudf => "nudf",
        }
    }
}

impl fmt::Display for DecodingOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecodingOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fudf" => Ok(DecodingOrder::Fudf),
            "nudf" => Ok(DecodingOrder::Nudf),
            other => Err(format!(
                "unknown decoding order `{other}` (expected fudf or nudf)"
            )),
        }
    }
}

/// Power split of the cooperative scheme.
///
/// `alpha_n` and `alpha_f` are the fractions of the near user's budget spent
/// on its own message and on the relayed far-user message; `beta_f` is the
/// fraction of the far user's budget it transmits with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub alpha_n: f64,
    pub alpha_f: f64,
    pub beta_f: f64,
}

impl Allocation {
    pub fn new(alpha_n: f64, alpha_f: f64, beta_f: f64) -> Self {
        Self {
            alpha_n,
            alpha_f,
            beta_f,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha_n >= 0.0
            && self.alpha_f >= 0.0
            && self.alpha_n + self.alpha_f <= 1.0
            && (0.0..=1.0).contains(&self.beta_f)
    }

    /// Closest valid allocation. Used to clean up interior-point solutions that
    /// sit a rounding error outside the budget rows.
    pub fn projected(&self) -> Self {
        let clamp01 = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let mut alpha_n = clamp01(self.alpha_n);
        let mut alpha_f = clamp01(self.alpha_f);
        let total = alpha_n + alpha_f;
        if total > 1.0 {
            alpha_n /= total;
            alpha_f /= total;
            while alpha_n + alpha_f > 1.0 {
                alpha_f = next_down(alpha_f);
            }
        }
        Self::new(alpha_n, alpha_f, clamp01(self.beta_f))
    }
}

fn next_down(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// Per-user rates for one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub rate_n: f64,
    pub rate_f: f64,
    /// Far user's rate over the relay hop.
    pub rate_relay: f64,
    /// Far user's rate at the base station after combining.
    pub rate_sum_branch: f64,
}

impl RatePair {
    pub fn min_rate(&self) -> f64 {
        self.rate_n.min(self.rate_f)
    }
}

/// Transmit SNRs for the non-cooperative baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePowers {
    pub p_n: f64,
    pub p_f: f64,
}

/// SINR of the far user's message at the full-duplex near user.
pub fn relay_sinr(alloc: &Allocation, bud: &PowerBudgets, g: &ChannelGains) -> f64 {
    alloc.beta_f * bud.p_f_max * g.gamma_nf
        / ((alloc.alpha_n + alloc.alpha_f) * bud.p_n_max * g.gamma_si + 1.0)
}

/// Base-station SINRs `(delta_f, delta_n)` when the far user is decoded first.
pub fn bs_sinrs_fudf(alloc: &Allocation, bud: &PowerBudgets, g: &ChannelGains) -> (f64, f64) {
    let near = bud.p_n_max * g.gamma_n;
    let delta_f = alloc.alpha_f * near / (alloc.alpha_n * near + 1.0)
        + alloc.beta_f * bud.p_f_max * g.gamma_f;
    let delta_n = alloc.alpha_n * near;
    (delta_f, delta_n)
}

/// Base-station SINRs `(delta_n, delta_f)` when the near user is decoded first.
pub fn bs_sinrs_nudf(alloc: &Allocation, bud: &PowerBudgets, g: &ChannelGains) -> (f64, f64) {
    let near = bud.p_n_max * g.gamma_n;
    let far = alloc.alpha_f * near + alloc.beta_f * bud.p_f_max * g.gamma_f;
    (alloc.alpha_n * near / (far + 1.0), far)
}

fn rate(sinr: f64) -> f64 {
    sinr.ln_1p()
}

pub fn achievable_rates(
    alloc: &Allocation,
    bud: &PowerBudgets,
    g: &ChannelGains,
    order: DecodingOrder,
) -> RatePair {
    let (delta_n, delta_f) = match order {
        DecodingOrder::Fudf => {
            let (f, n) = bs_sinrs_fudf(alloc, bud, g);
            (n, f)
        }
        DecodingOrder::Nudf => bs_sinrs_nudf(alloc, bud, g),
    };
    let rate_relay = rate(relay_sinr(alloc, bud, g));
    let rate_sum_branch = rate(delta_f);
    RatePair {
        rate_n: rate(delta_n),
        rate_f: rate_relay.min(rate_sum_branch),
        rate_relay,
        rate_sum_branch,
    }
}

/// Max-min objective value of an allocation.
pub fn min_rate(
    alloc: &Allocation,
    bud: &PowerBudgets,
    g: &ChannelGains,
    order: DecodingOrder,
) -> f64 {
    achievable_rates(alloc, bud, g, order).min_rate()
}

/// Base-station SINRs `(delta_n, delta_f)` of conventional two-user uplink
/// NOMA without cooperation.
pub fn baseline_sinrs(p: &BaselinePowers, g: &ChannelGains, order: DecodingOrder) -> (f64, f64) {
    let near = p.p_n * g.gamma_n;
    let far = p.p_f * g.gamma_f;
    match order {
        DecodingOrder::Nudf => (near / (far + 1.0), far),
        DecodingOrder::Fudf => (near, far / (near + 1.0)),
    }
}

pub fn baseline_rates(p: &BaselinePowers, g: &ChannelGains, order: DecodingOrder) -> RatePair {
    let (delta_n, delta_f) = baseline_sinrs(p, g, order);
    let rate_f = rate(delta_f);
    RatePair {
        rate_n: rate(delta_n),
        rate_f,
        rate_relay: rate_f,
        rate_sum_branch: rate_f,
    }
}
