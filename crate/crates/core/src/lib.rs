//! Max-min fair power allocation for a two-user uplink cooperative NOMA cell.
//!
//! The near user relays the far user's message in full-duplex
//! decode-and-forward mode. [`sca`] solves the non-convex max-min problem by
//! successive convex approximation over second-order cone subproblems
//! ([`conic`]); [`oracle`] provides brute-force ground truth and the
//! conventional NOMA baselines; [`experiments`] runs Monte-Carlo sweeps.

pub mod channel;
pub mod conic;
pub mod experiments;
pub mod oracle;
pub mod rates;
pub mod sca;

pub use channel::{db_to_linear, sample_gains, ChannelDistribution, ChannelGains};
pub use experiments::{preset, preset_sweeps, run_sweep, RunOptions, Scheme, SweepSpec};
pub use oracle::{baseline_maxmin, grid_maxmin, OracleResult};
pub use rates::{
    achievable_rates, min_rate, Allocation, BaselinePowers, DecodingOrder, PowerBudgets, RatePair,
};
pub use sca::{sca_solve, ScaConfig, ScaError, ScaOutcome, Termination};
