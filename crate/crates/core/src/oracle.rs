//! Brute-force ground truth.
//!
//! [`grid_maxmin`] searches the cooperative allocation space exhaustively on
//! a zooming grid. [`baseline_maxmin`] solves the non-cooperative baselines
//! exactly by bisection on the common target rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelGains;
use crate::rates::{
    baseline_rates, min_rate, Allocation, BaselinePowers, DecodingOrder, PowerBudgets,
};

/// Each refinement shrinks the search box by this factor per axis.
pub const REFINE_SHRINK: f64 = 5.0;

/// Shrink that zooms onto the two grid cells either side of the incumbent.
/// The baseline optimum sits on a thin ridge where one power is at its
/// budget, and a gentler zoom creeps along the ridge instead of reaching it.
fn neighbour_shrink(resolution: usize) -> f64 {
    ((resolution - 1) as f64 / 4.0).max(REFINE_SHRINK)
}

pub const DEFAULT_RESOLUTION: usize = 101;
pub const DEFAULT_DEPTH: usize = 2;

/// Best point found by a search, with the search parameters that found it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult<T> {
    pub best: T,
    pub min_rate: f64,
    /// Points per axis, or bisection steps for [`baseline_maxmin`].
    pub resolution: usize,
    pub depth: usize,
}

/// Axis-aligned box; an axis with `lo == hi` is held fixed.
#[derive(Debug, Clone, Copy)]
struct SearchBox<const D: usize> {
    lo: [f64; D],
    hi: [f64; D],
}

impl<const D: usize> SearchBox<D> {
    fn points_on(&self, axis: usize, resolution: usize) -> usize {
        if self.hi[axis] > self.lo[axis] {
            resolution
        } else {
            1
        }
    }

    fn coord(&self, axis: usize, i: usize, resolution: usize) -> f64 {
        if i == 0 || self.hi[axis] <= self.lo[axis] {
            self.lo[axis]
        } else if i == resolution - 1 {
            self.hi[axis]
        } else {
            let t = i as f64 / (resolution - 1) as f64;
            self.lo[axis] + t * (self.hi[axis] - self.lo[axis])
        }
    }

    /// Box of `1 / shrink` the width around `center`, clipped to `outer`.
    fn zoomed(&self, center: &[f64; D], outer: &SearchBox<D>, shrink: f64) -> Self {
        let mut lo = [0.0; D];
        let mut hi = [0.0; D];
        for k in 0..D {
            let half = (self.hi[k] - self.lo[k]) / shrink / 2.0;
            lo[k] = (center[k] - half).max(outer.lo[k]);
            hi[k] = (center[k] + half).min(outer.hi[k]);
        }
        Self { lo, hi }
    }
}

/// Which of several equally good grid points to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ties {
    First,
    Last,
}

impl Ties {
    fn beats(self, val: f64, incumbent: f64) -> bool {
        match self {
            Ties::First => val > incumbent,
            Ties::Last => val >= incumbent,
        }
    }
}

/// Scans every grid point of `bx`, mapping coordinates through `candidate`.
/// Ties are resolved in lexicographic scan order.
fn scan<const D: usize, T, C, E>(
    bx: &SearchBox<D>,
    resolution: usize,
    ties: Ties,
    candidate: &C,
    eval: &E,
) -> Option<([f64; D], T, f64)>
where
    T: Copy + Send,
    C: Fn(&[f64; D]) -> T + Sync,
    E: Fn(&T) -> f64 + Sync,
{
    let counts: Vec<usize> = (0..D).map(|k| bx.points_on(k, resolution)).collect();
    let inner: usize = counts[1..].iter().product();
    // Slabs along the first axis are scanned in parallel and then reduced in
    // slab order, which keeps the result independent of the thread count.
    let slabs: Vec<Option<([f64; D], T, f64)>> = (0..counts[0])
        .into_par_iter()
        .map(|i0| {
            let mut best: Option<([f64; D], T, f64)> = None;
            let mut pt = [0.0; D];
            pt[0] = bx.coord(0, i0, resolution);
            for flat in 0..inner {
                let mut rest = flat;
                for k in (1..D).rev() {
                    pt[k] = bx.coord(k, rest % counts[k], resolution);
                    rest /= counts[k];
                }
                let cand = candidate(&pt);
                let val = eval(&cand);
                if best.as_ref().is_none_or(|b| ties.beats(val, b.2)) {
                    best = Some((pt, cand, val));
                }
            }
            best
        })
        .collect();
    slabs
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<([f64; D], T, f64)>, s| match acc {
            Some(a) if !ties.beats(s.2, a.2) => Some(a),
            _ => Some(s),
        })
}

fn zooming_search<const D: usize, T, C, E>(
    outer: SearchBox<D>,
    resolution: usize,
    depth: usize,
    shrink: f64,
    ties: Ties,
    candidate: C,
    eval: E,
) -> (T, f64)
where
    T: Copy + Send,
    C: Fn(&[f64; D]) -> T + Sync,
    E: Fn(&T) -> f64 + Sync,
{
    assert!(resolution >= 2, "grid needs at least two points per axis");
    let mut bx = outer;
    let (mut center, mut best, mut best_val) =
        scan(&bx, resolution, ties, &candidate, &eval).expect("grid is never empty");
    for _ in 0..depth {
        bx = bx.zoomed(&center, &outer, shrink);
        if let Some((pt, cand, val)) = scan(&bx, resolution, ties, &candidate, &eval) {
            if ties.beats(val, best_val) {
                (center, best, best_val) = (pt, cand, val);
            }
        }
    }
    (best, best_val)
}

/// Exhaustive max-min search over `(alpha_n, alpha_f, beta_f)`.
///
/// Grid points with `alpha_n + alpha_f > 1` are scaled back onto the budget
/// boundary. For far-user-first decoding `beta_f` is held at 1, since the
/// min-rate never decreases in `beta_f` under that order.
pub fn grid_maxmin(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    resolution: usize,
    depth: usize,
) -> OracleResult<Allocation> {
    let beta_lo = match order {
        DecodingOrder::Fudf => 1.0,
        DecodingOrder::Nudf => 0.0,
    };
    let outer = SearchBox {
        lo: [0.0, 0.0, beta_lo],
        hi: [1.0, 1.0, 1.0],
    };
    let (best, val) = zooming_search(
        outer,
        resolution,
        depth,
        REFINE_SHRINK,
        Ties::First,
        |p: &[f64; 3]| Allocation::new(p[0], p[1], p[2]).projected(),
        |a: &Allocation| min_rate(a, bud, g, order),
    );
    OracleResult {
        best,
        min_rate: val,
        resolution,
        depth,
    }
}

/// Zooming grid search over the baseline transmit powers; an independent
/// check on [`baseline_maxmin`].
pub fn baseline_grid_maxmin(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    resolution: usize,
    depth: usize,
) -> OracleResult<BaselinePowers> {
    let outer = SearchBox {
        lo: [0.0, 0.0],
        hi: [bud.p_n_max, bud.p_f_max],
    };
    let (best, val) = zooming_search(
        outer,
        resolution,
        depth,
        neighbour_shrink(resolution),
        Ties::Last,
        |p: &[f64; 2]| BaselinePowers {
            p_n: p[0],
            p_f: p[1],
        },
        |p: &BaselinePowers| baseline_rates(p, g, order).min_rate(),
    );
    OracleResult {
        best,
        min_rate: val,
        resolution,
        depth,
    }
}

/// Absolute tolerance of the bisection on the target rate, in nats.
pub const BISECTION_TOL: f64 = 1e-9;

/// Smallest powers meeting target SINR `t` for both users, if within budget.
///
/// The user decoded last sees no interference and transmits just enough for
/// `t`; the user decoded first must then beat `t` over that interference.
pub fn baseline_powers_for(
    t: f64,
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
) -> Option<BaselinePowers> {
    let (last_gain, first_gain) = match order {
        DecodingOrder::Nudf => (g.gamma_f, g.gamma_n),
        DecodingOrder::Fudf => (g.gamma_n, g.gamma_f),
    };
    if t == 0.0 {
        return Some(BaselinePowers { p_n: 0.0, p_f: 0.0 });
    }
    if last_gain <= 0.0 || first_gain <= 0.0 {
        return None;
    }
    let p_last = t / last_gain;
    let p_first = t * (t + 1.0) / first_gain;
    let powers = match order {
        DecodingOrder::Nudf => BaselinePowers {
            p_n: p_first,
            p_f: p_last,
        },
        DecodingOrder::Fudf => BaselinePowers {
            p_n: p_last,
            p_f: p_first,
        },
    };
    (powers.p_n <= bud.p_n_max && powers.p_f <= bud.p_f_max).then_some(powers)
}

/// Max-min rate of conventional uplink NOMA with power control.
pub fn baseline_maxmin(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
) -> OracleResult<BaselinePowers> {
    let feasible = |rate: f64| baseline_powers_for(rate.exp_m1(), g, bud, order);
    // Neither user can exceed its interference-free single-user rate.
    let mut lo = 0.0;
    let mut hi = (bud.p_n_max * g.gamma_n)
        .min(bud.p_f_max * g.gamma_f)
        .ln_1p();
    let mut steps = 0;
    if feasible(hi).is_some() {
        lo = hi;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    let best = feasible(lo).expect("lower end is always feasible");
    OracleResult {
        best,
        min_rate: baseline_rates(&best, g, order).min_rate(),
        resolution: steps,
        depth: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (ChannelGains, PowerBudgets) {
        (
            ChannelGains::new(15.85, 2.0, 15.85, 3.16),
            PowerBudgets::new(100.0, 100.0),
        )
    }

    #[test]
    fn dead_relay_link_gives_zero() {
        let (mut g, bud) = reference();
        g.gamma_nf = 0.0;
        for order in DecodingOrder::ALL {
            assert_eq!(grid_maxmin(&g, &bud, order, 21, 1).min_rate, 0.0);
        }
    }

    #[test]
    fn far_first_grid_keeps_full_far_power() {
        let (g, bud) = reference();
        let r = grid_maxmin(&g, &bud, DecodingOrder::Fudf, 41, 2);
        assert_eq!(r.best.beta_f, 1.0);
        assert!(r.best.is_valid());
    }

    #[test]
    fn refinement_never_hurts() {
        let (g, bud) = reference();
        for order in DecodingOrder::ALL {
            let mut prev = f64::NEG_INFINITY;
            for depth in 0..=3 {
                let r = grid_maxmin(&g, &bud, order, 21, depth);
                assert!(r.min_rate >= prev);
                prev = r.min_rate;
            }
        }
    }

    #[test]
    fn grid_value_is_attained() {
        let (g, bud) = reference();
        for order in DecodingOrder::ALL {
            let r = grid_maxmin(&g, &bud, order, 31, 2);
            assert_eq!(r.min_rate, min_rate(&r.best, &bud, &g, order));
        }
    }

    #[test]
    fn hand_solved_near_first_baseline() {
        let g = ChannelGains::new(1.0, 1.0, 0.0, 0.0);
        let bud = PowerBudgets::new(3.0, 3.0);
        let r = baseline_maxmin(&g, &bud, DecodingOrder::Nudf);
        let exact = ((1.0 + 13f64.sqrt()) / 2.0).ln();
        assert!((r.min_rate - exact).abs() < 1e-6);
        assert!((r.min_rate - 0.834115).abs() < 1e-6);
        assert!(r.best.p_n <= 3.0 && r.best.p_f <= 3.0);
    }

    #[test]
    fn baseline_matches_closed_form() {
        // For near-first decoding the boundary is T = min(P_f g_f, root of
        // T (T + 1) = P_n g_n).
        for &(gn, gf, pn, pf) in &[
            (2.0, 0.5, 10.0, 30.0),
            (0.1, 5.0, 100.0, 1.0),
            (4.0, 4.0, 1.0, 1.0),
        ] {
            let g = ChannelGains::new(gn, gf, 1.0, 1.0);
            let bud = PowerBudgets::new(pn, pf);
            let root = |s: f64| (-1.0 + (1.0 + 4.0 * s).sqrt()) / 2.0;
            let nudf = (pf * gf).min(root(pn * gn)).ln_1p();
            let fudf = (pn * gn).min(root(pf * gf)).ln_1p();
            let r = baseline_maxmin(&g, &bud, DecodingOrder::Nudf).min_rate;
            assert!((r - nudf).abs() < 1e-6, "{r} vs {nudf}");
            let r = baseline_maxmin(&g, &bud, DecodingOrder::Fudf).min_rate;
            assert!((r - fudf).abs() < 1e-6, "{r} vs {fudf}");
        }
    }

    #[test]
    fn silent_far_user_gives_zero() {
        let g = ChannelGains::new(3.0, 0.0, 1.0, 1.0);
        let bud = PowerBudgets::new(10.0, 10.0);
        for order in DecodingOrder::ALL {
            assert_eq!(baseline_maxmin(&g, &bud, order).min_rate, 0.0);
        }
    }

    #[test]
    fn feasibility_is_monotone_in_target() {
        let g = ChannelGains::new(3.0, 0.7, 1.0, 1.0);
        let bud = PowerBudgets::new(20.0, 50.0);
        for order in DecodingOrder::ALL {
            let flags: Vec<bool> = (0..400)
                .map(|i| baseline_powers_for((i as f64 * 0.01).exp_m1(), &g, &bud, order).is_some())
                .collect();
            let first_bad = flags.iter().position(|f| !f).unwrap();
            assert!(flags[first_bad..].iter().all(|f| !f));
        }
    }
}
