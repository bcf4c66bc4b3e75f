//! Second-order cone tower for `theta >= exp(zeta) - 1`.
//!
//! With `x = zeta / 2^q` the tower first builds the degree-4 Taylor
//! polynomial `1 + x + x^2/2 + x^3/6 + x^4/24` from three squarings and one
//! linear row, then squares it `q` more times. Each squaring is the cone
//! `||[1 - k, t]|| <= 1 + k`, i.e. `t^2 <= 4k`.

use super::program::{Affine, ConicProgram, Var};

/// Slack variables `kappa_1 ..= kappa_{q+4}` added by [`exp_cone_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpConeSlacks {
    pub kappa: Vec<Var>,
}

impl ExpConeSlacks {
    /// The top of the tower, bounded above by `1 + theta`.
    pub fn top(&self) -> Var {
        *self.kappa.last().expect("tower is never empty")
    }
}

/// `||[1 - k, t]|| <= 1 + k`.
fn squaring_row(prog: &mut ConicProgram, k: Var, t: Affine) {
    prog.add_soc(
        vec![Affine::constant(1.0).plus(k, -1.0), t],
        Affine::constant(1.0).plus(k, 1.0),
    );
}

/// Appends the cone tower approximating `theta >= exp(zeta) - 1` with
/// accuracy parameter `q >= 1`, returning the `q + 4` fresh slacks.
pub fn exp_cone_rows(prog: &mut ConicProgram, zeta: Var, theta: Var, q: u32) -> ExpConeSlacks {
    assert!(q >= 1, "cone approximation needs q >= 1");
    let count = q as usize + 4;
    let kappa: Vec<Var> = (1..=count)
        .map(|l| prog.add_var(format!("kappa{l}")))
        .collect();
    let k = |l: usize| kappa[l - 1];
    let pow2 = |e: i32| 2f64.powi(e);

    prog.add_le(k(count), Affine::constant(1.0).plus(theta, 1.0));
    squaring_row(
        prog,
        k(1),
        Affine::constant(2.0).plus(zeta, 1.0 / pow2(q as i32 - 1)),
    );
    squaring_row(
        prog,
        k(2),
        Affine::constant(5.0 / 3.0).plus(zeta, 1.0 / pow2(q as i32)),
    );
    squaring_row(prog, k(3), Affine::term(k(1), 2.0));
    prog.add_ge(
        k(4),
        Affine::term(k(2), 1.0)
            .plus(k(3), 1.0 / 24.0)
            .offset(19.0 / 72.0),
    );
    for l in 5..=count {
        squaring_row(prog, k(l), Affine::term(k(l - 1), 2.0));
    }
    ExpConeSlacks { kappa }
}

/// Smallest feasible value of every slack in the tower for a fixed `zeta`,
/// obtained by propagating each row as an equality.
pub fn minimal_chain(zeta: f64, q: u32) -> Vec<f64> {
    assert!(q >= 1);
    let count = q as usize + 4;
    let mut k = vec![0.0; count];
    let t1 = 2.0 + zeta / 2f64.powi(q as i32 - 1);
    let t2 = 5.0 / 3.0 + zeta / 2f64.powi(q as i32);
    k[0] = t1 * t1 / 4.0;
    k[1] = t2 * t2 / 4.0;
    k[2] = k[0] * k[0];
    k[3] = k[1] + k[2] / 24.0 + 19.0 / 72.0;
    for l in 4..count {
        k[l] = k[l - 1] * k[l - 1];
    }
    k
}

/// Largest `zeta >= 0` whose minimal tower top stays within `1 + theta`;
/// zero when `theta <= 0`.
pub fn max_zeta_within(theta: f64, q: u32) -> f64 {
    if theta.is_nan() || theta <= 0.0 {
        return 0.0;
    }
    let top = |z: f64| *minimal_chain(z, q).last().expect("tower is never empty");
    let cap = 1.0 + theta;
    // The Taylor base lies between 1 + x and e^x.
    let scale = 2f64.powi(q as i32);
    let mut lo = theta.ln_1p();
    let mut hi = scale * (cap.powf(1.0 / scale) - 1.0);
    if top(hi) <= cap {
        return hi;
    }
    if top(lo) > cap {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if top(mid) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve_socp, SolveStatus, SolverSettings};

    #[test]
    fn allocates_q_plus_four_slacks() {
        let mut p = ConicProgram::new();
        let z = p.add_var("zeta");
        let t = p.add_var("theta");
        let s = exp_cone_rows(&mut p, z, t, 4);
        assert_eq!(s.kappa.len(), 8);
        assert_eq!(p.num_vars(), 10);
        // q + 3 squarings, the Taylor row and the cap on the top slack.
        assert_eq!(p.socs().len(), 7);
        assert_eq!(p.linear_rows().len(), 2);
    }

    #[test]
    fn chain_at_zero_is_exactly_one() {
        let k = minimal_chain(0.0, 4);
        assert_eq!(k[0], 1.0);
        assert!((k[1] - 25.0 / 36.0).abs() < 1e-15);
        assert_eq!(k[2], 1.0);
        assert!((k[3] - 1.0).abs() < 1e-15);
        assert!((k[7] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn chain_matches_taylor_power() {
        for &zeta in &[0.3, 1.0, 2.5] {
            for q in 1..=6 {
                let x = zeta / 2f64.powi(q as i32);
                let taylor = 1.0 + x + x * x / 2.0 + x.powi(3) / 6.0 + x.powi(4) / 24.0;
                let top = *minimal_chain(zeta, q).last().unwrap();
                let want = taylor.powi(1 << q);
                assert!((top - want).abs() < 1e-12 * want);
            }
        }
    }

    fn solver_minimal_top(zeta: f64, q: u32) -> f64 {
        let mut p = ConicProgram::new();
        let z = p.add_bounded_var("zeta", zeta, zeta);
        let t = p.add_var("theta");
        let s = exp_cone_rows(&mut p, z, t, q);
        p.set_objective(s.top(), -1.0);
        let settings = SolverSettings {
            feas_tol: 1e-10,
            gap_tol: 1e-10,
            ..SolverSettings::default()
        };
        let r = solve_socp(&p, &settings).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "zeta={zeta}");
        r.x[s.top().index()]
    }

    #[test]
    fn solver_agrees_with_propagated_chain() {
        for zeta in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let exact = *minimal_chain(zeta, 4).last().unwrap();
            let solved = solver_minimal_top(zeta, 4);
            assert!(
                (solved - exact).abs() <= 1e-7 * exact,
                "zeta={zeta}: {solved} vs {exact}"
            );
        }
    }

    #[test]
    fn inverse_of_tower_top() {
        for &theta in &[1e-6, 0.5, 1f64.exp() - 1.0, 20.0, 1e4] {
            let z = max_zeta_within(theta, 4);
            let top = *minimal_chain(z, 4).last().unwrap();
            assert!(top <= 1.0 + theta);
            assert!((top - (1.0 + theta)).abs() <= 1e-12 * (1.0 + theta));
            assert!(z >= theta.ln_1p() - 1e-12, "{theta}: {z}");
        }
        assert_eq!(max_zeta_within(0.0, 4), 0.0);
        assert_eq!(max_zeta_within(-1.0, 4), 0.0);
    }

    #[test]
    fn maximizing_zeta_inverts_the_tower() {
        // theta = e - 1 should allow zeta close to 1.
        let mut p = ConicProgram::new();
        let z = p.add_var("zeta");
        let t = p.add_bounded_var("theta", f64::NEG_INFINITY, 1f64.exp() - 1.0);
        exp_cone_rows(&mut p, z, t, 4);
        p.set_objective(z, 1.0);
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[z.index()] - 1.0).abs() < 1e-4, "{}", r.x[z.index()]);
    }
}
