//! Successive convex approximation for the cooperative max-min problem.
//!
//! Each round replaces the non-convex rate constraints by conservative
//! second-order cone restrictions anchored at the current iterate:
//!
//! * a product `alpha * theta` is bounded above by a slack `s` through
//!   `(alpha / a)^2 + (theta * a)^2 <= 2 s`, tight when `a = sqrt(alpha / theta)`;
//! * the bilinear gain `alpha_n * beta_f` (far-user-first order only) is
//!   bounded below by `Lambda^2`, and `Lambda^2` by its tangent at the anchor;
//! * `theta >= exp(zeta) - 1` is the squaring tower from [`crate::conic`].
//!
//! The previous iterate stays feasible for the next round, so the subproblem
//! optimum never decreases.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelGains;
use crate::conic::{
    exp_cone_rows, max_zeta_within, minimal_chain, solve_socp, Affine, ConicProgram, SolveStatus,
    SolverSettings, Var,
};
use crate::rates::{achievable_rates, min_rate, Allocation, DecodingOrder, PowerBudgets};

/// Floor applied to allocation fractions inside the parameter updates.
const ALPHA_FLOOR: f64 = 1e-9;

/// Margin below which a rate constraint counts as violated.
pub const FEASIBILITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaConfig {
    /// Maximum number of convex subproblems.
    pub max_iters: usize,
    /// Stop once the subproblem optimum improves by no more than this.
    pub epsilon: f64,
    /// Accuracy parameter of the exponential cone tower.
    pub q: u32,
    pub vartheta_floor: f64,
    pub solver: SolverSettings,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            epsilon: 1e-4,
            q: 4,
            vartheta_floor: 1e-9,
            solver: SolverSettings::default(),
        }
    }
}

impl ScaConfig {
    pub fn validate(&self) -> Result<(), ScaError> {
        let bad = |what: &str| Err(ScaError::InvalidConfig(what.to_string()));
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.q < 1 {
            return bad("q must be at least 1");
        }
        if !(self.vartheta_floor > 0.0 && self.vartheta_floor.is_finite()) {
            return bad("vartheta_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid channel gains or power budgets")]
    InvalidInstance,
    #[error("first convex subproblem failed with status {0:?}")]
    SubproblemFailure(SolveStatus),
}

/// Anchor of the current convexification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaState {
    pub allocation: Allocation,
    pub zeta: f64,
    pub vartheta: f64,
    /// `sqrt(alpha_f / theta)`.
    pub a: f64,
    /// `sqrt(alpha_n / theta)`.
    pub b: f64,
    /// `sqrt(beta_f / theta)`, used by the near-user-first order only.
    pub c: f64,
    /// Tangent point for `alpha_n * beta_f >= Lambda^2`.
    pub lambda: f64,
    pub iteration: usize,
}

impl ScaState {
    /// State anchored at `allocation` and `vartheta`, with the parameters
    /// chosen so every product bound is tight there.
    pub fn anchored(
        allocation: Allocation,
        zeta: f64,
        vartheta: f64,
        iteration: usize,
        cfg: &ScaConfig,
    ) -> Self {
        let vartheta = vartheta.max(cfg.vartheta_floor);
        let ratio = |alpha: f64| (alpha.max(ALPHA_FLOOR) / vartheta).sqrt();
        Self {
            allocation,
            zeta,
            vartheta,
            a: ratio(allocation.alpha_f),
            b: ratio(allocation.alpha_n),
            c: ratio(allocation.beta_f),
            lambda: (allocation.alpha_n * allocation.beta_f).sqrt(),
            iteration,
        }
    }
}

/// Allocation every run starts from.
pub const START_ALLOCATION: Allocation = Allocation {
    alpha_n: 0.2,
    alpha_f: 0.8,
    beta_f: 1.0,
};

pub fn initialize_state(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    cfg: &ScaConfig,
) -> ScaState {
    let zeta = min_rate(&START_ALLOCATION, bud, g, order);
    ScaState::anchored(START_ALLOCATION, zeta, zeta.exp_m1(), 0, cfg)
}

/// Variables of one subproblem, in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemVars {
    pub alpha_n: Var,
    pub alpha_f: Var,
    pub beta_f: Var,
    pub zeta: Var,
    pub vartheta: Var,
    /// Upper bound on `alpha_f * theta`.
    pub u: Var,
    /// Upper bound on `alpha_n * theta`.
    pub v: Var,
    /// `Lambda` for far-user-first, the bound on `beta_f * theta` otherwise.
    pub extra: Var,
    pub kappa: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub vars: SubproblemVars,
}

impl Subproblem {
    /// The point of this subproblem corresponding to `state`, with every
    /// slack at its smallest feasible value.
    pub fn anchor_point(&self, state: &ScaState, order: DecodingOrder, q: u32) -> Vec<f64> {
        let al = &state.allocation;
        let mut x = vec![0.0; self.program.num_vars()];
        let vars = &self.vars;
        x[vars.alpha_n.index()] = al.alpha_n;
        x[vars.alpha_f.index()] = al.alpha_f;
        x[vars.beta_f.index()] = al.beta_f;
        x[vars.zeta.index()] = state.zeta;
        x[vars.vartheta.index()] = state.vartheta;
        x[vars.u.index()] = al.alpha_f * state.vartheta;
        x[vars.v.index()] = al.alpha_n * state.vartheta;
        x[vars.extra.index()] = match order {
            DecodingOrder::Fudf => state.lambda,
            DecodingOrder::Nudf => al.beta_f * state.vartheta,
        };
        for (k, val) in vars.kappa.iter().zip(minimal_chain(state.zeta, q)) {
            x[k.index()] = val;
        }
        x
    }
}

/// `||(alpha / p, theta * p)||^2 <= 2 * slack`.
fn product_bound(prog: &mut ConicProgram, alpha: Var, theta: Var, slack: Var, p: f64) {
    prog.add_rotated_soc(
        vec![Affine::term(alpha, 1.0 / p), Affine::term(theta, p)],
        slack,
        Affine::constant(1.0),
    );
}

pub fn build_subproblem(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    state: &ScaState,
    cfg: &ScaConfig,
) -> Subproblem {
    let near = bud.p_n_max * g.gamma_n;
    let far = bud.p_f_max * g.gamma_f;
    let relay = bud.p_f_max * g.gamma_nf;
    let si = bud.p_n_max * g.gamma_si;

    let mut p = ConicProgram::new();
    let alpha_n = p.add_bounded_var("alpha_n", 0.0, 1.0);
    let alpha_f = p.add_bounded_var("alpha_f", 0.0, 1.0);
    let beta_f = p.add_bounded_var("beta_f", 0.0, 1.0);
    let zeta = p.add_bounded_var("zeta", 0.0, f64::INFINITY);
    let vartheta = p.add_bounded_var("vartheta", 0.0, f64::INFINITY);
    let u = p.add_var("u");
    let v = p.add_var("v");
    let extra = match order {
        DecodingOrder::Fudf => p.add_bounded_var("lambda", 0.0, f64::INFINITY),
        DecodingOrder::Nudf => p.add_var("w"),
    };
    p.set_objective(zeta, 1.0);

    p.add_le(
        Affine::term(alpha_n, 1.0).plus(alpha_f, 1.0),
        Affine::constant(1.0),
    );
    // Relay hop: beta_f P_f g_nf >= (alpha_n + alpha_f) theta P_n g_si + theta.
    p.add_ge(
        Affine::term(beta_f, relay),
        Affine::term(v, si).plus(u, si).plus(vartheta, 1.0),
    );
    product_bound(&mut p, alpha_n, vartheta, v, state.b);
    product_bound(&mut p, alpha_f, vartheta, u, state.a);

    match order {
        DecodingOrder::Fudf => {
            let lambda = extra;
            p.add_rotated_soc(
                vec![Affine::term(lambda, 1.0)],
                Affine::term(alpha_n, 0.5),
                beta_f,
            );
            p.add_ge(Affine::term(alpha_n, near), vartheta);
            // Combined far-user SINR, with alpha_n * theta <= v and
            // alpha_n * beta_f >= 2 L0 Lambda - L0^2.
            let l0 = state.lambda;
            p.add_le(
                Affine::term(v, near)
                    .plus(vartheta, 1.0)
                    .plus(lambda, -2.0 * l0 * near * far)
                    .plus(alpha_f, -near)
                    .plus(beta_f, -far)
                    .offset(near * far * l0 * l0),
                Affine::constant(0.0),
            );
        }
        DecodingOrder::Nudf => {
            let w = extra;
            product_bound(&mut p, beta_f, vartheta, w, state.c);
            p.add_ge(
                Affine::term(alpha_n, near),
                Affine::term(u, near).plus(w, far).plus(vartheta, 1.0),
            );
            p.add_ge(Affine::term(alpha_f, near).plus(beta_f, far), vartheta);
        }
    }

    let tower = exp_cone_rows(&mut p, zeta, vartheta, cfg.q);
    Subproblem {
        program: p,
        vars: SubproblemVars {
            alpha_n,
            alpha_f,
            beta_f,
            zeta,
            vartheta,
            u,
            v,
            extra,
            kappa: tower.kappa,
        },
    }
}

/// Largest `theta >= 0` with `A theta^2 + theta + C <= 0`, for `A >= 0`.
fn largest_root(a: f64, c: f64) -> Option<f64> {
    if c > 0.0 {
        return None;
    }
    Some(-2.0 * c / (1.0 + (1.0 - 4.0 * a * c).sqrt()))
}

/// Best `(zeta, theta)` of the subproblem anchored at `anchor` with the
/// allocation held at `alloc`, from closed forms: every constraint is an
/// increasing quadratic in `theta` once the product slacks sit at their
/// smallest feasible values.
///
/// Solver output is only accurate to its tolerances, and its `zeta` may sit
/// slightly above what its own allocation supports. Re-deriving both values
/// gives a point that is exactly feasible for this subproblem and for the
/// next one anchored at it.
pub fn certified_level(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    anchor: &ScaState,
    alloc: &Allocation,
    q: u32,
) -> Option<(f64, f64)> {
    let near = bud.p_n_max * g.gamma_n;
    let far = bud.p_f_max * g.gamma_f;
    let relay = bud.p_f_max * g.gamma_nf;
    let si = bud.p_n_max * g.gamma_si;
    let (a, b, c) = (anchor.a, anchor.b, anchor.c);
    // Slack = fixed part + quadratic coefficient * theta^2.
    let u0 = (alloc.alpha_f / a).powi(2) / 2.0;
    let v0 = (alloc.alpha_n / b).powi(2) / 2.0;
    let w0 = (alloc.beta_f / c).powi(2) / 2.0;
    let (ua, va, wa) = (a * a / 2.0, b * b / 2.0, c * c / 2.0);

    let mut theta = largest_root(si * (ua + va), si * (u0 + v0) - alloc.beta_f * relay)?;
    let mut tighten = |qa: f64, qc: f64| largest_root(qa, qc).map(|t| theta = theta.min(t));
    match order {
        DecodingOrder::Fudf => {
            let l0 = anchor.lambda;
            let lambda = (alloc.alpha_n * alloc.beta_f).sqrt();
            let bilinear = 2.0 * l0 * lambda - l0 * l0;
            tighten(0.0, -alloc.alpha_n * near)?;
            tighten(
                near * va,
                near * v0 - alloc.alpha_f * near - alloc.beta_f * far - near * far * bilinear,
            )?;
        }
        DecodingOrder::Nudf => {
            tighten(
                near * ua + far * wa,
                near * u0 + far * w0 - alloc.alpha_n * near,
            )?;
            tighten(0.0, -(alloc.alpha_f * near + alloc.beta_f * far))?;
        }
    }
    Some((max_zeta_within(theta, q), theta))
}

/// Re-anchors the approximation at a solved point of `sub`, which was built
/// from `state`.
pub fn update_state(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    state: &ScaState,
    sub: &Subproblem,
    x: &[f64],
    cfg: &ScaConfig,
) -> ScaState {
    let vars = &sub.vars;
    let allocation = Allocation::new(
        x[vars.alpha_n.index()],
        x[vars.alpha_f.index()],
        x[vars.beta_f.index()],
    )
    .projected();
    let (zeta, vartheta) = certified_level(g, bud, order, state, &allocation, cfg.q)
        .unwrap_or((x[vars.zeta.index()], x[vars.vartheta.index()]));
    ScaState::anchored(allocation, zeta, vartheta, state.iteration + 1, cfg)
}

/// Margins of the exact rate constraints against a claimed level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub claimed_zeta: f64,
    /// Near user's rate minus the claim.
    pub margin_n: f64,
    /// Far user's rate at the base station minus the claim.
    pub margin_sum: f64,
    /// Far user's rate over the relay hop minus the claim.
    pub margin_relay: f64,
    pub budgets_ok: bool,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn worst_margin(&self) -> f64 {
        self.margin_n.min(self.margin_sum).min(self.margin_relay)
    }
}

pub fn verify_feasibility(
    alloc: &Allocation,
    bud: &PowerBudgets,
    g: &ChannelGains,
    order: DecodingOrder,
    claimed_zeta: f64,
) -> FeasibilityReport {
    let r = achievable_rates(alloc, bud, g, order);
    let margin_n = r.rate_n - claimed_zeta;
    let margin_sum = r.rate_sum_branch - claimed_zeta;
    let margin_relay = r.rate_relay - claimed_zeta;
    let budgets_ok = alloc.is_valid();
    let pass = budgets_ok
        && [margin_n, margin_sum, margin_relay]
            .iter()
            .all(|m| *m >= -FEASIBILITY_TOL);
    FeasibilityReport {
        claimed_zeta,
        margin_n,
        margin_sum,
        margin_relay,
        budgets_ok,
        pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIters,
    SubproblemFailure,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::SubproblemFailure => "subproblem_failure",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One solved subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Certified subproblem optimum.
    pub zeta: f64,
    /// Optimum as reported by the conic solver.
    pub solver_zeta: f64,
    pub vartheta: f64,
    /// Exact min-rate of the (projected) subproblem allocation.
    pub exact_min_rate: f64,
    pub status: SolveStatus,
    pub ipm_iterations: usize,
    pub primal_residual: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub allocation: Allocation,
    /// Subproblem optimum at the returned allocation.
    pub zeta: f64,
    /// Exact min-rate of the returned allocation.
    pub min_rate: f64,
    /// Number of subproblems solved successfully.
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    pub feasibility: FeasibilityReport,
}

impl ScaOutcome {
    pub fn zeta_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.zeta).collect()
    }

    /// Largest decrease between consecutive subproblem optima.
    pub fn max_trace_drop(&self) -> f64 {
        self.trace
            .windows(2)
            .map(|w| w[0].zeta - w[1].zeta)
            .fold(0.0, f64::max)
    }
}

/// Whether some rate is zero for every allocation.
fn trivially_zero(g: &ChannelGains, bud: &PowerBudgets) -> bool {
    bud.p_n_max * g.gamma_n == 0.0 || bud.p_f_max * g.gamma_nf == 0.0
}

pub fn sca_solve(
    g: &ChannelGains,
    bud: &PowerBudgets,
    order: DecodingOrder,
    cfg: &ScaConfig,
) -> Result<ScaOutcome, ScaError> {
    cfg.validate()?;
    if !g.is_valid() || !bud.is_valid() {
        return Err(ScaError::InvalidInstance);
    }
    let mut state = initialize_state(g, bud, order, cfg);
    if trivially_zero(g, bud) {
        let allocation = state.allocation;
        return Ok(ScaOutcome {
            allocation,
            zeta: 0.0,
            min_rate: min_rate(&allocation, bud, g, order),
            iterations: 0,
            trace: Vec::new(),
            termination: Termination::Converged,
            feasibility: verify_feasibility(&allocation, bud, g, order, 0.0),
        });
    }

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<(Allocation, f64, f64)> = None;
    let mut termination = Termination::MaxIters;
    for r in 1..=cfg.max_iters {
        let sub = build_subproblem(g, bud, order, &state, cfg);
        let res = solve_socp(&sub.program, &cfg.solver).expect("subproblem is well formed");
        if res.status != SolveStatus::Optimal {
            if r == 1 {
                return Err(ScaError::SubproblemFailure(res.status));
            }
            termination = Termination::SubproblemFailure;
            break;
        }
        let next = update_state(g, bud, order, &state, &sub, &res.x, cfg);
        // The anchor is itself feasible for this subproblem, so a solver
        // point that scores lower only reflects solver tolerance.
        state = if next.zeta >= state.zeta || r == 1 {
            next
        } else {
            ScaState {
                iteration: next.iteration,
                ..state
            }
        };
        let exact = min_rate(&state.allocation, bud, g, order);
        trace.push(TraceEntry {
            iteration: r,
            zeta: state.zeta,
            solver_zeta: res.x[sub.vars.zeta.index()],
            vartheta: state.vartheta,
            exact_min_rate: exact,
            status: res.status,
            ipm_iterations: res.iterations,
            primal_residual: res.primal_residual,
            duality_gap: res.duality_gap,
        });
        if best.is_none_or(|(_, _, b)| exact > b) {
            best = Some((state.allocation, state.zeta, exact));
        }
        if r >= 2 && trace[r - 1].zeta - trace[r - 2].zeta <= cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }

    let (allocation, zeta, achieved) = best.expect("first subproblem succeeded");
    Ok(ScaOutcome {
        allocation,
        zeta,
        min_rate: achieved,
        iterations: trace.len(),
        trace,
        termination,
        feasibility: verify_feasibility(&allocation, bud, g, order, zeta),
    })
}
