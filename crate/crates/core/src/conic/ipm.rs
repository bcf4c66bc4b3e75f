//! Primal-dual interior-point method for small dense SOCPs.
//!
//! The program is rewritten as
//!
//! ```text
//! minimize  c'x   subject to   Gx + s = h,   s in K
//! ```
//!
//! with `K` a product of one nonnegative orthant and second-order cones, and
//! solved through the homogeneous self-dual embedding with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector. Newton systems are reduced to
//! the normal equations `G' W^-2 G dx = r`, which are tiny here (one row per
//! decision variable), and polished with iterative refinement.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::program::{Affine, ConicProgram, ProgramError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_ipm_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_ipm_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// A certificate of primal infeasibility was found.
    Infeasible,
    /// A certificate of dual infeasibility (unbounded objective) was found.
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal point; only meaningful for `Optimal` and `IterationLimit`.
    pub x: Vec<f64>,
    /// Value of the maximized objective at `x`.
    pub objective: f64,
    /// Relative primal residual `||Gx + s - h|| / max(1, ||h||)` of the
    /// row-equilibrated program.
    pub primal_residual: f64,
    /// Smaller of the absolute and relative duality gaps.
    pub duality_gap: f64,
    pub iterations: usize,
}

/// Solves `prog` (a maximization) to the tolerances in `settings`.
pub fn solve_socp(
    prog: &ConicProgram,
    settings: &SolverSettings,
) -> Result<SolveResult, ProgramError> {
    prog.validate()?;
    let sf = StandardForm::build(prog);
    let mut res = Ipm::new(&sf, settings).run();
    res.x = sf.expand(&res.x);
    res.objective = prog.objective_value(&res.x);
    Ok(res)
}

/// `min c'x  s.t.  Gx + s = h, s in K`, equilibrated, with fixed variables
/// substituted out.
struct StandardForm {
    /// Value of each original variable that is fixed, `None` if it is free.
    fixed: Vec<Option<f64>>,
    n: usize,
    m: usize,
    c: Vec<f64>,
    /// Row-major `m x n`.
    g: Vec<f64>,
    h: Vec<f64>,
    /// Column equilibration factors.
    col_scale: Vec<f64>,
    cones: Cones,
}

impl StandardForm {
    fn build(prog: &ConicProgram) -> Self {
        let fixed: Vec<Option<f64>> = (0..prog.num_vars())
            .map(|i| {
                let (lo, hi) = prog.bounds(super::program::var_from_index(i));
                (lo == hi && lo.is_finite()).then_some(lo)
            })
            .collect();
        let mut column = vec![usize::MAX; fixed.len()];
        let mut n = 0;
        for (i, f) in fixed.iter().enumerate() {
            if f.is_none() {
                column[i] = n;
                n += 1;
            }
        }
        let c: Vec<f64> = (0..fixed.len())
            .filter(|&i| fixed[i].is_none())
            .map(|i| -prog.objective()[i])
            .collect();
        let mut lin: Vec<(Vec<f64>, f64)> = Vec::new();
        // Dense row over free variables plus the contribution of fixed ones.
        let dense = |terms: &[(super::Var, f64)]| {
            let mut row = vec![0.0; n];
            let mut known = 0.0;
            for &(v, k) in terms {
                match fixed[v.index()] {
                    Some(val) => known += k * val,
                    None => row[column[v.index()]] += k,
                }
            }
            (row, known)
        };

        for i in 0..fixed.len() {
            if fixed[i].is_some() {
                continue;
            }
            let (lo, hi) = prog.bounds(super::program::var_from_index(i));
            let i = column[i];
            if hi.is_finite() {
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                lin.push((row, hi));
            }
            if lo.is_finite() {
                let mut row = vec![0.0; n];
                row[i] = -1.0;
                lin.push((row, -lo));
            }
        }
        for row in prog.linear_rows() {
            let (coeffs, known) = dense(&row.coeffs);
            lin.push((coeffs, row.rhs - known));
        }

        // Cone member s_k = h_k - G_k x equals the affine expression e_k(x).
        let cone_row = |e: &Affine| {
            let (mut row, known) = dense(&e.terms);
            row.iter_mut().for_each(|v| *v = -*v);
            (row, e.constant + known)
        };
        let mut socs: Vec<Vec<(Vec<f64>, f64)>> = Vec::new();
        for soc in prog.socs() {
            let mut block = vec![cone_row(&soc.scalar)];
            block.extend(soc.vector.iter().map(cone_row));
            socs.push(block);
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        for r in prog.rotated_socs() {
            // ||v||^2 <= 2ab  <=>  ||(sqrt2 v, a - b)|| <= a + b
            let sum = r.first.clone().minus(&r.second.clone().scale(-1.0));
            let diff = r.first.clone().minus(&r.second);
            let mut block = vec![cone_row(&sum)];
            block.extend(r.vector.iter().map(|e| cone_row(&e.clone().scale(sqrt2))));
            block.push(cone_row(&diff));
            socs.push(block);
        }

        let mut g = Vec::new();
        let mut h = Vec::new();
        // Rows sharing a cone must share a scale factor.
        let mut blocks = Vec::new();
        for (row, rhs) in &lin {
            blocks.push((h.len(), 1));
            g.extend_from_slice(row);
            h.push(*rhs);
        }
        let n_lin = lin.len();
        let mut soc_ranges = Vec::new();
        for block in &socs {
            soc_ranges.push((h.len(), block.len()));
            blocks.push((h.len(), block.len()));
            for (row, rhs) in block {
                g.extend_from_slice(row);
                h.push(*rhs);
            }
        }
        let m = h.len();
        let mut c = c;
        let col_scale = equilibrate(&mut g, &mut h, &mut c, n, &blocks);
        StandardForm {
            fixed,
            n,
            m,
            c,
            g,
            h,
            col_scale,
            cones: Cones {
                n_lin,
                socs: soc_ranges,
            },
        }
    }

    /// Maps a point over free variables back to all original variables.
    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut free = x.iter().zip(&self.col_scale);
        self.fixed
            .iter()
            .map(|f| match f {
                Some(v) => *v,
                None => match free.next() {
                    Some((v, d)) => v * d,
                    None => f64::NAN,
                },
            })
            .collect()
    }

    fn g_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| dot(&self.g[i * self.n..(i + 1) * self.n], x))
            .collect()
    }

    fn gt_mul(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &zi) in z.iter().enumerate() {
            if zi != 0.0 {
                let row = &self.g[i * self.n..(i + 1) * self.n];
                for (o, &gij) in out.iter_mut().zip(row) {
                    *o += gij * zi;
                }
            }
        }
        out
    }
}

/// Ruiz equilibration of `G` in place: rows (per cone block) and columns
/// are repeatedly divided by the square root of their largest entry. Returns
/// the column factors `d`, with original variables `x = d * x_scaled`.
fn equilibrate(
    g: &mut [f64],
    h: &mut [f64],
    c: &mut [f64],
    n: usize,
    blocks: &[(usize, usize)],
) -> Vec<f64> {
    let mut d = vec![1.0; n];
    if n == 0 {
        return d;
    }
    let inv_sqrt = |v: f64| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 };
    for _ in 0..RUIZ_PASSES {
        for &(start, len) in blocks {
            let rows = &mut g[start * n..(start + len) * n];
            let f = inv_sqrt(rows.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            rows.iter_mut().for_each(|v| *v *= f);
            h[start..start + len].iter_mut().for_each(|v| *v *= f);
        }
        for j in 0..n {
            let col_max = (0..g.len() / n).fold(0.0f64, |a, i| a.max(g[i * n + j].abs()));
            let f = inv_sqrt(col_max);
            for i in 0..g.len() / n {
                g[i * n + j] *= f;
            }
            d[j] *= f;
        }
    }
    // Finish with exact unit row maxima.
    for &(start, len) in blocks {
        let rows = &mut g[start * n..(start + len) * n];
        let s = rows.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if s > 0.0 {
            rows.iter_mut().for_each(|v| *v /= s);
            h[start..start + len].iter_mut().for_each(|v| *v /= s);
        }
    }
    for (cj, dj) in c.iter_mut().zip(&d) {
        *cj *= dj;
    }
    d
}

const RUIZ_PASSES: usize = 10;

/// Cone layout: `n_lin` orthant rows followed by second-order cones.
struct Cones {
    n_lin: usize,
    socs: Vec<(usize, usize)>,
}

impl Cones {
    fn degree(&self) -> usize {
        self.n_lin + self.socs.len()
    }

    fn identity(&self, m: usize) -> Vec<f64> {
        let mut e = vec![0.0; m];
        e[..self.n_lin].iter_mut().for_each(|v| *v = 1.0);
        for &(start, _) in &self.socs {
            e[start] = 1.0;
        }
        e
    }

    /// Jordan product `u ∘ v`.
    fn prod(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for i in 0..self.n_lin {
            out[i] = u[i] * v[i];
        }
        for &(st, len) in &self.socs {
            let (u, v) = (&u[st..st + len], &v[st..st + len]);
            out[st] = dot(u, v);
            for k in 1..len {
                out[st + k] = u[0] * v[k] + v[0] * u[k];
            }
        }
        out
    }

    /// Solves `lambda ∘ x = d`.
    fn div(&self, lambda: &[f64], d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; d.len()];
        for i in 0..self.n_lin {
            out[i] = d[i] / lambda[i];
        }
        for &(st, len) in &self.socs {
            let (l, d) = (&lambda[st..st + len], &d[st..st + len]);
            let l1n = norm(&l[1..]);
            let det = (l[0] - l1n) * (l[0] + l1n);
            let x0 = (l[0] * d[0] - dot(&l[1..], &d[1..])) / det;
            out[st] = x0;
            for k in 1..len {
                out[st + k] = (d[k] - x0 * l[k]) / l[0];
            }
        }
        out
    }

    /// Smallest distance to the cone boundary, negative outside.
    fn margin(&self, u: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for &v in &u[..self.n_lin] {
            m = m.min(v);
        }
        for &(st, len) in &self.socs {
            m = m.min(u[st] - norm(&u[st + 1..st + len]));
        }
        m
    }

    /// Largest `t` with `u + t du` in the cone (may be infinite).
    fn max_step(&self, u: &[f64], du: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        for i in 0..self.n_lin {
            if du[i] < 0.0 {
                t = t.min(-u[i] / du[i]);
            }
        }
        for &(st, len) in &self.socs {
            t = t.min(soc_step(&u[st..st + len], &du[st..st + len]));
        }
        t
    }
}

fn soc_step(u: &[f64], d: &[f64]) -> f64 {
    let u1n = norm(&u[1..]);
    let c = (u[0] - u1n) * (u[0] + u1n);
    let b = u[0] * d[0] - dot(&u[1..], &d[1..]);
    let a = d[0] * d[0] - dot(&d[1..], &d[1..]);
    // Roots of a t^2 + 2 b t + c; c > 0 at an interior point.
    let disc = b * b - a * c;
    if a == 0.0 {
        return if b < 0.0 {
            -c / (2.0 * b)
        } else {
            f64::INFINITY
        };
    }
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let mut t = f64::INFINITY;
    for r in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
        if r > 0.0 {
            t = t.min(r);
        }
    }
    t
}

/// Nesterov-Todd scaling `W` with `W z = W^-1 s = lambda`.
struct Scaling {
    lin: Vec<f64>,
    socs: Vec<(f64, Vec<f64>)>,
}

impl Scaling {
    fn identity(cones: &Cones) -> Self {
        Scaling {
            lin: vec![1.0; cones.n_lin],
            socs: cones
                .socs
                .iter()
                .map(|&(_, len)| {
                    let mut w = vec![0.0; len];
                    w[0] = 1.0;
                    (1.0, w)
                })
                .collect(),
        }
    }

    fn nesterov_todd(cones: &Cones, s: &[f64], z: &[f64]) -> Option<Self> {
        let mut lin = Vec::with_capacity(cones.n_lin);
        for i in 0..cones.n_lin {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            lin.push((s[i] / z[i]).sqrt());
        }
        let mut socs = Vec::with_capacity(cones.socs.len());
        for &(st, len) in &cones.socs {
            let (s, z) = (&s[st..st + len], &z[st..st + len]);
            let sn = jnorm(s)?;
            let zn = jnorm(z)?;
            let sb: Vec<f64> = s.iter().map(|v| v / sn).collect();
            let zb: Vec<f64> = z.iter().map(|v| v / zn).collect();
            let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
            let mut w = vec![0.0; len];
            w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
            for k in 1..len {
                w[k] = (sb[k] - zb[k]) / (2.0 * gamma);
            }
            // Renormalize so that w'Jw = 1 holds to rounding.
            let wn = jnorm(&w)?;
            w.iter_mut().for_each(|v| *v /= wn);
            socs.push(((sn / zn).sqrt(), w));
        }
        Some(Scaling { lin, socs })
    }

    fn apply_block(eta: f64, w: &[f64], v: &mut [f64], inverse: bool) {
        let sign = if inverse { -1.0 } else { 1.0 };
        let k = if inverse { 1.0 / eta } else { eta };
        let w1v1 = dot(&w[1..], &v[1..]);
        let v0 = v[0];
        let coef = sign * v0 + w1v1 / (1.0 + w[0]);
        v[0] = k * (w[0] * v0 + sign * w1v1);
        for i in 1..v.len() {
            v[i] = k * (v[i] + coef * w[i]);
        }
    }

    fn apply_in_place(&self, cones: &Cones, v: &mut [f64], inverse: bool) {
        for (x, d) in v[..cones.n_lin].iter_mut().zip(&self.lin) {
            if inverse {
                *x /= d;
            } else {
                *x *= d;
            }
        }
        for (&(st, len), (eta, w)) in cones.socs.iter().zip(&self.socs) {
            Self::apply_block(*eta, w, &mut v[st..st + len], inverse);
        }
    }

    fn apply(&self, cones: &Cones, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.apply_in_place(cones, &mut out, false);
        out
    }

    fn apply_inv(&self, cones: &Cones, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.apply_in_place(cones, &mut out, true);
        out
    }
}

/// Sqrt of `u'Ju`; `None` outside the interior.
fn jnorm(u: &[f64]) -> Option<f64> {
    let u1n = norm(&u[1..]);
    let d = (u[0] - u1n) * (u[0] + u1n);
    if u[0] > 0.0 && d > 0.0 {
        Some(d.sqrt())
    } else {
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Factorized reduced KKT system
/// `[0 G'; G -W'W] [dx; dz] = [r1; r2]` for one scaling.
struct Kkt<'a> {
    sf: &'a StandardForm,
    w: &'a Scaling,
    /// `W^-1 G`, row-major.
    wg: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// LU of the unreduced system, built on first need.
    full: std::cell::OnceCell<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
}

impl<'a> Kkt<'a> {
    fn factor(sf: &'a StandardForm, w: &'a Scaling) -> Option<Self> {
        let (n, m) = (sf.n, sf.m);
        let mut wg = vec![0.0; m * n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = sf.g[i * n + j];
            }
            w.apply_in_place(&sf.cones, &mut col, true);
            for (i, c) in col.iter().enumerate() {
                wg[i * n + j] = *c;
            }
        }
        let mut hmat = DMatrix::<f64>::zeros(n, n);
        for i in 0..m {
            let row = &wg[i * n..(i + 1) * n];
            for a in 0..n {
                if row[a] == 0.0 {
                    continue;
                }
                for b in a..n {
                    hmat[(a, b)] += row[a] * row[b];
                }
            }
        }
        let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(hmat[(i, i)]));
        let mut reg = 1e-14 * max_diag.max(1.0);
        for a in 0..n {
            for b in 0..a {
                hmat[(a, b)] = hmat[(b, a)];
            }
        }
        for _ in 0..8 {
            let mut trial = hmat.clone();
            for i in 0..n {
                trial[(i, i)] += reg;
            }
            if let Some(chol) = trial.cholesky() {
                return Some(Kkt {
                    sf,
                    w,
                    wg,
                    chol,
                    full: std::cell::OnceCell::new(),
                });
            }
            reg *= 100.0;
        }
        None
    }

    fn solve_once(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.sf.n, self.sf.m);
        let cones = &self.sf.cones;
        let wr2 = self.w.apply_inv(cones, r2);
        let mut rhs = r1.to_vec();
        for (i, &r) in wr2.iter().enumerate() {
            if r != 0.0 {
                axpy(r, &self.wg[i * n..(i + 1) * n], &mut rhs);
            }
        }
        let dx = self.chol.solve(&DVector::from_vec(rhs));
        let dx: Vec<f64> = dx.iter().copied().collect();
        let mut t: Vec<f64> = (0..m)
            .map(|i| dot(&self.wg[i * n..(i + 1) * n], &dx) - wr2[i])
            .collect();
        self.w.apply_in_place(cones, &mut t, true);
        (dx, t)
    }

    fn residual(&self, r1: &[f64], r2: &[f64], dx: &[f64], dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cones = &self.sf.cones;
        let gtdz = self.sf.gt_mul(dz);
        let e1: Vec<f64> = r1.iter().zip(&gtdz).map(|(a, b)| a - b).collect();
        let gdx = self.sf.g_mul(dx);
        let w2dz = self.w.apply(cones, &self.w.apply(cones, dz));
        let e2: Vec<f64> = (0..self.sf.m).map(|i| r2[i] - (gdx[i] - w2dz[i])).collect();
        (e1, e2)
    }

    fn full_lu(&self) -> Option<&nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        self.full
            .get_or_init(|| {
                let (n, m) = (self.sf.n, self.sf.m);
                let mut k = DMatrix::<f64>::zeros(n + m, n + m);
                for i in 0..m {
                    for j in 0..n {
                        let g = self.sf.g[i * n + j];
                        k[(n + i, j)] = g;
                        k[(j, n + i)] = g;
                    }
                }
                let cones = &self.sf.cones;
                let mut unit = vec![0.0; m];
                for j in 0..m {
                    unit.iter_mut().for_each(|v| *v = 0.0);
                    unit[j] = 1.0;
                    let col = self.w.apply(cones, &self.w.apply(cones, &unit));
                    for i in 0..m {
                        k[(n + i, n + j)] = -col[i];
                    }
                }
                let lu = k.lu();
                lu.is_invertible().then_some(lu)
            })
            .as_ref()
    }

    fn solve_full(&self, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let lu = self.full_lu()?;
        let rhs = DVector::from_iterator(r1.len() + r2.len(), r1.iter().chain(r2).copied());
        let sol = lu.solve(&rhs)?;
        let n = self.sf.n;
        Some((
            sol.rows(0, n).iter().copied().collect(),
            sol.rows(n, self.sf.m).iter().copied().collect(),
        ))
    }

    fn refine(
        &self,
        r1: &[f64],
        r2: &[f64],
        mut dx: Vec<f64>,
        mut dz: Vec<f64>,
        full: bool,
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let scale = 1.0 + norm(r1).max(norm(r2));
        let (mut e1, mut e2) = self.residual(r1, r2, &dx, &dz);
        let mut err = norm(&e1).max(norm(&e2));
        for _ in 0..MAX_REFINE {
            if err <= 1e-15 * scale {
                break;
            }
            let corr = if full {
                self.solve_full(&e1, &e2)
            } else {
                Some(self.solve_once(&e1, &e2))
            };
            let Some((cx, cz)) = corr else { break };
            let mut nx = dx.clone();
            axpy(1.0, &cx, &mut nx);
            let mut nz = dz.clone();
            axpy(1.0, &cz, &mut nz);
            let (f1, f2) = self.residual(r1, r2, &nx, &nz);
            let new_err = norm(&f1).max(norm(&f2));
            if new_err.is_nan() || new_err >= 0.5 * err {
                if new_err < err {
                    (dx, dz, err) = (nx, nz, new_err);
                }
                break;
            }
            (dx, dz, e1, e2, err) = (nx, nz, f1, f2, new_err);
        }
        (dx, dz, err / scale)
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (dx, dz) = self.solve_once(r1, r2);
        let (dx, dz, err) = self.refine(r1, r2, dx, dz, false);
        if err <= FULL_SOLVE_THRESHOLD {
            return (dx, dz);
        }
        match self.solve_full(r1, r2) {
            Some((fx, fz)) => {
                let (fx, fz, ferr) = self.refine(r1, r2, fx, fz, true);
                if ferr < err {
                    (fx, fz)
                } else {
                    (dx, dz)
                }
            }
            None => (dx, dz),
        }
    }
}

const REDUCED_ACCURACY: f64 = 100.0;

/// Relative KKT residual above which the reduced solve is redone on the
/// full system.
const FULL_SOLVE_THRESHOLD: f64 = 1e-9;
const MAX_REFINE: usize = 8;

struct Ipm<'a> {
    sf: &'a StandardForm,
    settings: &'a SolverSettings,
}

struct Snapshot {
    x: Vec<f64>,
    pres: f64,
    gap: f64,
    score: f64,
}

struct Direction {
    dx: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
    /// `W^-1 ds`.
    ds_scaled: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

impl<'a> Ipm<'a> {
    fn new(sf: &'a StandardForm, settings: &'a SolverSettings) -> Self {
        Ipm { sf, settings }
    }

    fn finish(
        &self,
        status: SolveStatus,
        x: &[f64],
        tau: f64,
        pres: f64,
        gap: f64,
        it: usize,
    ) -> SolveResult {
        SolveResult {
            status,
            x: x.iter().map(|v| v / tau).collect(),
            objective: 0.0,
            primal_residual: pres,
            duality_gap: gap,
            iterations: it,
        }
    }

    /// Result built from the best iterate seen, for runs that end badly.
    fn from_best(status: SolveStatus, best: &Option<Snapshot>, n: usize, it: usize) -> SolveResult {
        match best {
            Some(b) => SolveResult {
                status,
                x: b.x.clone(),
                objective: 0.0,
                primal_residual: b.pres,
                duality_gap: b.gap,
                iterations: it,
            },
            None => SolveResult {
                status,
                x: vec![f64::NAN; n],
                objective: f64::NAN,
                primal_residual: f64::INFINITY,
                duality_gap: f64::INFINITY,
                iterations: it,
            },
        }
    }

    /// Result when progress stops before the tolerances are met. A best
    /// iterate within `REDUCED_ACCURACY` times the tolerances still counts.
    fn stalled(&self, best: &Option<Snapshot>, n: usize, it: usize) -> SolveResult {
        let close = best.as_ref().is_some_and(|b| {
            b.score <= REDUCED_ACCURACY * self.settings.feas_tol.max(self.settings.gap_tol)
        });
        let status = if close {
            SolveStatus::Optimal
        } else {
            SolveStatus::NumericalFailure
        };
        Self::from_best(status, best, n, it)
    }

    fn shift_into_cone(cones: &Cones, u: &mut [f64]) {
        let margin = cones.margin(u);
        if margin <= 0.0 {
            let e = cones.identity(u.len());
            axpy(1.0 - margin, &e, u);
        }
    }

    fn run(&self) -> SolveResult {
        let sf = self.sf;
        let cones = &sf.cones;
        let (n, m) = (sf.n, sf.m);
        let nan_result = |status| SolveResult {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            primal_residual: f64::INFINITY,
            duality_gap: f64::INFINITY,
            iterations: 0,
        };
        if m == 0 {
            // Unconstrained: optimal iff the objective is zero.
            return if sf.c.iter().all(|&v| v == 0.0) {
                self.finish(SolveStatus::Optimal, &vec![0.0; n], 1.0, 0.0, 0.0, 0)
            } else {
                nan_result(SolveStatus::Unbounded)
            };
        }

        // Initial point from two least-squares solves with W = I.
        let ident = Scaling::identity(cones);
        let Some(kkt0) = Kkt::factor(sf, &ident) else {
            return nan_result(SolveStatus::NumericalFailure);
        };
        let (mut x, z0) = kkt0.solve(&vec![0.0; n], &sf.h);
        let mut s: Vec<f64> = z0.iter().map(|v| -v).collect();
        Self::shift_into_cone(cones, &mut s);
        let neg_c: Vec<f64> = sf.c.iter().map(|v| -v).collect();
        let (_, mut z) = kkt0.solve(&neg_c, &vec![0.0; m]);
        Self::shift_into_cone(cones, &mut z);
        drop(kkt0);
        let mut tau = 1.0;
        let mut kappa = 1.0;

        let hnorm = norm(&sf.h).max(1.0);
        let cnorm = norm(&sf.c).max(1.0);
        let degree = cones.degree() as f64;
        let e = cones.identity(m);
        let mut best: Option<Snapshot> = None;
        let mut stalled = 0;

        for it in 0..=self.settings.max_ipm_iters {
            let gx = sf.g_mul(&x);
            let gtz = sf.gt_mul(&z);
            let cx = dot(&sf.c, &x);
            let hz = dot(&sf.h, &z);
            let rx: Vec<f64> = (0..n).map(|i| gtz[i] + sf.c[i] * tau).collect();
            let rz: Vec<f64> = (0..m).map(|i| s[i] + gx[i] - sf.h[i] * tau).collect();
            let rt = kappa + cx + hz;

            let pres = norm(&rz) / tau / hnorm;
            let dres = norm(&rx) / tau / cnorm;
            let pcost = cx / tau;
            let dcost = -hz / tau;
            let sz = dot(&s, &z);
            let gap = sz / (tau * tau);
            let relgap = gap / pcost.abs().min(dcost.abs()).max(1e-12);
            let gap_est = gap.min(relgap);
            if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
                return self.stalled(&best, n, it);
            }
            if pres <= self.settings.feas_tol
                && dres <= self.settings.feas_tol
                && gap_est <= self.settings.gap_tol
            {
                return self.finish(SolveStatus::Optimal, &x, tau, pres, gap_est, it);
            }
            if hz < 0.0 && norm(&gtz) / -hz <= self.settings.feas_tol {
                return SolveResult {
                    iterations: it,
                    ..nan_result(SolveStatus::Infeasible)
                };
            }
            if cx < 0.0 {
                let gxs: Vec<f64> = gx.iter().zip(&s).map(|(a, b)| a + b).collect();
                if norm(&gxs) / -cx <= self.settings.feas_tol {
                    return SolveResult {
                        iterations: it,
                        ..nan_result(SolveStatus::Unbounded)
                    };
                }
            }
            let score = pres.max(dres).max(gap_est);
            match &best {
                Some(b) if score >= b.score => {
                    // Rounding noise has overtaken progress.
                    stalled = if pres > 100.0 * b.pres.max(1e-3 * self.settings.feas_tol) {
                        stalled + 1
                    } else {
                        0
                    };
                    if stalled >= 3 {
                        return self.stalled(&best, n, it);
                    }
                }
                _ => {
                    stalled = 0;
                    best = Some(Snapshot {
                        x: x.iter().map(|v| v / tau).collect(),
                        pres,
                        gap: gap_est,
                        score,
                    });
                }
            }
            if it == self.settings.max_ipm_iters {
                break;
            }

            let Some(w) = Scaling::nesterov_todd(cones, &s, &z) else {
                return self.stalled(&best, n, it);
            };
            let lambda = w.apply(cones, &z);
            let mu = (sz + tau * kappa) / (degree + 1.0);
            let Some(kkt) = Kkt::factor(sf, &w) else {
                return self.stalled(&best, n, it);
            };
            let (x1, z1) = kkt.solve(&neg_c, &sf.h);
            let denom = dot(&sf.c, &x1) + dot(&sf.h, &z1) - kappa / tau;

            let direction = |eta: f64, d_s: &[f64], d_k: f64| -> Direction {
                let lds = cones.div(&lambda, d_s);
                let wlds = w.apply(cones, &lds);
                let r1: Vec<f64> = rx.iter().map(|v| -eta * v).collect();
                let r2: Vec<f64> = (0..m).map(|i| -eta * rz[i] - wlds[i]).collect();
                let (x2, z2) = kkt.solve(&r1, &r2);
                let dtau = (-eta * rt - d_k / tau - dot(&sf.c, &x2) - dot(&sf.h, &z2)) / denom;
                let mut dx = x2;
                axpy(dtau, &x1, &mut dx);
                let mut dz = z2;
                axpy(dtau, &z1, &mut dz);
                let wdz = w.apply(cones, &dz);
                let ds_scaled: Vec<f64> = lds.iter().zip(&wdz).map(|(a, b)| a - b).collect();
                let ds = w.apply(cones, &ds_scaled);
                let dkappa = (d_k - kappa * dtau) / tau;
                Direction {
                    dx,
                    dz,
                    ds,
                    ds_scaled,
                    dtau,
                    dkappa,
                }
            };
            let step_to_boundary = |d: &Direction| -> f64 {
                let mut t = cones.max_step(&s, &d.ds).min(cones.max_step(&z, &d.dz));
                if d.dtau < 0.0 {
                    t = t.min(-tau / d.dtau);
                }
                if d.dkappa < 0.0 {
                    t = t.min(-kappa / d.dkappa);
                }
                t
            };

            // Predictor.
            let ll = cones.prod(&lambda, &lambda);
            let ds_aff: Vec<f64> = ll.iter().map(|v| -v).collect();
            let aff = direction(1.0, &ds_aff, -tau * kappa);
            let alpha_aff = step_to_boundary(&aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // Corrector.
            let cross = cones.prod(&aff.ds_scaled, &w.apply(cones, &aff.dz));
            let d_s: Vec<f64> = (0..m)
                .map(|i| -ll[i] - cross[i] + sigma * mu * e[i])
                .collect();
            let d_k = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
            let dir = direction(1.0 - sigma, &d_s, d_k);
            let mut alpha = (0.99 * step_to_boundary(&dir)).min(1.0);
            if !alpha.is_finite() || alpha <= 0.0 {
                return self.stalled(&best, n, it);
            }

            // Guard against rounding pushing an iterate onto the boundary.
            let mut accepted = false;
            for _ in 0..20 {
                let mut s_new = s.clone();
                axpy(alpha, &dir.ds, &mut s_new);
                let mut z_new = z.clone();
                axpy(alpha, &dir.dz, &mut z_new);
                let tau_new = tau + alpha * dir.dtau;
                let kappa_new = kappa + alpha * dir.dkappa;
                if cones.margin(&s_new) > 0.0
                    && cones.margin(&z_new) > 0.0
                    && tau_new > 0.0
                    && kappa_new > 0.0
                {
                    axpy(alpha, &dir.dx, &mut x);
                    s = s_new;
                    z = z_new;
                    tau = tau_new;
                    kappa = kappa_new;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return self.stalled(&best, n, it);
            }
        }
        Self::from_best(
            SolveStatus::IterationLimit,
            &best,
            n,
            self.settings.max_ipm_iters,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::program::Affine;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn scaling_maps_s_and_z_to_same_point() {
        let cones = Cones {
            n_lin: 2,
            socs: vec![(2, 3), (5, 4)],
        };
        let s = [1.5, 0.2, 3.0, 1.0, -0.5, 2.0, 0.3, 0.4, -1.0];
        let z = [0.7, 4.0, 2.0, -0.3, 1.2, 5.0, -2.0, 1.0, 0.5];
        let w = Scaling::nesterov_todd(&cones, &s, &z).unwrap();
        let wz = w.apply(&cones, &z);
        let wis = w.apply_inv(&cones, &s);
        for (a, b) in wz.iter().zip(&wis) {
            assert!(close(*a, *b, 1e-12), "{a} vs {b}");
        }
        let back = w.apply_inv(&cones, &w.apply(&cones, &s));
        for (a, b) in back.iter().zip(&s) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let cones = Cones {
            n_lin: 1,
            socs: vec![(1, 3)],
        };
        let l = [2.0, 3.0, 0.5, -1.0];
        let x = [0.3, -0.7, 2.0, 0.1];
        let d = cones.prod(&l, &x);
        let back = cones.div(&l, &d);
        for (a, b) in back.iter().zip(&x) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let u = [2.0, 0.0, 0.0];
        let d = [-1.0, 1.0, 0.0];
        // 2 - t = t  =>  t = 1
        assert!(close(soc_step(&u, &d), 1.0, 1e-14));
        assert_eq!(soc_step(&u, &[1.0, 0.5, 0.0]), f64::INFINITY);
    }

    #[test]
    fn single_bound() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.set_objective(x, 1.0);
        p.add_le(x, Affine::constant(3.0));
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(close(r.x[0], 3.0, 1e-7));
        assert!(r.primal_residual <= 1e-8 && r.duality_gap <= 1e-8);
    }

    #[test]
    fn capped_cone_example() {
        // max zeta  s.t. zeta <= k, ||[1 - k, 2]|| <= 1 + k, k <= 1  =>  zeta = 1
        let mut p = ConicProgram::new();
        let zeta = p.add_var("zeta");
        let k = p.add_var("k");
        p.set_objective(zeta, 1.0);
        p.add_le(zeta, k);
        p.add_le(k, Affine::constant(1.0));
        p.add_soc(
            vec![Affine::constant(1.0).plus(k, -1.0), Affine::constant(2.0)],
            Affine::constant(1.0).plus(k, 1.0),
        );
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(close(r.objective, 1.0, 1e-6), "{}", r.objective);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.set_objective(x, 1.0);
        p.add_ge(x, Affine::constant(5.0));
        p.add_le(x, Affine::constant(3.0));
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.set_objective(x, 1.0);
        p.add_ge(x, Affine::constant(0.0));
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn rotated_cone_product() {
        // max t  s.t. t^2 <= 2 * a * b, a <= 2, b <= 4  =>  t = 4
        let mut p = ConicProgram::new();
        let t = p.add_var("t");
        let a = p.add_var("a");
        let b = p.add_var("b");
        p.set_objective(t, 1.0);
        p.add_rotated_soc(vec![t.into()], a, b);
        p.add_le(a, Affine::constant(2.0));
        p.add_le(b, Affine::constant(4.0));
        let r = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(close(r.x[0], 4.0, 1e-7), "{:?}", r.x);
    }

    #[test]
    fn deterministic() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(x, 1.0);
        p.set_objective(y, 2.0);
        p.add_soc(vec![x.into(), y.into()], Affine::constant(1.0));
        let a = solve_socp(&p, &SolverSettings::default()).unwrap();
        let b = solve_socp(&p, &SolverSettings::default()).unwrap();
        assert_eq!(a, b);
        assert!(close(a.objective, 5f64.sqrt(), 1e-7));
    }
}
