use std::fmt;

use thiserror::Error;

/// Handle to a decision variable of one [`ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

pub(crate) fn var_from_index(i: usize) -> Var {
    Var(i)
}

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `sum(coef * x[var]) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: Var, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    /// Adds `coef * v`.
    pub fn plus(mut self, v: Var, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    /// Adds a constant offset.
    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scale(mut self, k: f64) -> Self {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    pub fn minus(mut self, other: &Affine) -> Self {
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, -c)));
        self.constant -= other.constant;
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }
}

impl From<Var> for Affine {
    fn from(v: Var) -> Self {
        Affine::term(v, 1.0)
    }
}

/// `coeffs · x <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(Var, f64)>,
    pub rhs: f64,
}

/// `||vector||_2 <= scalar`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub vector: Vec<Affine>,
    pub scalar: Affine,
}

/// `||vector||_2^2 <= 2 * first * second` with `first, second >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedSocConstraint {
    pub vector: Vec<Affine>,
    pub first: Affine,
    pub second: Affine,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("variable index {index} out of range for a program with {num_vars} variables")]
    VarOutOfRange { index: usize, num_vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("rotated cone #{0} has a negative constant scalar")]
    NegativeRotatedScalar(usize),
}

/// Small dense conic program: maximize `c · x` subject to linear rows,
/// second-order cones, rotated cones and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    linear: Vec<LinearRow>,
    socs: Vec<SocConstraint>,
    rotated: Vec<RotatedSocConstraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a free variable.
    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.add_bounded_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_bounded_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Var {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        Var(self.names.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    /// Variable names in creation order.
    pub fn var_names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn bounds(&self, v: Var) -> (f64, f64) {
        (self.lower[v.0], self.upper[v.0])
    }

    pub fn set_bounds(&mut self, v: Var, lower: f64, upper: f64) {
        self.lower[v.0] = lower;
        self.upper[v.0] = upper;
    }

    /// Sets the coefficient of `v` in the maximized objective.
    pub fn set_objective(&mut self, v: Var, coef: f64) {
        self.objective[v.0] = coef;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn linear_rows(&self) -> &[LinearRow] {
        &self.linear
    }

    pub fn socs(&self) -> &[SocConstraint] {
        &self.socs
    }

    pub fn rotated_socs(&self) -> &[RotatedSocConstraint] {
        &self.rotated
    }

    /// `lhs <= rhs`.
    pub fn add_le(&mut self, lhs: impl Into<Affine>, rhs: impl Into<Affine>) {
        let diff = lhs.into().minus(&rhs.into());
        self.linear.push(LinearRow {
            coeffs: merge_terms(diff.terms),
            rhs: -diff.constant,
        });
    }

    /// `lhs >= rhs`.
    pub fn add_ge(&mut self, lhs: impl Into<Affine>, rhs: impl Into<Affine>) {
        self.add_le(rhs, lhs);
    }

    pub fn add_soc(&mut self, vector: Vec<Affine>, scalar: impl Into<Affine>) {
        self.socs.push(SocConstraint {
            vector,
            scalar: scalar.into(),
        });
    }

    /// Adds `||vector||^2 <= 2 * first * second` together with nonnegativity
    /// rows for whichever of the two scalars depends on a variable.
    pub fn add_rotated_soc(
        &mut self,
        vector: Vec<Affine>,
        first: impl Into<Affine>,
        second: impl Into<Affine>,
    ) {
        let first = first.into();
        let second = second.into();
        for s in [&first, &second] {
            if !s.is_constant() {
                self.add_ge(s.clone(), Affine::constant(0.0));
            }
        }
        self.rotated.push(RotatedSocConstraint {
            vector,
            first,
            second,
        });
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        let check_var = |v: Var| {
            if v.0 < n {
                Ok(())
            } else {
                Err(ProgramError::VarOutOfRange {
                    index: v.0,
                    num_vars: n,
                })
            }
        };
        let check_affine = |a: &Affine, what| -> Result<(), ProgramError> {
            if !a.constant.is_finite() {
                return Err(ProgramError::NonFinite(what));
            }
            for &(v, c) in &a.terms {
                check_var(v)?;
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite(what));
                }
            }
            Ok(())
        };
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(ProgramError::NonFinite("objective"));
        }
        if self.lower.iter().chain(&self.upper).any(|b| b.is_nan()) {
            return Err(ProgramError::NonFinite("bounds"));
        }
        for row in &self.linear {
            if !row.rhs.is_finite() {
                return Err(ProgramError::NonFinite("linear row"));
            }
            for &(v, c) in &row.coeffs {
                check_var(v)?;
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite("linear row"));
                }
            }
        }
        for soc in &self.socs {
            check_affine(&soc.scalar, "cone")?;
            for a in &soc.vector {
                check_affine(a, "cone")?;
            }
        }
        for (i, r) in self.rotated.iter().enumerate() {
            check_affine(&r.first, "rotated cone")?;
            check_affine(&r.second, "rotated cone")?;
            for a in &r.vector {
                check_affine(a, "rotated cone")?;
            }
            for s in [&r.first, &r.second] {
                if s.is_constant() && s.constant < 0.0 {
                    return Err(ProgramError::NegativeRotatedScalar(i));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &xi) in x.iter().enumerate().take(self.num_vars()) {
            worst = worst.max(self.lower[i] - xi).max(xi - self.upper[i]);
        }
        for row in &self.linear {
            let lhs: f64 = row.coeffs.iter().map(|&(v, c)| c * x[v.0]).sum();
            worst = worst.max(lhs - row.rhs);
        }
        for soc in &self.socs {
            worst = worst.max(norm(&soc.vector, x) - soc.scalar.eval(x));
        }
        for r in &self.rotated {
            let (a, b) = (r.first.eval(x), r.second.eval(x));
            let sq: f64 = r.vector.iter().map(|e| e.eval(x).powi(2)).sum();
            worst = worst.max(-a).max(-b).max(sq - 2.0 * a * b);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

fn norm(v: &[Affine], x: &[f64]) -> f64 {
    v.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt()
}

fn merge_terms(mut terms: Vec<(Var, f64)>) -> Vec<(Var, f64)> {
    terms.sort_by_key(|&(v, _)| v);
    let mut out: Vec<(Var, f64)> = Vec::with_capacity(terms.len());
    for (v, c) in terms {
        match out.last_mut() {
            Some((last, acc)) if *last == v => *acc += c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|&(_, c)| c != 0.0);
    out
}

struct AffineDisplay<'a>(&'a ConicProgram, &'a Affine);

impl fmt::Display for AffineDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &(v, c) in &self.1.terms {
            if !first {
                f.write_str(" + ")?;
            }
            write!(f, "{c:e}*{}", self.0.names[v.0])?;
            first = false;
        }
        if first || self.1.constant != 0.0 {
            if !first {
                f.write_str(" + ")?;
            }
            write!(f, "{:e}", self.1.constant)?;
        }
        Ok(())
    }
}

/// Plain-text dump, one constraint per line.
impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |a: &Affine| AffineDisplay(self, a).to_string();
        let obj = Affine {
            terms: self
                .objective
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, &c)| (Var(i), c))
                .collect(),
            constant: 0.0,
        };
        writeln!(f, "maximize {}", show(&obj))?;
        for (i, name) in self.names.iter().enumerate() {
            writeln!(
                f,
                "var {name} in [{:e}, {:e}]",
                self.lower[i], self.upper[i]
            )?;
        }
        for row in &self.linear {
            let lhs = Affine {
                terms: row.coeffs.clone(),
                constant: 0.0,
            };
            writeln!(f, "lin {} <= {:e}", show(&lhs), row.rhs)?;
        }
        for soc in &self.socs {
            let parts: Vec<String> = soc.vector.iter().map(show).collect();
            writeln!(f, "soc ||[{}]|| <= {}", parts.join("; "), show(&soc.scalar))?;
        }
        for r in &self.rotated {
            let parts: Vec<String> = r.vector.iter().map(show).collect();
            writeln!(
                f,
                "rsoc ||[{}]||^2 <= 2 ({}) ({})",
                parts.join("; "),
                show(&r.first),
                show(&r.second)
            )?;
        }
        Ok(())
    }
}
