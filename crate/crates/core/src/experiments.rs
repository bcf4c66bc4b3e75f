//! Monte-Carlo sweeps over the cooperative and conventional schemes.
//!
//! Every trial draws one set of gains from its own random stream and runs
//! all requested schemes on it, so scheme comparisons are paired. Trials are
//! spread over a worker pool and collected in (point, trial) order; the
//! output does not depend on the number of workers.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{sample_gains, ChannelDistribution, ChannelGains};
use crate::oracle::{baseline_maxmin, grid_maxmin};
use crate::rates::{DecodingOrder, PowerBudgets};
use crate::sca::{sca_solve, ScaConfig, Termination};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_TRIALS: u32 = 1000;
/// Share of solved trials every sweep point needs.
pub const SUCCESS_THRESHOLD: f64 = 0.99;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset '{name}' (valid: {})", valid.join(", "))]
    UnknownPreset { name: String, valid: Vec<String> },
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "CNOMA-FUDF")]
    CnomaFudf,
    #[serde(rename = "CNOMA-NUDF")]
    CnomaNudf,
    #[serde(rename = "NOMA-NUDF")]
    NomaNudf,
    #[serde(rename = "NOMA-FUDF")]
    NomaFudf,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::CnomaFudf,
        Scheme::CnomaNudf,
        Scheme::NomaNudf,
        Scheme::NomaFudf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::CnomaFudf => "CNOMA-FUDF",
            Scheme::CnomaNudf => "CNOMA-NUDF",
            Scheme::NomaNudf => "NOMA-NUDF",
            Scheme::NomaFudf => "NOMA-FUDF",
        }
    }

    pub fn order(self) -> DecodingOrder {
        match self {
            Scheme::CnomaFudf | Scheme::NomaFudf => DecodingOrder::Fudf,
            Scheme::CnomaNudf | Scheme::NomaNudf => DecodingOrder::Nudf,
        }
    }

    pub fn is_cooperative(self) -> bool {
        matches!(self, Scheme::CnomaFudf | Scheme::CnomaNudf)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scheme '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PnMaxDb,
    PfMaxDb,
    LambdaSiDb,
    LambdaNfDb,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::PnMaxDb => "pn_max_db",
            SweepParam::PfMaxDb => "pf_max_db",
            SweepParam::LambdaSiDb => "lambda_si_db",
            SweepParam::LambdaNfDb => "lambda_nf_db",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_trials() -> u32 {
    DEFAULT_TRIALS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

/// One Monte-Carlo sweep over a single parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default)]
    pub name: String,
    pub param: SweepParam,
    pub values_db: Vec<f64>,
    #[serde(default)]
    pub distribution: ChannelDistribution,
    /// Near-user budget when it is not the swept parameter.
    pub pn_max_db: f64,
    /// Far-user budget when it is not the swept parameter.
    pub pf_max_db: f64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub sca: ScaConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.values_db.is_empty() {
            return bad("no sweep values");
        }
        if self.values_db.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if self.trials < 1 {
            return bad("trials must be at least 1");
        }
        if self.schemes.is_empty() {
            return bad("no schemes selected");
        }
        if !self.distribution.is_finite()
            || !self.pn_max_db.is_finite()
            || !self.pf_max_db.is_finite()
        {
            return bad("channel means and budgets must be finite");
        }
        self.sca
            .validate()
            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))
    }

    /// Channel law and budgets at sweep point `i`.
    pub fn point(&self, i: usize) -> (ChannelDistribution, PowerBudgets) {
        let x = self.values_db[i];
        let mut dist = self.distribution;
        let (mut pn, mut pf) = (self.pn_max_db, self.pf_max_db);
        match self.param {
            SweepParam::PnMaxDb => pn = x,
            SweepParam::PfMaxDb => pf = x,
            SweepParam::LambdaSiDb => dist.mean_gain_si_db = x,
            SweepParam::LambdaNfDb => dist.mean_gain_nf_db = x,
        }
        (dist, PowerBudgets::from_db(pn, pf))
    }
}

fn db_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

/// The four panels: far-user budget fixed high while the near-user budget
/// varies; near-user budget fixed low while the far-user budget varies; and
/// the self-interference and cooperative-link strengths at moderate budgets.
pub fn preset_sweeps() -> Vec<SweepSpec> {
    let base = |name: &str, param, values_db, pn_max_db, pf_max_db| SweepSpec {
        name: name.to_string(),
        param,
        values_db,
        distribution: ChannelDistribution::REFERENCE,
        pn_max_db,
        pf_max_db,
        trials: DEFAULT_TRIALS,
        master_seed: DEFAULT_SEED,
        schemes: Scheme::ALL.to_vec(),
        sca: ScaConfig::default(),
    };
    vec![
        base(
            "fig2a",
            SweepParam::PnMaxDb,
            db_range(0.0, 30.0, 5.0),
            0.0,
            25.0,
        ),
        base(
            "fig2b",
            SweepParam::PfMaxDb,
            db_range(0.0, 30.0, 5.0),
            5.0,
            0.0,
        ),
        base(
            "fig2c",
            SweepParam::LambdaSiDb,
            db_range(-10.0, 15.0, 5.0),
            15.0,
            15.0,
        ),
        base(
            "fig2d",
            SweepParam::LambdaNfDb,
            db_range(0.0, 20.0, 4.0),
            15.0,
            15.0,
        ),
    ]
}

pub fn preset(name: &str) -> Result<SweepSpec, ExperimentError> {
    let all = preset_sweeps();
    let valid: Vec<String> = all.iter().map(|s| s.name.clone()).collect();
    all.into_iter()
        .find(|s| s.name == name)
        .ok_or(ExperimentError::UnknownPreset {
            name: name.to_string(),
            valid,
        })
}

/// How a trial's number was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Converged,
    MaxIters,
    /// A later subproblem failed; the best earlier iterate was kept.
    SubproblemFailure,
    /// The first subproblem failed; the rate is recorded as zero.
    NoSolution,
    /// Closed-form baseline (bisection).
    Exact,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Converged => "converged",
            TrialStatus::MaxIters => "max_iters",
            TrialStatus::SubproblemFailure => "subproblem_failure",
            TrialStatus::NoSolution => "no_solution",
            TrialStatus::Exact => "exact",
        }
    }

    pub fn is_solved(self) -> bool {
        self != TrialStatus::NoSolution
    }
}

impl From<Termination> for TrialStatus {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Converged => TrialStatus::Converged,
            Termination::MaxIters => TrialStatus::MaxIters,
            Termination::SubproblemFailure => TrialStatus::SubproblemFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_param: SweepParam,
    pub sweep_value_db: f64,
    pub point: u32,
    pub trial: u32,
    pub scheme: Scheme,
    pub min_rate_nats: f64,
    pub min_rate_bits: f64,
    pub iterations: usize,
    pub status: TrialStatus,
    /// Zero unless timing was requested.
    pub wall_ms: f64,
}

/// Options that do not change any computed number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Record wall-clock solve times (makes output run-dependent).
    pub timing: bool,
}

/// Solves one scheme on one channel draw: `(min_rate_nats, iterations, status)`.
pub fn solve_scheme(
    scheme: Scheme,
    g: &ChannelGains,
    bud: &PowerBudgets,
    sca: &ScaConfig,
) -> (f64, usize, TrialStatus) {
    if scheme.is_cooperative() {
        match sca_solve(g, bud, scheme.order(), sca) {
            Ok(out) => (out.min_rate, out.iterations, out.termination.into()),
            Err(_) => (0.0, 0, TrialStatus::NoSolution),
        }
    } else {
        let r = baseline_maxmin(g, bud, scheme.order());
        (r.min_rate, r.resolution, TrialStatus::Exact)
    }
}

/// Runs every scheme in `spec` on trial `trial` of sweep point `point`.
pub fn run_trial(spec: &SweepSpec, point: usize, trial: u32, timing: bool) -> Vec<TrialRecord> {
    let (dist, bud) = spec.point(point);
    let g = sample_gains(&dist, spec.master_seed, point as u32, trial);
    spec.schemes
        .iter()
        .map(|&scheme| {
            let start = timing.then(Instant::now);
            let (nats, iterations, status) = solve_scheme(scheme, &g, &bud, &spec.sca);
            TrialRecord {
                sweep_param: spec.param,
                sweep_value_db: spec.values_db[point],
                point: point as u32,
                trial,
                scheme,
                min_rate_nats: nats,
                min_rate_bits: nats / std::f64::consts::LN_2,
                iterations,
                status,
                wall_ms: start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
            }
        })
        .collect()
}

/// Mean and spread of one scheme at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_param: SweepParam,
    pub sweep_value_db: f64,
    pub scheme: Scheme,
    pub mean_bits: f64,
    pub stderr_bits: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95_bits: f64,
    pub n: usize,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn row(&self, point_value_db: f64, scheme: Scheme) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value_db == point_value_db && r.scheme == scheme)
    }

    /// Rows whose solved share is below [`SUCCESS_THRESHOLD`].
    pub fn failing_rows(&self) -> Vec<&AggregateRow> {
        self.rows
            .iter()
            .filter(|r| (r.solved as f64) < SUCCESS_THRESHOLD * r.n as f64)
            .collect()
    }
}

/// Sample mean, standard error and 95% half-width.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    (mean, se, 1.96 * se)
}

pub fn aggregate(spec: &SweepSpec, records: &[TrialRecord]) -> SweepResult {
    let mut rows = Vec::new();
    for (point, &value) in spec.values_db.iter().enumerate() {
        for &scheme in &spec.schemes {
            let hits: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.point as usize == point && r.scheme == scheme)
                .collect();
            let bits: Vec<f64> = hits.iter().map(|r| r.min_rate_bits).collect();
            let (mean_bits, stderr_bits, ci95_bits) = mean_stderr(&bits);
            rows.push(AggregateRow {
                sweep_param: spec.param,
                sweep_value_db: value,
                scheme,
                mean_bits,
                stderr_bits,
                ci95_bits,
                n: hits.len(),
                solved: hits.iter().filter(|r| r.status.is_solved()).count(),
            });
        }
    }
    SweepResult { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<TrialRecord>,
    pub result: SweepResult,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))
}

pub fn run_sweep(spec: &SweepSpec, opts: RunOptions) -> Result<SweepOutput, ExperimentError> {
    spec.validate()?;
    let jobs: Vec<(usize, u32)> = (0..spec.values_db.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let records: Vec<TrialRecord> = pool(opts.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| run_trial(spec, p, t, opts.timing))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let result = aggregate(spec, &records);
    Ok(SweepOutput { records, result })
}

pub const RAW_HEADER: &str =
    "sweep_param,sweep_value_db,trial,scheme,min_rate_nats,min_rate_bits,iterations,termination,wall_ms";
pub const AGGREGATE_HEADER: &str =
    "sweep_param,sweep_value_db,scheme,mean_bits,stderr_bits,ci95_bits,n";

pub fn write_raw_csv<W: Write>(mut w: W, records: &[TrialRecord]) -> io::Result<()> {
    writeln!(w, "{RAW_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.sweep_param,
            r.sweep_value_db,
            r.trial,
            r.scheme,
            r.min_rate_nats,
            r.min_rate_bits,
            r.iterations,
            r.status.as_str(),
            r.wall_ms
        )?;
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(mut w: W, result: &SweepResult) -> io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for r in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.sweep_param, r.sweep_value_db, r.scheme, r.mean_bits, r.stderr_bits, r.ci95_bits, r.n
        )?;
    }
    Ok(())
}

/// Settings of the SCA-versus-grid comparison batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    pub instances: u32,
    pub budget_db: f64,
    pub distribution: ChannelDistribution,
    pub master_seed: u64,
    pub resolution: usize,
    pub depth: usize,
    pub sca: ScaConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            budget_db: 20.0,
            distribution: ChannelDistribution::REFERENCE,
            master_seed: DEFAULT_SEED,
            resolution: crate::oracle::DEFAULT_RESOLUTION,
            depth: crate::oracle::DEFAULT_DEPTH,
            sca: ScaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub instance: u32,
    pub order: DecodingOrder,
    pub sca_min_rate: f64,
    pub oracle_min_rate: f64,
    /// `None` when the first subproblem failed.
    pub termination: Option<Termination>,
    pub reported_zeta: f64,
    pub feasible: bool,
    pub max_trace_drop: f64,
}

impl ValidationCase {
    /// SCA value over grid value, 1 when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.oracle_min_rate > 0.0 {
            self.sca_min_rate / self.oracle_min_rate
        } else if self.sca_min_rate > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    pub fn relative_gap(&self) -> f64 {
        if self.oracle_min_rate > 0.0 {
            (self.oracle_min_rate - self.sca_min_rate) / self.oracle_min_rate
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub cases: Vec<ValidationCase>,
    pub wall_seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl ValidationReport {
    /// Share of cases with SCA at least 90% of the grid value.
    pub fn share_within_90(&self) -> f64 {
        let ok = self.cases.iter().filter(|c| c.ratio() >= 0.9).count();
        ok as f64 / self.cases.len() as f64
    }

    pub fn median_relative_gap(&self) -> f64 {
        median(
            self.cases
                .iter()
                .map(ValidationCase::relative_gap)
                .collect(),
        )
    }

    pub fn converged_share(&self) -> f64 {
        let ok = self
            .cases
            .iter()
            .filter(|c| c.termination == Some(Termination::Converged))
            .count();
        ok as f64 / self.cases.len() as f64
    }

    /// Converged runs whose exact min-rate falls short of the reported level.
    pub fn infeasible_converged(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| c.termination == Some(Termination::Converged) && !c.feasible)
            .count()
    }

    pub fn worst_trace_drop(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_trace_drop)
            .fold(0.0, f64::max)
    }

    /// Cases where the SCA beats the grid by more than `slack` nats.
    pub fn above_oracle(&self, slack: f64) -> usize {
        self.cases
            .iter()
            .filter(|c| c.sca_min_rate > c.oracle_min_rate + slack)
            .count()
    }
}

/// Runs SCA and the grid oracle on the same random instances, both orders.
pub fn run_validation(cfg: &ValidationConfig) -> ValidationReport {
    let start = Instant::now();
    let bud = PowerBudgets::from_db(cfg.budget_db, cfg.budget_db);
    let mut cases = Vec::new();
    for instance in 0..cfg.instances {
        let g = sample_gains(&cfg.distribution, cfg.master_seed, 0, instance);
        for order in DecodingOrder::ALL {
            let oracle = grid_maxmin(&g, &bud, order, cfg.resolution, cfg.depth);
            let case = match sca_solve(&g, &bud, order, &cfg.sca) {
                Ok(out) => ValidationCase {
                    instance,
                    order,
                    sca_min_rate: out.min_rate,
                    oracle_min_rate: oracle.min_rate,
                    termination: Some(out.termination),
                    reported_zeta: out.zeta,
                    feasible: out.feasibility.pass,
                    max_trace_drop: out.max_trace_drop(),
                },
                Err(_) => ValidationCase {
                    instance,
                    order,
                    sca_min_rate: 0.0,
                    oracle_min_rate: oracle.min_rate,
                    termination: None,
                    reported_zeta: 0.0,
                    feasible: false,
                    max_trace_drop: 0.0,
                },
            };
            cases.push(case);
        }
    }
    ValidationReport {
        cases,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(schemes: Vec<Scheme>, trials: u32) -> SweepSpec {
        SweepSpec {
            trials,
            schemes,
            values_db: vec![10.0],
            ..preset("fig2a").unwrap()
        }
    }

    #[test]
    fn single_record() {
        let out = run_sweep(&tiny(vec![Scheme::NomaNudf], 1), RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.result.rows.len(), 1);
        assert_eq!(out.result.rows[0].n, 1);
    }

    #[test]
    fn trial_runs_every_scheme_on_one_draw() {
        let spec = tiny(Scheme::ALL.to_vec(), 1);
        let recs = run_trial(&spec, 0, 7, false);
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| r.trial == 7 && r.point == 0));
        assert_eq!(recs, run_trial(&spec, 0, 7, false));
        assert!(recs
            .iter()
            .all(|r| r.min_rate_nats >= 0.0 && r.wall_ms == 0.0));
    }

    #[test]
    fn presets() {
        let names: Vec<String> = preset_sweeps().into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["fig2a", "fig2b", "fig2c", "fig2d"]);
        assert_eq!(preset("fig2a").unwrap().param, SweepParam::PnMaxDb);
        assert_eq!(preset("fig2b").unwrap().param, SweepParam::PfMaxDb);
        assert_eq!(preset("fig2c").unwrap().param, SweepParam::LambdaSiDb);
        assert_eq!(preset("fig2d").unwrap().param, SweepParam::LambdaNfDb);
        assert_eq!(
            preset("fig2a").unwrap().values_db,
            [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        );
        assert_eq!(preset("fig2c").unwrap().values_db.len(), 6);
        assert_eq!(
            preset("fig2d").unwrap().values_db,
            [0.0, 4.0, 8.0, 12.0, 16.0, 20.0]
        );
        for s in preset_sweeps() {
            assert_eq!(s.trials, 1000);
            s.validate().unwrap();
        }
        let err = preset("fig3").unwrap_err().to_string();
        assert!(err.contains("fig2a") && err.contains("fig2d"), "{err}");
    }

    #[test]
    fn sweep_point_applies_parameter() {
        let s = preset("fig2c").unwrap();
        let (dist, bud) = s.point(0);
        assert_eq!(dist.mean_gain_si_db, -10.0);
        assert_eq!(dist.mean_gain_n_db, 12.0);
        assert!((bud.p_n_max - 10f64.powf(1.5)).abs() < 1e-9);
        let s = preset("fig2b").unwrap();
        let (_, bud) = s.point(6);
        assert!((bud.p_f_max - 1000.0).abs() < 1e-9);
        assert!((bud.p_n_max - 10f64.powf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let spec = SweepSpec {
            values_db: vec![0.0, 20.0],
            ..tiny(Scheme::ALL.to_vec(), 6)
        };
        let run = |w| {
            let out = run_sweep(
                &spec,
                RunOptions {
                    workers: w,
                    timing: false,
                },
            )
            .unwrap();
            let mut raw = Vec::new();
            write_raw_csv(&mut raw, &out.records).unwrap();
            let mut agg = Vec::new();
            write_aggregate_csv(&mut agg, &out.result).unwrap();
            (raw, agg)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn csv_layout() {
        let out = run_sweep(
            &tiny(vec![Scheme::NomaFudf, Scheme::CnomaFudf], 2),
            RunOptions::default(),
        )
        .unwrap();
        let mut raw = Vec::new();
        write_raw_csv(&mut raw, &out.records).unwrap();
        let raw = String::from_utf8(raw).unwrap();
        let lines: Vec<&str> = raw.lines().collect();
        assert_eq!(lines[0], RAW_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("pn_max_db,10,0,NOMA-FUDF,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 9));
        let mut agg = Vec::new();
        write_aggregate_csv(&mut agg, &out.result).unwrap();
        let agg = String::from_utf8(agg).unwrap();
        assert_eq!(agg.lines().next().unwrap(), AGGREGATE_HEADER);
        assert_eq!(agg.lines().count(), 3);
        assert!(!raw.contains('\r'));
    }

    #[test]
    fn mean_and_interval() {
        let (m, se, ci) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((se - sd / 2.0).abs() < 1e-12);
        assert!((ci - 1.96 * se).abs() < 1e-12);
        assert_eq!(mean_stderr(&[3.0]), (3.0, 0.0, 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut s = tiny(Scheme::ALL.to_vec(), 1);
        s.values_db.clear();
        assert!(s.validate().is_err());
        let mut s = tiny(Scheme::ALL.to_vec(), 0);
        assert!(s.validate().is_err());
        s.trials = 1;
        s.values_db = vec![f64::NAN];
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_from_json_fills_defaults() {
        let s: SweepSpec = serde_json::from_str(
            r#"{"param":"lambda_nf_db","values_db":[0,10],"pn_max_db":15,"pf_max_db":15}"#,
        )
        .unwrap();
        assert_eq!(s.trials, DEFAULT_TRIALS);
        assert_eq!(s.schemes, Scheme::ALL);
        assert_eq!(s.distribution, ChannelDistribution::REFERENCE);
    }
}
