//! `cnoma`: solve, cross-check and sweep the cooperative NOMA max-min problem.

mod scenario;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cnoma_core::channel::ChannelGains;
use cnoma_core::experiments::{
    preset, run_sweep, run_validation, write_aggregate_csv, write_raw_csv, RunOptions, SweepSpec,
    ValidationConfig, ValidationReport, DEFAULT_SEED,
};
use cnoma_core::oracle::{baseline_maxmin, grid_maxmin, DEFAULT_DEPTH, DEFAULT_RESOLUTION};
use cnoma_core::rates::{Allocation, BaselinePowers, DecodingOrder};
use cnoma_core::sca::{
    build_subproblem, initialize_state, sca_solve, verify_feasibility, FeasibilityReport, ScaError,
    Termination, TraceEntry,
};
use scenario::Scenario;
use serde::Serialize;

const SEED_ENV: &str = "CNOMA_SEED";

/// Max-min fair power allocation for two-user uplink cooperative NOMA.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run successive convex approximation on one scenario.
    Solve {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Include the per-iteration trace in the report.
        #[arg(long)]
        trace: bool,
        /// Write the first convex subproblem, one constraint per line.
        #[arg(long, value_name = "PATH")]
        dump_program: Option<PathBuf>,
    },
    /// Brute-force grid search on one scenario.
    Oracle {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Points per axis of each grid level.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Number of zoomed refinements after the first grid.
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        /// Solve conventional NOMA with power control instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Recompute the rate margins of the allocation and `zeta` in a scenario.
    Verify {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Monte-Carlo sweep from a preset name (fig2a..fig2d) or a JSON spec file.
    Sweep {
        target: String,
        /// Per-trial CSV output [default: <name>_raw.csv].
        #[arg(long, value_name = "PATH")]
        raw: Option<PathBuf>,
        /// Per-point CSV output [default: <name>_aggregate.csv].
        #[arg(long, value_name = "PATH")]
        aggregate: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of trials per point.
        #[arg(long)]
        trials: Option<u32>,
        /// Record solve wall time in the raw CSV (makes output nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Compare SCA with the grid oracle on a batch of random instances.
    Validate {
        #[arg(long, default_value_t = 100)]
        instances: u32,
        /// Both power budgets, in dB.
        #[arg(long, default_value_t = 20.0)]
        budget_db: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Decoding order, overriding the scenario.
    #[arg(long)]
    order: Option<DecodingOrder>,
    /// Seed for random scenarios without a `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Print a machine-readable report.
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    /// Bad input: exit 2.
    Input(String),
    /// No feasible iterate: exit 3.
    NoIterate(String),
    /// Sweep or validation thresholds missed: exit 4.
    Threshold,
    /// Claimed rate not met: exit 5.
    Unverified,
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Input(_) => 2,
            Failure::NoIterate(_) => 3,
            Failure::Threshold => 4,
            Failure::Unverified => 5,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Input(format!("{SEED_ENV} must be a nonnegative integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then scenario, then environment, then the built-in default.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag.or(file) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(DEFAULT_SEED),
    })
}

struct Loaded {
    scenario: Scenario,
    gains: ChannelGains,
    order: DecodingOrder,
}

fn load(args: &ScenarioArgs) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.scenario.display())))?;
    let scenario = Scenario::parse(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.scenario.display())))?;
    let file_seed = match &scenario.instance {
        scenario::Instance::Random { seed, .. } => *seed,
        scenario::Instance::Explicit(_) => None,
    };
    let seed = resolve_seed(args.seed, file_seed)?;
    let gains = scenario.gains(seed);
    let order = args.order.or(scenario.order).unwrap_or(DecodingOrder::Fudf);
    Ok(Loaded {
        scenario,
        gains,
        order,
    })
}

#[derive(Serialize)]
struct Margins {
    near: f64,
    sum: f64,
    relay: f64,
    worst: f64,
}

impl From<&FeasibilityReport> for Margins {
    fn from(r: &FeasibilityReport) -> Self {
        Self {
            near: r.margin_n,
            sum: r.margin_sum,
            relay: r.margin_relay,
            worst: r.worst_margin(),
        }
    }
}

/// Fields shared by every report; together with `allocation` and `zeta`
/// they form a valid explicit scenario.
#[derive(Serialize)]
struct InstanceReport {
    #[serde(flatten)]
    gains: ChannelGains,
    pn_max_db: f64,
    pf_max_db: f64,
    order: DecodingOrder,
}

impl InstanceReport {
    fn new(l: &Loaded) -> Self {
        Self {
            gains: l.gains,
            pn_max_db: l.scenario.pn_max_db,
            pf_max_db: l.scenario.pf_max_db,
            order: l.order,
        }
    }
}

#[derive(Serialize)]
struct SolveReport {
    #[serde(flatten)]
    instance: InstanceReport,
    allocation: Allocation,
    zeta: f64,
    zeta_bits: f64,
    min_rate: f64,
    min_rate_bits: f64,
    termination: Termination,
    iterations: usize,
    trace_len: usize,
    margins: Margins,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<TraceEntry>>,
}

fn bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn print_instance(l: &Loaded) {
    let g = &l.gains;
    println!("order        {}", l.order);
    println!(
        "gains        gamma_n={} gamma_f={} gamma_nf={} gamma_si={}",
        g.gamma_n, g.gamma_f, g.gamma_nf, g.gamma_si
    );
    println!(
        "budgets      pn_max={} dB pf_max={} dB",
        l.scenario.pn_max_db, l.scenario.pf_max_db
    );
}

fn print_allocation(a: &Allocation) {
    println!(
        "allocation   alpha_n={:.6} alpha_f={:.6} beta_f={:.6}",
        a.alpha_n, a.alpha_f, a.beta_f
    );
}

fn print_margins(m: &Margins, pass: bool) {
    println!(
        "margins      near={:.3e} sum={:.3e} relay={:.3e} ({})",
        m.near,
        m.sum,
        m.relay,
        if pass { "feasible" } else { "VIOLATED" }
    );
}

fn cmd_solve(args: &ScenarioArgs, trace: bool, dump_program: Option<&Path>) -> Result<(), Failure> {
    let l = load(args)?;
    let bud = l.scenario.budgets();
    let cfg = &l.scenario.sca;
    if let Some(path) = dump_program {
        let state = initialize_state(&l.gains, &bud, l.order, cfg);
        let sub = build_subproblem(&l.gains, &bud, l.order, &state, cfg);
        fs::write(path, sub.program.to_string())?;
    }
    let out = match sca_solve(&l.gains, &bud, l.order, cfg) {
        Ok(out) => out,
        Err(e @ ScaError::SubproblemFailure(_)) => return Err(Failure::NoIterate(e.to_string())),
        Err(e) => return Err(Failure::Input(e.to_string())),
    };
    let report = SolveReport {
        instance: InstanceReport::new(&l),
        allocation: out.allocation,
        zeta: out.zeta,
        zeta_bits: bits(out.zeta),
        min_rate: out.min_rate,
        min_rate_bits: bits(out.min_rate),
        termination: out.termination,
        iterations: out.iterations,
        trace_len: out.trace.len(),
        margins: Margins::from(&out.feasibility),
        feasible: out.feasibility.pass,
        trace: trace.then(|| out.trace.clone()),
    };
    if out.termination != Termination::Converged {
        eprintln!(
            "warning: stopped with {} after {} iterations; reporting the best iterate",
            out.termination, out.iterations
        );
    }
    if args.json {
        return print_json(&report);
    }
    print_instance(&l);
    print_allocation(&report.allocation);
    println!(
        "min rate     {:.6} nats ({:.6} bits/s/Hz)",
        report.min_rate, report.min_rate_bits
    );
    println!(
        "zeta         {:.6} nats ({:.6} bits/s/Hz)",
        report.zeta, report.zeta_bits
    );
    println!(
        "termination  {} after {} iterations (trace length {})",
        report.termination, report.iterations, report.trace_len
    );
    print_margins(&report.margins, report.feasible);
    if let Some(entries) = &report.trace {
        println!("iter  zeta          solver_zeta   exact_min     status            ipm");
        for t in entries {
            println!(
                "{:<5} {:<13.9} {:<13.9} {:<13.9} {:<17} {}",
                t.iteration,
                t.zeta,
                t.solver_zeta,
                t.exact_min_rate,
                format!("{:?}", t.status),
                t.ipm_iterations
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport<T: Serialize> {
    #[serde(flatten)]
    instance: InstanceReport,
    scheme: &'static str,
    best: T,
    min_rate: f64,
    min_rate_bits: f64,
    resolution: usize,
    depth: usize,
}

fn cmd_oracle(
    args: &ScenarioArgs,
    resolution: usize,
    depth: usize,
    baseline: bool,
) -> Result<(), Failure> {
    if resolution < 2 {
        return Err(Failure::Input("--resolution must be at least 2".into()));
    }
    let l = load(args)?;
    let bud = l.scenario.budgets();
    if baseline {
        let r = baseline_maxmin(&l.gains, &bud, l.order);
        let report = OracleReport::<BaselinePowers> {
            instance: InstanceReport::new(&l),
            scheme: "noma",
            best: r.best,
            min_rate: r.min_rate,
            min_rate_bits: bits(r.min_rate),
            resolution: r.resolution,
            depth: r.depth,
        };
        if args.json {
            return print_json(&report);
        }
        print_instance(&l);
        println!(
            "powers       p_n={:.6} p_f={:.6} (bisection, {} steps)",
            r.best.p_n, r.best.p_f, r.resolution
        );
        println!(
            "min rate     {:.6} nats ({:.6} bits/s/Hz)",
            r.min_rate, report.min_rate_bits
        );
        return Ok(());
    }
    let r = grid_maxmin(&l.gains, &bud, l.order, resolution, depth);
    let report = OracleReport::<Allocation> {
        instance: InstanceReport::new(&l),
        scheme: "cooperative",
        best: r.best,
        min_rate: r.min_rate,
        min_rate_bits: bits(r.min_rate),
        resolution,
        depth,
    };
    if args.json {
        return print_json(&report);
    }
    print_instance(&l);
    print_allocation(&r.best);
    println!(
        "min rate     {:.6} nats ({:.6} bits/s/Hz), grid {resolution} depth {depth}",
        r.min_rate, report.min_rate_bits
    );
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    #[serde(flatten)]
    instance: InstanceReport,
    allocation: Allocation,
    zeta: f64,
    min_rate: f64,
    budgets_ok: bool,
    margins: Margins,
    feasible: bool,
}

fn cmd_verify(args: &ScenarioArgs) -> Result<(), Failure> {
    let l = load(args)?;
    let missing =
        |k: &str| Failure::Input(format!("{}: missing key `{k}`", args.scenario.display()));
    let allocation = l.scenario.allocation.ok_or_else(|| missing("allocation"))?;
    let zeta = l.scenario.zeta.ok_or_else(|| missing("zeta"))?;
    let bud = l.scenario.budgets();
    let r = verify_feasibility(&allocation, &bud, &l.gains, l.order, zeta);
    let report = VerifyReport {
        instance: InstanceReport::new(&l),
        allocation,
        zeta,
        min_rate: cnoma_core::rates::min_rate(&allocation, &bud, &l.gains, l.order),
        budgets_ok: r.budgets_ok,
        margins: Margins::from(&r),
        feasible: r.pass,
    };
    if args.json {
        print_json(&report)?;
    } else {
        print_instance(&l);
        print_allocation(&allocation);
        println!(
            "zeta         {:.6} nats claimed, {:.6} nats achieved",
            zeta, report.min_rate
        );
        if !r.budgets_ok {
            println!("budgets      VIOLATED");
        }
        print_margins(&report.margins, r.pass);
    }
    if r.pass {
        Ok(())
    } else {
        Err(Failure::Unverified)
    }
}

fn load_spec(target: &str) -> Result<(SweepSpec, bool), Failure> {
    if let Ok(spec) = preset(target) {
        return Ok((spec, false));
    }
    let path = Path::new(target);
    if !path.is_file() {
        // Report the preset error, which lists the valid names.
        let e = preset(target).expect_err("checked above");
        return Err(Failure::Input(format!(
            "{e}, and no spec file at that path"
        )));
    }
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{target}: not valid JSON: {e}")))?;
    let has_seed = value.get("master_seed").is_some();
    let mut spec: SweepSpec =
        serde_json::from_value(value).map_err(|e| Failure::Input(format!("{target}: {e}")))?;
    if spec.name.is_empty() {
        spec.name = path
            .file_stem()
            .map_or("sweep".into(), |s| s.to_string_lossy().into_owned());
    }
    Ok((spec, has_seed))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    target: &str,
    raw: Option<PathBuf>,
    aggregate: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
    trials: Option<u32>,
    timing: bool,
) -> Result<(), Failure> {
    let (mut spec, explicit_seed) = load_spec(target)?;
    if let Some(s) = seed {
        spec.master_seed = s;
    } else if !explicit_seed {
        if let Some(s) = env_seed()? {
            spec.master_seed = s;
        }
    }
    if let Some(t) = trials {
        spec.trials = t;
    }
    let raw = raw.unwrap_or_else(|| PathBuf::from(format!("{}_raw.csv", spec.name)));
    let aggregate =
        aggregate.unwrap_or_else(|| PathBuf::from(format!("{}_aggregate.csv", spec.name)));
    let out = run_sweep(&spec, RunOptions { workers, timing }).map_err(|e| match e {
        cnoma_core::experiments::ExperimentError::Pool(m) => Failure::Io(m),
        other => Failure::Input(other.to_string()),
    })?;
    let mut w = BufWriter::new(File::create(&raw)?);
    write_raw_csv(&mut w, &out.records)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&aggregate)?);
    write_aggregate_csv(&mut w, &out.result)?;
    w.flush()?;
    println!(
        "{}: {} points x {} trials x {} schemes, seed {}",
        spec.name,
        spec.values_db.len(),
        spec.trials,
        spec.schemes.len(),
        spec.master_seed
    );
    println!("wrote {} and {}", raw.display(), aggregate.display());
    let failing = out.result.failing_rows();
    if failing.is_empty() {
        return Ok(());
    }
    eprintln!("points below the required solved share:");
    eprintln!(
        "{:<14} {:>10}  {:<12} {:>7} {:>7}",
        "param", "value_db", "scheme", "solved", "n"
    );
    for r in failing {
        eprintln!(
            "{:<14} {:>10}  {:<12} {:>7} {:>7}",
            r.sweep_param.as_str(),
            r.sweep_value_db,
            r.scheme.as_str(),
            r.solved,
            r.n
        );
    }
    Err(Failure::Threshold)
}

/// Thresholds a validation batch is held to.
const MIN_SHARE_WITHIN_90: f64 = 0.9;
const MAX_MEDIAN_GAP: f64 = 0.05;
const MIN_CONVERGED_SHARE: f64 = 0.95;
const MAX_TRACE_DROP: f64 = 1e-6;

#[derive(Serialize)]
struct ValidationSummary {
    cases: usize,
    share_within_90: f64,
    median_relative_gap: f64,
    converged_share: f64,
    infeasible_converged: usize,
    worst_trace_drop: f64,
    wall_seconds: f64,
    pass: bool,
}

fn summarize(r: &ValidationReport) -> ValidationSummary {
    let mut s = ValidationSummary {
        cases: r.cases.len(),
        share_within_90: r.share_within_90(),
        median_relative_gap: r.median_relative_gap(),
        converged_share: r.converged_share(),
        infeasible_converged: r.infeasible_converged(),
        worst_trace_drop: r.worst_trace_drop(),
        wall_seconds: r.wall_seconds,
        pass: false,
    };
    s.pass = s.share_within_90 >= MIN_SHARE_WITHIN_90
        && s.median_relative_gap <= MAX_MEDIAN_GAP
        && s.converged_share >= MIN_CONVERGED_SHARE
        && s.infeasible_converged == 0
        && s.worst_trace_drop <= MAX_TRACE_DROP;
    s
}

fn cmd_validate(cfg: ValidationConfig, json: bool) -> Result<(), Failure> {
    if cfg.instances == 0 || cfg.resolution < 2 || !cfg.budget_db.is_finite() {
        return Err(Failure::Input(
            "need at least one instance, --resolution >= 2 and a finite budget".into(),
        ));
    }
    let s = summarize(&run_validation(&cfg));
    if json {
        print_json(&s)?;
    } else {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        println!(
            "{} cases at {} dB, seed {}, grid {} depth {}, {:.1} s",
            s.cases, cfg.budget_db, cfg.master_seed, cfg.resolution, cfg.depth, s.wall_seconds
        );
        println!(
            "sca >= 0.9 x oracle   {:6.1}%  (need {:.0}%)  {}",
            100.0 * s.share_within_90,
            100.0 * MIN_SHARE_WITHIN_90,
            mark(s.share_within_90 >= MIN_SHARE_WITHIN_90)
        );
        println!(
            "median relative gap   {:6.2}%  (max {:.0}%)  {}",
            100.0 * s.median_relative_gap,
            100.0 * MAX_MEDIAN_GAP,
            mark(s.median_relative_gap <= MAX_MEDIAN_GAP)
        );
        println!(
            "converged             {:6.1}%  (need {:.0}%)  {}",
            100.0 * s.converged_share,
            100.0 * MIN_CONVERGED_SHARE,
            mark(s.converged_share >= MIN_CONVERGED_SHARE)
        );
        println!(
            "infeasible converged  {:6}            {}",
            s.infeasible_converged,
            mark(s.infeasible_converged == 0)
        );
        println!(
            "worst zeta drop       {:.1e}  (max {:.0e})  {}",
            s.worst_trace_drop,
            MAX_TRACE_DROP,
            mark(s.worst_trace_drop <= MAX_TRACE_DROP)
        );
    }
    if s.pass {
        Ok(())
    } else {
        Err(Failure::Threshold)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve {
            common,
            trace,
            dump_program,
        } => cmd_solve(&common, trace, dump_program.as_deref()),
        Command::Oracle {
            common,
            resolution,
            depth,
            baseline,
        } => cmd_oracle(&common, resolution, depth, baseline),
        Command::Verify { common } => cmd_verify(&common),
        Command::Sweep {
            target,
            raw,
            aggregate,
            workers,
            seed,
            trials,
            timing,
        } => cmd_sweep(&target, raw, aggregate, workers, seed, trials, timing),
        Command::Validate {
            instances,
            budget_db,
            seed,
            resolution,
            depth,
            json,
        } => {
            let cfg = ValidationConfig {
                instances,
                budget_db,
                master_seed: resolve_seed(seed, None)?,
                resolution,
                depth,
                ..ValidationConfig::default()
            };
            cmd_validate(cfg, json)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) | Failure::NoIterate(m) | Failure::Io(m) => {
                    eprintln!("error: {m}")
                }
                Failure::Threshold | Failure::Unverified => {}
            }
            ExitCode::from(f.code())
        }
    }
}
