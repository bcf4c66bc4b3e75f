//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run a subset by naming it, e.g. `cargo test --test acceptance -- A4 A7`.

use std::process::ExitCode;
use std::time::Instant;

use cnoma_core::conic::{
    exp_cone_rows, minimal_chain, solve_socp, ConicProgram, SolveStatus, SolverSettings,
};
use cnoma_core::experiments::{
    mean_stderr, run_validation, SweepOutput, SweepParam, TrialRecord, ValidationConfig,
};
use cnoma_core::oracle::{baseline_grid_maxmin, grid_maxmin};
use cnoma_core::{
    baseline_maxmin, preset, run_sweep, sample_gains, ChannelDistribution, ChannelGains,
    DecodingOrder, PowerBudgets, RunOptions, Scheme, SweepSpec,
};

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sweep(spec: &SweepSpec, workers: usize) -> SweepOutput {
    run_sweep(
        spec,
        RunOptions {
            workers,
            timing: false,
        },
    )
    .expect("preset sweeps are valid")
}

fn validation() -> cnoma_core::experiments::ValidationReport {
    run_validation(&ValidationConfig::default())
}

fn a1(report: &cnoma_core::experiments::ValidationReport) -> Outcome {
    let share = report.share_within_90();
    let gap = report.median_relative_gap();
    let secs = report.wall_seconds;
    outcome(
        share >= 0.9 && gap <= 0.05 && secs <= 120.0,
        format!(
            "{} runs: {:.1}% reach 0.9 x grid (need 90%), median gap {:.3}% (max 5%), {:.1} s (max 120 s)",
            report.cases.len(),
            100.0 * share,
            100.0 * gap,
            secs
        ),
    )
}

fn a2(report: &cnoma_core::experiments::ValidationReport) -> Outcome {
    let converged = report
        .cases
        .iter()
        .filter(|c| c.termination == Some(cnoma_core::Termination::Converged))
        .count();
    let bad = report.infeasible_converged();
    outcome(
        bad == 0,
        format!("{bad} of {converged} converged runs claim more than their exact min-rate + 1e-3"),
    )
}

fn a3(report: &cnoma_core::experiments::ValidationReport) -> Outcome {
    let drop = report.worst_trace_drop();
    let conv = report.converged_share();
    outcome(
        drop <= 1e-6 && conv >= 0.95,
        format!(
            "worst zeta drop {drop:.1e} (max 1e-6), {:.1}% converged within 30 iterations (need 95%)",
            100.0 * conv
        ),
    )
}

fn conic_minimal_top(zeta: f64, q: u32) -> Option<f64> {
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
    let r = solve_socp(&p, &settings).ok()?;
    (r.status == SolveStatus::Optimal).then(|| r.x[s.top().index()])
}

fn a4() -> Outcome {
    let mut pass = true;
    let mut worst = 0.0f64;
    for zeta in [0.0, 0.5, 1.0, 2.0, 3.0] {
        let top = *minimal_chain(zeta, 4).last().unwrap();
        let rel = (top - zeta.exp()).abs() / zeta.exp();
        worst = worst.max(rel);
        pass &= rel <= 1e-3;
        // The conic solver must find the same minimal top.
        match conic_minimal_top(zeta, 4) {
            Some(solved) => pass &= (solved - top).abs() <= 1e-6 * top,
            None => pass = false,
        }
    }
    let k4 = minimal_chain(0.0, 4)[3];
    pass &= (k4 - 1.0).abs() <= 1e-9;
    // Accuracy over the whole operating range, as a percentage.
    let accuracy = (0..=300)
        .map(|i| {
            let z = i as f64 / 100.0;
            *minimal_chain(z, 4).last().unwrap() / z.exp()
        })
        .fold(f64::INFINITY, f64::min);
    outcome(
        pass,
        format!(
            "q=4: worst relative error {worst:.2e} at the five points (max 1e-3), kappa4(0) = {k4:.15}, \
             measured accuracy {:.4}% over zeta in [0, 3]",
            100.0 * accuracy
        ),
    )
}

/// Rows of `records` for one scheme at one point, in trial order.
fn rates(records: &[TrialRecord], point: u32, scheme: Scheme) -> Vec<f64> {
    let mut rows: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.point == point && r.scheme == scheme)
        .collect();
    rows.sort_by_key(|r| r.trial);
    rows.iter().map(|r| r.min_rate_bits).collect()
}

fn a5() -> Outcome {
    let spec = SweepSpec {
        name: "paired15".into(),
        param: SweepParam::PnMaxDb,
        values_db: vec![15.0],
        pn_max_db: 15.0,
        pf_max_db: 15.0,
        ..preset("fig2a").unwrap()
    };
    let out = sweep(&spec, 0);
    let fudf = rates(&out.records, 0, Scheme::CnomaFudf);
    let mut pass = true;
    let mut parts = Vec::new();
    for other in [Scheme::CnomaNudf, Scheme::NomaNudf, Scheme::NomaFudf] {
        let diffs: Vec<f64> = fudf
            .iter()
            .zip(rates(&out.records, 0, other))
            .map(|(a, b)| a - b)
            .collect();
        let (mean, _, ci) = mean_stderr(&diffs);
        pass &= mean >= 0.0 && mean - ci >= 0.0;
        parts.push(format!("vs {other} {mean:+.4} +/- {ci:.4}"));
    }
    outcome(
        pass,
        format!(
            "{} paired trials at 15/15 dB, mean difference in bits: {}",
            fudf.len(),
            parts.join(", ")
        ),
    )
}

fn mean_of(out: &SweepOutput, value: f64, scheme: Scheme) -> (f64, f64) {
    let row = out.result.row(value, scheme).expect("scheme was run");
    (row.mean_bits, row.stderr_bits)
}

fn best_baseline(out: &SweepOutput, value: f64) -> f64 {
    mean_of(out, value, Scheme::NomaNudf)
        .0
        .max(mean_of(out, value, Scheme::NomaFudf).0)
}

fn trend_spec(name: &str) -> SweepSpec {
    SweepSpec {
        schemes: vec![Scheme::CnomaFudf, Scheme::NomaNudf, Scheme::NomaFudf],
        ..preset(name).unwrap()
    }
}

fn a6() -> Outcome {
    let b = trend_spec("fig2b");
    let ob = sweep(&b, 0);
    let gap = |v: f64| mean_of(&ob, v, Scheme::CnomaFudf).0 - best_baseline(&ob, v);
    let (lo, hi) = (b.values_db[0], *b.values_db.last().unwrap());
    let i = gap(lo) > gap(hi);

    let c = trend_spec("fig2c");
    let oc = sweep(&c, 0);
    let top = *c.values_db.last().unwrap();
    let coop = mean_of(&oc, top, Scheme::CnomaFudf).0;
    let noma = best_baseline(&oc, top);
    let ii = coop < noma;

    let d = trend_spec("fig2d");
    let od = sweep(&d, 0);
    let curve: Vec<(f64, f64)> = d
        .values_db
        .iter()
        .map(|&v| mean_of(&od, v, Scheme::CnomaFudf))
        .collect();
    let iii = curve
        .windows(2)
        .all(|w| w[1].0 >= w[0].0 - w[0].1.max(w[1].1));
    let shown: Vec<String> = curve.iter().map(|(m, _)| format!("{m:.3}")).collect();
    outcome(
        i && ii && iii,
        format!(
            "(i) gap {:.3} at {lo} dB vs {:.3} at {hi} dB [{}]; (ii) at {top} dB {coop:.3} vs NOMA {noma:.3} [{}]; \
             (iii) CNOMA-FUDF over nf gain {} [{}]",
            gap(lo),
            gap(hi),
            ok(i),
            ok(ii),
            shown.join(" "),
            ok(iii)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn a7() -> Outcome {
    let dist = ChannelDistribution::REFERENCE;
    let bud = PowerBudgets::from_db(20.0, 20.0);
    let mut worst = 0.0f64;
    let mut beta_ok = true;
    for trial in 0..100 {
        let g = sample_gains(&dist, 7, 0, trial);
        for order in DecodingOrder::ALL {
            let exact = baseline_maxmin(&g, &bud, order).min_rate;
            let grid = baseline_grid_maxmin(&g, &bud, order, 401, 2).min_rate;
            worst = worst.max((exact - grid).abs());
        }
        beta_ok &= grid_maxmin(&g, &bud, DecodingOrder::Fudf, 101, 2)
            .best
            .beta_f
            == 1.0;
    }
    // gamma = 1 on both links, budgets 3: the near user's SINR 3 / (t + 1)
    // equals the far user's t at t^2 + t - 3 = 0.
    let hand = baseline_maxmin(
        &ChannelGains::new(1.0, 1.0, 1.0, 0.0),
        &PowerBudgets::new(3.0, 3.0),
        DecodingOrder::Nudf,
    )
    .min_rate;
    let closed = ((1.0 + 13f64.sqrt()) / 2.0).ln();
    let hand_ok = (hand - closed).abs() <= 1e-4;
    outcome(
        worst <= 1e-3 && beta_ok && hand_ok,
        format!(
            "bisection vs 401x401 zoomed grid worst |diff| {worst:.2e} nats (max 1e-3) [{}]; \
             FUDF grid beta_f = 1 on all 100 [{}]; hand example {hand:.6} vs ln((1+sqrt 13)/2) = {closed:.6} [{}]",
            ok(worst <= 1e-3),
            ok(beta_ok),
            ok(hand_ok)
        ),
    )
}

fn csv_bytes(out: &SweepOutput) -> (Vec<u8>, Vec<u8>) {
    let mut raw = Vec::new();
    let mut agg = Vec::new();
    cnoma_core::experiments::write_raw_csv(&mut raw, &out.records).unwrap();
    cnoma_core::experiments::write_aggregate_csv(&mut agg, &out.result).unwrap();
    (raw, agg)
}

fn a8() -> Outcome {
    let spec = preset("fig2a").unwrap();
    let one = csv_bytes(&sweep(&spec, 1));
    let eight = csv_bytes(&sweep(&spec, 8));
    let same = one == eight;
    outcome(
        same,
        format!(
            "fig2a, {} trials, seed {}: raw {} bytes, aggregate {} bytes, identical for 1 and 8 workers: {}",
            spec.trials,
            spec.master_seed,
            one.0.len(),
            one.1.len(),
            same
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_ascii_uppercase())
        .collect();
    let run = |name: &str| wanted.is_empty() || wanted.iter().any(|w| w == name);
    let mut all_pass = true;
    let mut report_line = |name: &str, start: Instant, o: Outcome| {
        all_pass &= o.pass;
        println!(
            "{name} {} ({:.0} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };

    if run("A1") || run("A2") || run("A3") {
        let start = Instant::now();
        let report = validation();
        for (name, check) in [("A1", a1 as fn(&_) -> Outcome), ("A2", a2), ("A3", a3)] {
            if run(name) {
                report_line(name, start, check(&report));
            }
        }
    }
    let rest: [(&str, Check); 5] = [("A4", a4), ("A5", a5), ("A6", a6), ("A7", a7), ("A8", a8)];
    for (name, check) in rest {
        if run(name) {
            let start = Instant::now();
            let o = check();
            report_line(name, start, o);
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
