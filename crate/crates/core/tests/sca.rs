use cnoma_core::oracle::grid_maxmin;
use cnoma_core::sca::verify_feasibility;
use cnoma_core::{
    sample_gains, sca_solve, ChannelDistribution, ChannelGains, DecodingOrder, PowerBudgets,
    ScaConfig, Termination,
};

#[test]
fn symmetric_instance_reaches_grid_value() {
    let g = ChannelGains::new(15.85, 2.0, 15.85, 0.0);
    let b = PowerBudgets::new(100.0, 100.0);
    for order in DecodingOrder::ALL {
        let out = sca_solve(&g, &b, order, &ScaConfig::default()).unwrap();
        let grid = grid_maxmin(&g, &b, order, 101, 2).min_rate;
        assert_eq!(out.termination, Termination::Converged);
        assert!(
            (out.min_rate - grid).abs() <= 0.02 * grid,
            "{order}: {} vs {grid}",
            out.min_rate
        );
    }
}

#[test]
fn reported_allocation_verifies() {
    let dist = ChannelDistribution::REFERENCE;
    let b = PowerBudgets::from_db(15.0, 15.0);
    for trial in 0..30 {
        let g = sample_gains(&dist, 9, 0, trial);
        for order in DecodingOrder::ALL {
            let out = sca_solve(&g, &b, order, &ScaConfig::default()).unwrap();
            let again = verify_feasibility(&out.allocation, &b, &g, order, out.zeta);
            assert_eq!(again, out.feasibility);
            assert!(again.pass, "trial {trial} {order}: {again:?}");
            assert!(out.max_trace_drop() <= 1e-6);
            assert!(out.iterations <= ScaConfig::default().max_iters);
        }
    }
}

#[test]
fn tighter_iteration_cap_is_respected() {
    let g = ChannelGains::new(15.85, 2.0, 15.85, 3.16);
    let b = PowerBudgets::new(100.0, 100.0);
    let cfg = ScaConfig {
        max_iters: 2,
        ..ScaConfig::default()
    };
    let out = sca_solve(&g, &b, DecodingOrder::Fudf, &cfg).unwrap();
    assert_eq!(out.iterations, 2);
    assert_eq!(out.termination, Termination::MaxIters);
}

// Far-user-first decoding should win on typical draws; paired over seeds.
#[test]
fn fudf_usually_beats_nudf() {
    let dist = ChannelDistribution::REFERENCE;
    let b = PowerBudgets::from_db(15.0, 15.0);
    let cfg = ScaConfig::default();
    let mut wins = 0;
    let seeds = 500;
    for seed in 0..seeds {
        let g = sample_gains(&dist, seed, 0, 0);
        let f = sca_solve(&g, &b, DecodingOrder::Fudf, &cfg)
            .unwrap()
            .min_rate;
        let n = sca_solve(&g, &b, DecodingOrder::Nudf, &cfg)
            .unwrap()
            .min_rate;
        if f >= n - 1e-6 {
            wins += 1;
        }
    }
    assert!(2 * wins > seeds, "fudf won {wins} of {seeds}");
}
