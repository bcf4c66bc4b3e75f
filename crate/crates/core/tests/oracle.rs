use cnoma_core::oracle::{baseline_grid_maxmin, baseline_maxmin, grid_maxmin};
use cnoma_core::{
    min_rate, sample_gains, ChannelDistribution, ChannelGains, DecodingOrder, PowerBudgets,
};

fn reference() -> (ChannelGains, PowerBudgets) {
    (
        ChannelGains::new(15.85, 2.0, 15.85, 3.16),
        PowerBudgets::new(100.0, 100.0),
    )
}

// Frozen outputs of the default grid; a change here means the search changed.
#[test]
fn reference_instance_regression() {
    let (g, b) = reference();
    let fudf = grid_maxmin(&g, &b, DecodingOrder::Fudf, 101, 2);
    assert!(
        (fudf.min_rate - 4.473_376_430_617_71).abs() < 1e-12,
        "{}",
        fudf.min_rate
    );
    assert!((fudf.best.alpha_n - 0.05472).abs() < 1e-12);
    assert_eq!(fudf.best.beta_f, 1.0);
    let nudf = grid_maxmin(&g, &b, DecodingOrder::Nudf, 101, 2);
    assert!(
        (nudf.min_rate - 1.984_662_449_220_95).abs() < 1e-12,
        "{}",
        nudf.min_rate
    );
}

#[test]
fn reported_value_is_attained_by_reported_point() {
    let (g, b) = reference();
    for order in DecodingOrder::ALL {
        let r = grid_maxmin(&g, &b, order, 41, 1);
        assert_eq!(r.min_rate, min_rate(&r.best, &b, &g, order));
        assert!(r.best.alpha_n + r.best.alpha_f <= 1.0 + 1e-12);
    }
}

#[test]
fn baseline_bisection_agrees_with_fine_grid() {
    let dist = ChannelDistribution::REFERENCE;
    let b = PowerBudgets::from_db(15.0, 15.0);
    for trial in 0..20 {
        let g = sample_gains(&dist, 3, 0, trial);
        for order in DecodingOrder::ALL {
            let exact = baseline_maxmin(&g, &b, order).min_rate;
            let grid = baseline_grid_maxmin(&g, &b, order, 401, 2).min_rate;
            assert!(
                grid <= exact + 1e-9,
                "trial {trial} {order}: {grid} > {exact}"
            );
            assert!(
                exact - grid <= 1e-3,
                "trial {trial} {order}: {exact} vs {grid}"
            );
        }
    }
}

#[test]
fn fudf_grid_never_cuts_far_power() {
    let dist = ChannelDistribution::REFERENCE;
    let b = PowerBudgets::from_db(20.0, 20.0);
    for trial in 0..20 {
        let g = sample_gains(&dist, 5, 0, trial);
        assert_eq!(
            grid_maxmin(&g, &b, DecodingOrder::Fudf, 31, 1).best.beta_f,
            1.0
        );
    }
}
