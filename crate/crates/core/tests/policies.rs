use stockbound_core::demand::GaussianModel;
use stockbound_core::oracle::invert_joint_tail_monte_carlo;
use stockbound_core::policy::{compare_policies, delta_grid, order_point, ss_proposed, ss_rigorous, Allocation};
use stockbound_core::LeadTime;

fn lead(l: u32) -> LeadTime {
    LeadTime::new(l).unwrap()
}

#[test]
fn proposed_dominates_rigorous_on_the_default_grid() {
    let grid = delta_grid(1e-3, 0.5, 40).unwrap();
    for rho in [-0.5, 0.0, 0.5, 0.9] {
        let m = GaussianModel::bivariate(1.0, 1.0, rho).unwrap();
        for r in compare_policies(&m, lead(10), &grid).unwrap() {
            assert!(r.ss_pro >= r.ss_rig, "rho {rho} delta {}", r.delta);
            assert!(r.p_pro <= r.delta + 1e-9);
            assert!(r.certified_pro <= r.delta * (1.0 + 1e-9));
            let (dx, dy) = r.split.unwrap();
            assert!((dx * dy - r.delta).abs() < 1e-12);
            assert!(r.ss_pro >= 0.0 && r.ss_rig >= 0.0);
            assert_eq!(r.ss_pre < 0.0, r.delta > 0.25);
        }
    }
}

#[test]
fn previous_policy_understocks_only_under_positive_correlation() {
    let grid = [0.01, 0.05];
    let pos = GaussianModel::bivariate(1.0, 1.0, 0.9).unwrap();
    assert!(compare_policies(&pos, lead(10), &grid)
        .unwrap()
        .iter()
        .all(|r| r.p_pre > r.delta));
    let ind = GaussianModel::bivariate(1.0, 1.0, 0.0).unwrap();
    for r in compare_policies(&ind, lead(10), &grid).unwrap() {
        assert!((r.p_pre - r.delta).abs() < 1e-9);
    }
}

#[test]
fn allocation_paths_agree_without_correlation() {
    let m = GaussianModel::bivariate(2.0, 2.0, 0.0).unwrap();
    let d: f64 = 0.02;
    let split = Allocation::Explicit {
        delta_x: d.sqrt(),
        delta_y: d.sqrt(),
    };
    let a = ss_proposed(&m, lead(7), d, split).unwrap();
    let b = ss_proposed(&m, lead(7), d, Allocation::Sequential).unwrap();
    let c = ss_proposed(&m, lead(7), d, Allocation::Symmetric).unwrap();
    for i in 0..2 {
        assert!((a.safety_stock[i] - b.safety_stock[i]).abs() < 1e-10);
        assert!((a.safety_stock[i] - c.safety_stock[i]).abs() < 1e-10);
    }
}

#[test]
fn three_commodities_use_simulation_for_the_rigorous_stock() {
    let cov = vec![vec![1.0, 0.6, 0.3], vec![0.6, 1.0, 0.5], vec![0.3, 0.5, 1.0]];
    let m = GaussianModel::from_rows(&[2.0, 3.0, 4.0], &cov).unwrap();
    assert!(ss_rigorous(&m, lead(5), 0.05).is_err());
    let rig = invert_joint_tail_monte_carlo(&m, 0.05, lead(5), 400_000, 2).unwrap();
    let pro = ss_proposed(&m, lead(5), 0.05, Allocation::EqualMargin).unwrap();
    assert!(!rig.saturated && (rig.probability - 0.05).abs() < 1e-3);
    assert!(pro.safety_stock.iter().all(|&s| s >= rig.safety_stock));
    assert!((pro.certified - 0.05).abs() < 1e-9);
    let op = order_point(&m, lead(5), &pro.safety_stock).unwrap();
    assert!((op[2] - 20.0 - pro.safety_stock[2]).abs() < 1e-12);
}
