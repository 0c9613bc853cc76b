use crisp_alloc::analysis::{gamma_grid, trajectory};
use crisp_alloc::core_types::{kappa, to_correlation};
use crisp_alloc::synthetic::{gen_regime, worst_case_mu, RegimeKind, RegimeSpec};

fn argmin(v: &[(f64, f64)]) -> f64 {
    v.iter().cloned().fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a }).0
}

#[test]
fn finite_sweep_optimum_moves_right_with_budget() {
    let kind = RegimeKind::BlockSector { rho_within: 0.985, rho_cross: 0.15 };
    let sigma = gen_regime(&RegimeSpec::new(kind, 100, 42)).unwrap();
    let k = kappa(&to_correlation(&sigma).unwrap()).unwrap();
    let (mu, _) = worst_case_mu(&sigma, 32, 42).unwrap();
    let grid = gamma_grid(11);
    let lo = trajectory(&sigma, &mu, &grid, 200).unwrap();
    let hi = trajectory(&sigma, &mu, &grid, 5000).unwrap();
    let g_lo = argmin(&lo.iter().map(|p| (p.gamma, p.dir_finite_sweep)).collect::<Vec<_>>());
    let g_hi = argmin(&hi.iter().map(|p| (p.gamma, p.dir_finite_sweep)).collect::<Vec<_>>());
    assert!(g_hi > g_lo, "kappa {k}: argmin at p=200 is {g_lo}, at p=5000 is {g_hi}");
}
