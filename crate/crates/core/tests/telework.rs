use cityeq::presets::{line_grid, telework_params, telework_tech, test2_firms, TEST2_BS};
use cityeq::telework::{
    assemble_tele_residual, solve_tele_equilibrium, tele_uniqueness_threshold, TeleEconomy,
    TeleEquilibrium, TeleFirmSpec,
};
use cityeq::{ChoiceOption, Economy, FirmSpec, SolverConfig, WageVector};

fn sweep(bs: &[f64]) -> Vec<(f64, TeleEquilibrium)> {
    let grid = line_grid(401).unwrap();
    let mut warm: Option<Vec<f64>> = None;
    let mut out = Vec::new();
    for &b in bs {
        let eco = TeleEconomy::new(grid.clone(), test2_firms(b), telework_params()).unwrap();
        let mut cfg = SolverConfig::default();
        if let Some(w) = &warm {
            cfg.initial_wages = Some(if w.len() == eco.n_unknowns() {
                w.clone()
            } else {
                w.iter().flat_map(|&x| [x, 12.0]).collect()
            });
        }
        let eq = eco.solve(&cfg).unwrap();
        warm = Some(eq.result.wages.clone());
        out.push((b, eq));
    }
    out
}

fn option_index(eq: &TeleEquilibrium, o: ChoiceOption) -> usize {
    eq.result.options.iter().position(|x| *x == o).unwrap()
}

#[test]
fn remote_share_ratio_is_flat_across_the_city() {
    let grid = line_grid(201).unwrap();
    let eco = TeleEconomy::new(grid, test2_firms(0.5), telework_params()).unwrap();
    let eq = eco.solve(&SolverConfig::default()).unwrap();
    let (a, b) = (option_index(&eq, ChoiceOption::Remote(0)), option_index(&eq, ChoiceOption::Remote(2)));
    let dw = eq.remote_wage(0).unwrap() - eq.remote_wage(2).unwrap();
    let expected = (dw / 0.1).exp();
    for (sa, sb) in eq.result.shares[a].values().iter().zip(eq.result.shares[b].values()) {
        assert!((sa / sb / expected - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_remote_productivity_reduces_to_base_model() {
    let grid = line_grid(201).unwrap();
    let params = telework_params();
    let tele = TeleEconomy::new(grid.clone(), test2_firms(0.0), params).unwrap();
    assert_eq!(tele.n_unknowns(), 3);
    let base_firms: Vec<FirmSpec> = test2_firms(0.0)
        .iter()
        .map(|f| FirmSpec::new(f.location, f.tech.onsite_only()))
        .collect();
    let base = Economy::new(grid, base_firms, params).unwrap();
    for w in [[12.0, 13.0, 14.0], [15.0, 15.0, 15.0], [20.0, 11.0, 16.5]] {
        let gt = tele.assemble_residual(&w).unwrap();
        let gb = base.assemble_residual(&WageVector::new(w.to_vec()).unwrap()).unwrap();
        assert_eq!(gt, gb);
    }
    let a = tele.solve(&SolverConfig::default()).unwrap();
    let b = base.solve(&SolverConfig::default()).unwrap();
    assert_eq!(a.result.wages, b.wages);
    assert_eq!(a.result.density.values(), b.density.values());
    for i in 0..3 {
        assert_eq!(a.remote_wage(i), None);
        assert_eq!(a.remote_mass(i), 0.0);
    }
}

#[test]
fn swapping_symmetric_firms_swaps_residuals() {
    let grid = line_grid(201).unwrap();
    let firms = |b: f64| {
        vec![
            TeleFirmSpec { location: [-5.0, 0.0], tech: telework_tech(b) },
            TeleFirmSpec { location: [5.0, 0.0], tech: telework_tech(b) },
        ]
    };
    let w = [14.0, 12.5, 15.0, 12.0];
    let swapped = [15.0, 12.0, 14.0, 12.5];
    let g = assemble_tele_residual(&w, &firms(0.6), &telework_params(), grid.clone()).unwrap();
    let h = assemble_tele_residual(&swapped, &firms(0.6), &telework_params(), grid).unwrap();
    for (a, b) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
        assert!((g[a] - h[b]).abs() <= 1e-13, "{g:?} vs {h:?}");
    }
}

#[test]
fn strict_solver_refuses_tiny_remote_productivity() {
    let err = solve_tele_equilibrium(&test2_firms(0.0), &telework_params(), line_grid(51).unwrap(), &SolverConfig::default())
        .unwrap_err();
    assert!(err.to_string().contains("below"));
    assert!(tele_uniqueness_threshold(&test2_firms(0.0), &telework_params(), line_grid(51).unwrap()).is_err());
}

#[test]
fn threshold_lies_in_unit_interval() {
    for b in [0.2, 1.0] {
        let r = tele_uniqueness_threshold(&test2_firms(b), &telework_params(), line_grid(101).unwrap()).unwrap();
        assert!(r.theta0 > 0.0 && r.theta0 < 1.0, "{r:?}");
        assert!(r.nu > 0.0);
    }
}

/// Pinned to the Test 2 discussion: commuters earn more than teleworkers, and
/// at B = 1 the workplaces look alike.
#[test]
fn test2_commuters_paid_more_and_b1_workplaces_alike() {
    let runs = sweep(&TEST2_BS);
    for (b, eq) in runs.iter().filter(|(b, _)| *b >= 0.2) {
        for i in 0..3 {
            assert!(eq.onsite_wage(i) > eq.remote_wage(i).unwrap(), "B = {b}, firm {i}");
        }
    }
    let (_, eq) = runs.last().unwrap();
    let pairwise = |v: Vec<f64>| {
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / min
    };
    assert!(pairwise((0..3).map(|i| eq.onsite_wage(i)).collect()) <= 0.01);
    assert!(pairwise((0..3).map(|i| eq.workforce(i)).collect()) <= 0.01);
}

#[test]
fn sweep_accounting_and_remote_monotonicity() {
    let runs = sweep(&TEST2_BS);
    let mut prev = [0.0; 3];
    for (b, eq) in &runs {
        let r = &eq.result;
        assert!(r.residual_norm <= 1e-10, "B = {b}");
        let total = r.home_mass() + (0..3).map(|i| eq.workforce(i)).sum::<f64>();
        assert!((total - 1.0).abs() <= 1e-8);
        for k in 0..r.density.values().len() {
            let s: f64 = r.shares.iter().map(|f| f.values()[k]).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        for i in 0..3 {
            assert!(eq.remote_mass(i) >= prev[i], "B = {b}, firm {i}");
            prev[i] = eq.remote_mass(i);
            assert!((eq.onsite_mass(i) - eq.onsite_demand(i)).abs() <= 1e-10);
            assert!((eq.remote_mass(i) - eq.remote_demand(i)).abs() <= 1e-10);
        }
    }
}
