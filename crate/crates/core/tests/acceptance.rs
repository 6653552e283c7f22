//! Acceptance run: one PASS/FAIL line per criterion, failing the target if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use cityeq::grid::distance;
use cityeq::presets::{
    line_grid, square_grid, telework_params, test1_firms, test1_params, test2_firms, test3_firms,
    TEST1_THETAS, TEST2_BS, TEST3_BS,
};
use cityeq::selfcheck::{
    ces_demand_oracle, demand_oracle, envelope, gibbs_gradient, gumbel_monte_carlo, quadrature_refinement,
};
use cityeq::telework::{TeleEconomy, TeleEquilibrium, TeleFirmSpec};
use cityeq::zero_noise::{zero_noise_limit_study, LimitStudyOptions};
use cityeq::{
    coupling_diagnostics, ChoiceOption, Economy, EquilibriumResult, FixedPointConfig, SolverConfig,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(parts: &[(bool, String)]) -> Verdict {
    Verdict {
        passed: parts.iter().all(|p| p.0),
        detail: parts
            .iter()
            .map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "[x] " }))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

fn rel_spread(v: &[f64]) -> f64 {
    spread(v) / v.iter().cloned().fold(f64::MAX, f64::min)
}

fn test1_sweep() -> Vec<(f64, Economy, EquilibriumResult)> {
    let grid = line_grid(401).unwrap();
    let mut warm: Option<Vec<f64>> = None;
    TEST1_THETAS
        .iter()
        .map(|&theta| {
            let eco = Economy::new(grid.clone(), test1_firms(), test1_params(theta)).unwrap();
            let mut cfg = SolverConfig::default();
            cfg.initial_wages = warm.clone();
            let r = eco.solve(&cfg).unwrap();
            warm = Some(r.wages.clone());
            (theta, eco, r)
        })
        .collect()
}

fn tele_sweep(bs: &[f64], firms: fn(f64) -> Vec<TeleFirmSpec>, square: bool) -> Vec<(f64, TeleEquilibrium)> {
    let grid = if square { square_grid(101).unwrap() } else { line_grid(401).unwrap() };
    let mut warm: Option<Vec<f64>> = None;
    bs.iter()
        .map(|&b| {
            let eco = TeleEconomy::new(grid.clone(), firms(b), telework_params()).unwrap();
            let mut cfg = SolverConfig::default();
            cfg.initial_wages = warm.as_ref().map(|w| {
                if w.len() == eco.n_unknowns() {
                    w.clone()
                } else {
                    w.iter().flat_map(|&x| [x, 12.0]).collect()
                }
            });
            let eq = eco.solve(&cfg).unwrap();
            warm = Some(eq.result.wages.clone());
            (b, eq)
        })
        .collect()
}

fn criterion1() -> Verdict {
    let start = Instant::now();
    let eco = Economy::new(line_grid(401).unwrap(), test1_firms(), test1_params(0.0)).unwrap();
    let r = eco.solve(&SolverConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (w, l) = (&r.wages, &r.labor_supply[1..]);
    verdict(&[
        (r.converged, "converged".into()),
        (w[2] < w[0] && w[0] < w[1], format!("w3 < w1 < w2: {w:.6?}")),
        (l[2] > l[0] && l[0] > l[1], format!("l3 > l1 > l2: {l:.6?}")),
        (r.residual_norm <= 1e-10, format!("residual {:.2e} <= 1e-10", r.residual_norm)),
        (secs <= 60.0, format!("{secs:.2} s <= 60 s")),
    ])
}

fn criterion2(sweep: &[(f64, Economy, EquilibriumResult)]) -> Verdict {
    let r = &sweep.iter().find(|s| s.0 == 0.99).unwrap().2;
    let (dw, dl) = (rel_spread(&r.wages), rel_spread(&r.labor_supply[1..]));
    verdict(&[
        (dw <= 0.01, format!("wage spread {:.3}% <= 1%", 100.0 * dw)),
        (dl <= 0.01, format!("mass spread {:.3}% <= 1%", 100.0 * dl)),
    ])
}

fn criterion3(sweep: &[(f64, Economy, EquilibriumResult)]) -> Verdict {
    let r = &sweep[0].2;
    let dev = r.density.values().iter().fold(0.0f64, |m, mu| m.max((mu - 1.0 / 20.0).abs()));
    verdict(&[(dev <= 1e-10, format!("max |mu - 1/|X|| = {dev:.2e} <= 1e-10"))])
}

fn criterion4(sweep: &[(f64, TeleEquilibrium)]) -> Verdict {
    let mut parts = Vec::new();
    let active: Vec<_> = sweep.iter().filter(|(b, _)| *b >= 0.2).collect();
    let worst = active
        .iter()
        .map(|(b, eq)| (*b, spread(&(0..3).map(|i| eq.remote_wage(i).unwrap()).collect::<Vec<_>>())))
        .fold((0.0, 0.0f64), |m, x| if x.1 > m.1 { x } else { m });
    parts.push((worst.1 <= 1e-3, format!("remote wage spread {:.2e} at B = {} <= 1e-3", worst.1, worst.0)));
    let ordered = active
        .iter()
        .all(|(_, eq)| (0..3).all(|i| eq.onsite_wage(i) > eq.remote_wage(i).unwrap()));
    parts.push((ordered, "on-site above remote wage for every firm and B".into()));
    let last = &sweep.last().unwrap().1;
    let dw = rel_spread(&(0..3).map(|i| last.onsite_wage(i)).collect::<Vec<_>>());
    let dl = rel_spread(&(0..3).map(|i| last.workforce(i)).collect::<Vec<_>>());
    parts.push((dw <= 0.01, format!("B = 1 on-site wage spread {:.3}% <= 1%", 100.0 * dw)));
    parts.push((dl <= 0.01, format!("B = 1 workforce spread {:.3}% <= 1%", 100.0 * dl)));
    verdict(&parts)
}

fn criterion5() -> Verdict {
    let grid = line_grid(401).unwrap();
    let base = Economy::new(grid.clone(), test1_firms(), test1_params(0.0)).unwrap();
    let theta0 = base.uniqueness_threshold().theta0;
    let mut parts = vec![(theta0 > 0.0 && theta0 < 1.0, format!("theta0 = {theta0:.4e} in (0, 1)"))];
    for theta in [0.0, 0.5 * theta0, theta0] {
        let eco = Economy::new(grid.clone(), test1_firms(), test1_params(theta)).unwrap();
        let a = eco.solve(&SolverConfig::default()).unwrap();
        let b = eco.solve_by_fixed_point(&FixedPointConfig::default()).unwrap();
        let gap = a.wages.iter().zip(&b.wages).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        parts.push((gap <= 1e-6, format!("theta {theta:.3e}: gap {gap:.1e} <= 1e-6")));
    }
    verdict(&parts)
}

fn criterion6(test1: &[(f64, Economy, EquilibriumResult)], tele: &[(f64, TeleEquilibrium)]) -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut check = |r: &EquilibriumResult, hard: &[f64], sigma: f64, n: usize| {
        let bound = sigma * ((n + 1) as f64).ln();
        for (rs, r0) in r.revenue.values().iter().zip(hard) {
            worst = worst.max(r0 - rs).max(rs - r0 - bound);
        }
    };
    for (_, eco, r) in test1 {
        check(r, &eco.hard_revenue_field(&r.wages), 0.1, 3);
    }
    for (_, eq) in tele {
        let r = &eq.result;
        let grid = r.revenue.grid();
        let firms = test2_firms(1.0);
        let hard: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|x| {
                r.options
                    .iter()
                    .skip(1)
                    .zip(&r.wages)
                    .map(|(o, w)| match o {
                        ChoiceOption::OnSite(i) => w - 0.5 * distance(x, &firms[*i].location),
                        _ => *w,
                    })
                    .fold(12.0, f64::max)
            })
            .collect();
        check(r, &hard, 0.1, r.wages.len());
    }
    let study = zero_noise_limit_study(line_grid(401).unwrap(), &test1_firms(), &test1_params(0.0), &LimitStudyOptions::default())
        .unwrap();
    worst = worst.max(if study.sandwich_holds(1e-12) { f64::NEG_INFINITY } else { f64::INFINITY });
    let v = &study.verification;
    let margin = v.options.iter().map(|o| o.margin).fold(f64::INFINITY, f64::min);
    verdict(&[
        (worst <= 1e-12, format!("largest sandwich violation {worst:.1e} <= 1e-12")),
        (
            v.passed && study.rows.last().unwrap().sigma == 0.005,
            format!("zero-noise verification at sigma 0.005, smallest margin {margin:.2e}"),
        ),
    ])
}

fn criterion7() -> Verdict {
    let checks = [
        demand_oracle(),
        ces_demand_oracle(),
        envelope(),
        gibbs_gradient(),
        gumbel_monte_carlo(1_000_000, 0),
        quadrature_refinement(false),
    ];
    verdict(
        &checks
            .iter()
            .map(|c| (c.passed, format!("{} {:.2e} ({})", c.name, c.value, c.detail)))
            .collect::<Vec<_>>(),
    )
}

fn criterion8(test1: &[(f64, Economy, EquilibriumResult)], tele: &[(f64, TeleEquilibrium)], square: &[(f64, TeleEquilibrium)]) -> Verdict {
    let (mut rows, mut mass, mut home, mut boxed, mut runs) = (0.0f64, 0.0f64, 0.0f64, true, 0);
    let all = test1.iter().map(|s| &s.2).chain(tele.iter().chain(square).map(|s| &s.1.result));
    for r in all {
        let c = coupling_diagnostics(r).unwrap();
        rows = rows.max(c.row_sum_error);
        mass = mass.max((r.labor_supply.iter().sum::<f64>() - 1.0).abs());
        home = home.max(c.home_consistency_error);
        boxed &= r.in_wage_box();
        runs += 1;
    }
    verdict(&[
        (rows <= 1e-12, format!("{runs} runs: share sums {rows:.1e} <= 1e-12")),
        (mass <= 1e-8, format!("mass sums {mass:.1e} <= 1e-8")),
        (home <= 1e-8, format!("home mass vs 1 + sum pi' {home:.1e} <= 1e-8")),
        (boxed, "wages inside the a priori box".into()),
    ])
}

fn criterion9(square: &[(f64, TeleEquilibrium)], secs: f64) -> Verdict {
    let eq = &square.iter().find(|s| s.0 == 0.66).unwrap().1;
    let r = &eq.result;
    let firms = test3_firms(0.66);
    let (mut remote, mut onsite) = ((0.0, 0usize), (0.0, 0usize));
    for (k, x) in r.revenue.grid().nodes().iter().enumerate() {
        let (mut s_on, mut s_rem) = (0.0, 0.0);
        for (j, o) in r.options.iter().enumerate() {
            match o {
                ChoiceOption::OnSite(_) => s_on += r.shares[j].values()[k],
                ChoiceOption::Remote(_) => s_rem += r.shares[j].values()[k],
                ChoiceOption::Home | ChoiceOption::Firm(_) => {}
            }
        }
        let cost = firms.iter().map(|f| 0.5 * distance(x, &f.location)).fold(f64::INFINITY, f64::min);
        if s_rem > s_on {
            remote = (remote.0 + cost, remote.1 + 1);
        } else if s_on > s_rem {
            onsite = (onsite.0 + cost, onsite.1 + 1);
        }
    }
    let (cr, co) = (remote.0 / remote.1 as f64, onsite.0 / onsite.1 as f64);
    verdict(&[
        (secs <= 1800.0, format!("101x101 sweep over {} values in {secs:.1} s <= 1800 s", square.len())),
        (
            remote.1 > 0 && onsite.1 > 0 && cr > co,
            format!("B = 0.66 mean commuting cost: remote-majority {cr:.3} ({} nodes) > on-site-majority {co:.3} ({} nodes)", remote.1, onsite.1),
        ),
    ])
}

fn main() -> ExitCode {
    // libtest flags (--nocapture, filters) are accepted and ignored
    let test1 = test1_sweep();
    let tele = tele_sweep(&TEST2_BS, test2_firms, false);
    let start = Instant::now();
    let square = tele_sweep(&TEST3_BS, test3_firms, true);
    let square_secs = start.elapsed().as_secs_f64();

    let verdicts = [
        criterion1(),
        criterion2(&test1),
        criterion3(&test1),
        criterion4(&tele),
        criterion5(),
        criterion6(&test1, &tele),
        criterion7(),
        criterion8(&test1, &tele, &square),
        criterion9(&square, square_secs),
    ];
    let mut failed = 0;
    for (k, v) in verdicts.iter().enumerate() {
        println!("criterion {}: {}  {}", k + 1, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
