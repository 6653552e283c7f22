//! Quick oracle suite run by `cityeq check`.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gumbel};
use serde::Serialize;

use crate::economy::{choice_shares, revenue_softmax, CobbDouglas, FirmSpec, ModelParams};
use crate::equilibrium::{Economy, FixedPointConfig, SolverConfig};
use crate::error::Result;
use crate::grid::CityGrid;
use crate::presets;
use crate::telework::{Ces2, TeleEconomy, TeleFirmSpec};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Default)]
pub struct SelfCheckOptions {
    /// Gumbel draws per Monte Carlo check.
    pub monte_carlo_draws: Option<usize>,
    /// Perturbs one quadrature weight; the refinement check must then fail.
    pub tamper_quadrature: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// The measured quantity (an error, a ratio, a number of standard errors).
    pub value: f64,
    /// Acceptance threshold for `value`; see `detail` for its sense.
    pub limit: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

fn at_most(name: &'static str, value: f64, limit: f64, what: &str) -> CheckOutcome {
    CheckOutcome {
        name,
        value,
        limit,
        passed: value <= limit,
        detail: format!("{what} <= {limit:e}"),
    }
}

fn errored(name: &'static str, e: crate::Error) -> CheckOutcome {
    CheckOutcome {
        name,
        value: f64::NAN,
        limit: f64::NAN,
        passed: false,
        detail: format!("error: {e}"),
    }
}

pub fn self_check(opts: &SelfCheckOptions) -> SelfCheckReport {
    let checks = vec![
        quadrature_refinement(opts.tamper_quadrature),
        demand_oracle(),
        ces_demand_oracle(),
        envelope(),
        gibbs_gradient(),
        gumbel_monte_carlo(opts.monte_carlo_draws.unwrap_or(100_000), opts.seed),
        cross_method().unwrap_or_else(|e| errored("cross_method", e)),
        telework_reduction().unwrap_or_else(|e| errored("telework_reduction", e)),
        sandwich_scan(opts.seed),
    ];
    SelfCheckReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Error ratio of the trapezoid rule under halving of the spacing, in 1D and 2D.
pub fn quadrature_refinement(tamper: bool) -> CheckOutcome {
    // exp(0.7 x) cos(1 + 0.3 y) on [0, 2]^d
    let ex = ((0.7f64 * 2.0).exp() - 1.0) / 0.7;
    let ey = ((1.0f64 + 0.6).sin() - 1.0f64.sin()) / 0.3;
    let err = |n: usize, dim: usize| {
        let mut g = if dim == 1 {
            CityGrid::interval(0.0, 2.0, n).expect("grid")
        } else {
            CityGrid::rectangle((0.0, 2.0), (0.0, 2.0), n).expect("grid")
        };
        if tamper {
            g.weights_mut_for_testing()[1] *= 1.01;
        }
        let (v, exact): (Vec<f64>, f64) = if dim == 1 {
            (g.nodes().iter().map(|p| (0.7 * p[0]).exp()).collect(), ex)
        } else {
            (g.nodes().iter().map(|p| (0.7 * p[0]).exp() * (1.0 + 0.3 * p[1]).cos()).collect(), ex * ey)
        };
        (g.integrate(&v).expect("finite") - exact).abs()
    };
    let ratios: Vec<f64> = [1, 2]
        .iter()
        .flat_map(|&d| [(11, 21), (21, 41)].map(|(a, b)| err(a, d) / err(b, d)))
        .collect();
    let worst = ratios.iter().cloned().fold(0.0f64, |m, r| m.max((r - 4.0).abs()));
    CheckOutcome {
        name: "quadrature_refinement",
        value: worst,
        limit: 0.5,
        passed: ratios.iter().all(|r| (3.5..=4.5).contains(r)),
        detail: format!("error ratios under halving {ratios:.4?}, each in [3.5, 4.5]"),
    }
}

/// Maximiser of a concave `g` on `[lo, hi]` by a log-spaced scan and golden section.
fn scan_max(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 20_000;
    let at = |k: usize| lo * (hi / lo).powf(k as f64 / n as f64);
    let k = (0..=n).max_by(|a, b| g(at(*a)).total_cmp(&g(at(*b)))).expect("nonempty");
    let (mut a, mut b) = (at(k.saturating_sub(1)), at((k + 1).min(n)));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-14 * b {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

pub fn demand_oracle() -> CheckOutcome {
    let tech = CobbDouglas { productivity: presets::PRODUCTIVITY, beta: presets::BETA };
    let worst = [8.0, 12.0, 15.7, 25.0]
        .iter()
        .map(|&w| {
            let l = tech.labor_demand(w).expect("positive wage");
            let ls = scan_max(|l| tech.output(l) - w * l, 1e-8, 1e4);
            ((ls - l) / l).abs()
        })
        .fold(0.0, f64::max);
    at_most("demand_oracle", worst, 1e-4, "relative gap between first-order and searched demand")
}

/// Maximiser of `g` over `(0, 1e3]^2`: a 400 x 400 log-spaced scan, then
/// compass search with shrinking relative steps.
fn search_2d(g: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let (lo, hi, n) = (1e-9f64, 1e3f64, 400);
    let at = |k: usize| lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
    let mut best = (at(0), at(0), f64::NEG_INFINITY);
    for a in 0..n {
        for b in 0..n {
            let v = g(at(a), at(b));
            if v > best.2 {
                best = (at(a), at(b), v);
            }
        }
    }
    let (mut l, mut s, mut v) = best;
    let mut step = 0.1;
    while step > 1e-13 {
        let mut moved = false;
        for (dl, ds) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            let (nl, ns) = (l * (1.0 + dl * step), s * (1.0 + ds * step));
            let nv = g(nl, ns);
            if nv > v {
                (l, s, v) = (nl, ns, nv);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (l, s)
}

pub fn ces_demand_oracle() -> CheckOutcome {
    let mut worst = 0.0f64;
    for (b, w1, w2) in [(0.5, 12.0, 12.0), (0.2, 16.0, 11.0), (1.0, 16.7, 16.6)] {
        let t = Ces2 { productivity: presets::PRODUCTIVITY, remote_productivity: b, alpha: presets::CES_ALPHA, beta: presets::BETA };
        let (l, s) = t.demands(w1, w2).expect("positive wages");
        let (ls, ss) = search_2d(|l, s| t.output(l, s) - w1 * l - w2 * s);
        worst = worst.max(((ls - l) / l).abs()).max(((ss - s) / s).abs());
    }
    at_most("ces_demand_oracle", worst, 1e-4, "relative gap between closed-form and searched CES demands")
}

/// `pi'(w) = -L(w)` and `grad pi~ = -(l, s)` against central differences.
pub fn envelope() -> CheckOutcome {
    let cd = CobbDouglas { productivity: presets::PRODUCTIVITY, beta: presets::BETA };
    let mut worst = 0.0f64;
    for w in [9.0, 12.0, 15.0, 20.0] {
        let h = 1e-5 * w;
        let d = (cd.profit(w + h).unwrap() - cd.profit(w - h).unwrap()) / (2.0 * h);
        let l = cd.labor_demand(w).unwrap();
        worst = worst.max(((d + l) / l).abs());
    }
    let t = presets::telework_tech(0.6);
    for (w1, w2) in [(12.0, 12.0), (16.0, 10.0)] {
        let (l, s) = t.demands(w1, w2).unwrap();
        let (h1, h2) = (1e-5 * w1, 1e-5 * w2);
        let d1 = (t.profit(w1 + h1, w2).unwrap() - t.profit(w1 - h1, w2).unwrap()) / (2.0 * h1);
        let d2 = (t.profit(w1, w2 + h2).unwrap() - t.profit(w1, w2 - h2).unwrap()) / (2.0 * h2);
        worst = worst.max(((d1 + l) / l).abs()).max(((d2 + s) / s).abs());
    }
    at_most("envelope", worst, 1e-4, "relative gap between profit derivatives and minus demands")
}

/// Gibbs shares against central differences of the smoothed maximum.
pub fn gibbs_gradient() -> CheckOutcome {
    let mut worst = 0.0f64;
    for sigma in [1.0, 0.1, 0.02] {
        let v = [12.0, 11.9, 12.05, 11.5];
        let s = choice_shares(&v, sigma).unwrap();
        for i in 0..v.len() {
            let h = 1e-6 * sigma;
            let (mut vp, mut vm) = (v, v);
            vp[i] += h;
            vm[i] -= h;
            let d = (revenue_softmax(&vp, sigma).unwrap() - revenue_softmax(&vm, sigma).unwrap()) / (2.0 * h);
            worst = worst.max((d - s[i]).abs());
        }
    }
    at_most("gibbs_gradient", worst, 1e-6, "gap between shares and the revenue gradient")
}

/// Empirical maximum of Gumbel-perturbed values and argmax frequencies
/// against `R_sigma + sigma * gamma` and the shares, in standard errors.
pub fn gumbel_monte_carlo(draws: usize, seed: u64) -> CheckOutcome {
    let (z, detail) = gumbel_z_scores(&[1.0, 0.7, 1.2, 0.2], 0.3, draws, seed);
    CheckOutcome {
        name: "gumbel_monte_carlo",
        value: z,
        limit: 4.0,
        passed: z <= 4.0,
        detail,
    }
}

/// Largest |z| over the mean maximum and every share; with a description.
pub fn gumbel_z_scores(values: &[f64], sigma: f64, draws: usize, seed: u64) -> (f64, String) {
    let mut rng = StdRng::seed_from_u64(seed);
    let g = Gumbel::new(0.0, sigma).expect("positive scale");
    let mut counts = vec![0usize; values.len()];
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (i, v) in values.iter().enumerate() {
            let u = v + g.sample(&mut rng);
            if u > best {
                best = u;
                arg = i;
            }
        }
        counts[arg] += 1;
        sum += best;
        sum2 += best * best;
    }
    let m = draws as f64;
    let mean = sum / m;
    let se = ((sum2 / m - mean * mean) / m).sqrt();
    let expected = revenue_softmax(values, sigma).unwrap() + sigma * EULER_GAMMA;
    let mut z = ((mean - expected) / se).abs();
    let shares = choice_shares(values, sigma).unwrap();
    for (c, p) in counts.iter().zip(&shares) {
        let se = (p * (1.0 - p) / m).sqrt();
        z = z.max(((*c as f64 / m - p) / se).abs());
    }
    (z, format!("{draws} draws; largest deviation {z:.2} standard errors, at most 4"))
}

/// Hybrid solver against the fixed-point path on a coarse Test 1 at `theta = theta0`.
pub fn cross_method() -> Result<CheckOutcome> {
    let grid = presets::line_grid(101)?;
    let probe = Economy::new(grid.clone(), presets::test1_firms(), presets::test1_params(0.0))?;
    let theta0 = probe.uniqueness_threshold().theta0;
    let mut worst = 0.0f64;
    for theta in [0.0, theta0] {
        let eco = Economy::new(grid.clone(), presets::test1_firms(), presets::test1_params(theta))?;
        let a = eco.solve(&SolverConfig::default())?;
        let b = eco.solve_by_fixed_point(&FixedPointConfig::default())?;
        worst = a.wages.iter().zip(&b.wages).fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    let mut out = at_most("cross_method", worst, 1e-6, "largest wage gap between the two solvers");
    out.detail = format!("{}; theta in {{0, theta0 = {theta0:.4e}}}", out.detail);
    Ok(out)
}

/// The teleworking model with remote options dropped must coincide with the
/// base model for the on-site technology.
pub fn telework_reduction() -> Result<CheckOutcome> {
    let grid = presets::line_grid(201)?;
    let params = presets::telework_params();
    let tele_firms: Vec<TeleFirmSpec> = presets::test2_firms(0.0);
    let base_firms: Vec<FirmSpec> = tele_firms
        .iter()
        .map(|f| FirmSpec::new(f.location, f.tech.onsite_only()))
        .collect();
    let tele = TeleEconomy::new(grid.clone(), tele_firms, params)?.solve(&SolverConfig::default())?;
    let base = Economy::new(grid, base_firms, params)?.solve(&SolverConfig::default())?;
    let gap = tele
        .result
        .wages
        .iter()
        .zip(&base.wages)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(at_most("telework_reduction", gap, 1e-8, "wage gap between the reduced and base models"))
}

/// `R_0 <= R_sigma <= R_0 + sigma log(N + 1)` at random wages and nodes.
pub fn sandwich_scan(seed: u64) -> CheckOutcome {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5a5a);
    let grid = Arc::new(CityGrid::rectangle((-10.0, 10.0), (-10.0, 10.0), 21).expect("grid"));
    let firms = presets::test3_firms(0.5);
    let mut worst = f64::NEG_INFINITY;
    for sigma in [1.0, 0.1, 0.01] {
        let params = ModelParams { sigma, ..presets::telework_params() };
        for _ in 0..20 {
            let w: Vec<f64> = (0..firms.len()).map(|_| rng.gen_range(5.0..25.0)).collect();
            let bound = sigma * ((firms.len() + 1) as f64).ln();
            for x in grid.nodes() {
                let mut v = vec![params.w0];
                v.extend(firms.iter().zip(&w).map(|(f, wi)| wi - params.commute_scale * crate::grid::distance(x, &f.location)));
                let r0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let rs = revenue_softmax(&v, sigma).expect("finite values");
                // positive when either side of the sandwich is violated
                worst = worst.max(r0 - rs).max(rs - r0 - bound);
            }
        }
    }
    CheckOutcome {
        name: "sandwich_scan",
        value: worst,
        limit: 1e-12,
        passed: worst <= 1e-12,
        detail: "largest violation of R0 <= R_sigma <= R0 + sigma log(N+1)".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampered_weights_break_refinement() {
        assert!(quadrature_refinement(false).passed);
        let bad = quadrature_refinement(true);
        assert!(!bad.passed, "{bad:?}");
    }

    #[test]
    fn oracles_pass() {
        for c in [demand_oracle(), ces_demand_oracle(), envelope(), gibbs_gradient(), sandwich_scan(3)] {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn small_monte_carlo_is_consistent() {
        let c = gumbel_monte_carlo(20_000, 11);
        assert!(c.passed, "{c:?}");
    }
}
