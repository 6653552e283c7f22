//! Teleworking variant: every firm hires on-site workers (who commute) and
//! remote workers (who do not) through a two-input CES technology.
//!
//! Unknowns are ordered firm by firm, `(w_1^onsite, w_1^remote, ..., w_N^remote)`.
//! When a firm's remote productivity is below [`B_MIN`] its remote option is
//! dropped from the choice set: remote demand is then identically zero while
//! logit supply stays positive, so no interior root exists.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::economy::{CobbDouglas, ModelParams};
use crate::equilibrium::{
    assemble_result, check_locations, cost_rows, finalize, residual_from, solve_in_log_wages,
    ChoiceOption, EquilibriumResult, SolveMethod, SolverConfig, WageBox,
};
use crate::error::{Error, Result};
use crate::grid::{CityGrid, Point};
use crate::market::ChoiceSet;

/// Remote productivity below which remote options are removed.
pub const B_MIN: f64 = 1e-3;

/// `f(l, s) = A^(1-beta) * (l^alpha + B s^alpha)^(beta/alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ces2 {
    pub productivity: f64,
    pub remote_productivity: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn check_wage(w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidWage(w))
    }
}

impl Ces2 {
    pub fn new(productivity: f64, remote_productivity: f64, alpha: f64, beta: f64) -> Result<Self> {
        let t = Ces2 {
            productivity,
            remote_productivity,
            alpha,
            beta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.productivity > 0.0 && self.productivity.is_finite()) {
            return Err(Error::param("A", format!("{} is not > 0", self.productivity)));
        }
        if !(self.remote_productivity >= 0.0 && self.remote_productivity.is_finite()) {
            return Err(Error::param("B", format!("{} is not >= 0", self.remote_productivity)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", format!("{} is not in (0, 1)", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param("beta", format!("{} is not in (0, 1)", self.beta)));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.productivity.powf(1.0 - self.beta)
    }

    pub fn output(&self, onsite: f64, remote: f64) -> f64 {
        let g = onsite.max(0.0).powf(self.alpha)
            + self.remote_productivity * remote.max(0.0).powf(self.alpha);
        self.scale() * g.powf(self.beta / self.alpha)
    }

    /// Technology seen when only on-site labour is used: `A^(1-beta) l^beta`.
    pub fn onsite_only(&self) -> CobbDouglas {
        CobbDouglas {
            productivity: self.productivity,
            beta: self.beta,
        }
    }

    /// Profit-maximising `(on-site, remote)` employment.
    ///
    /// The first-order conditions fix the ratio `s / l = (w2 / (B w1))^(1/(alpha-1))`;
    /// substituting it back leaves a one-dimensional power equation in `l`.
    pub fn demands(&self, w1: f64, w2: f64) -> Result<(f64, f64)> {
        check_wage(w1)?;
        check_wage(w2)?;
        Ok(self.demands_unchecked(w1, w2))
    }

    pub(crate) fn demands_unchecked(&self, w1: f64, w2: f64) -> (f64, f64) {
        let b = self.remote_productivity;
        if b == 0.0 {
            return (self.onsite_only().demand_unchecked(w1), 0.0);
        }
        let (a, beta) = (self.alpha, self.beta);
        let ratio = (w2 / (b * w1)).powf(1.0 / (a - 1.0));
        let bundle = 1.0 + b * ratio.powf(a);
        let l = (self.scale() * beta * bundle.powf((beta - a) / a) / w1).powf(1.0 / (1.0 - beta));
        (l, ratio * l)
    }

    /// `sup f(l, s) - w1 l - w2 s`; by Euler's relation for a technology
    /// homogeneous of degree `beta` this is `(1-beta)/beta * (w1 L1 + w2 L2)`.
    pub fn profit(&self, w1: f64, w2: f64) -> Result<f64> {
        check_wage(w1)?;
        check_wage(w2)?;
        Ok(self.profit_unchecked(w1, w2))
    }

    pub(crate) fn profit_unchecked(&self, w1: f64, w2: f64) -> f64 {
        let (l, s) = self.demands_unchecked(w1, w2);
        (1.0 - self.beta) / self.beta * (w1 * l + w2 * s)
    }

    /// Hessian of the profit function by central differences of the demands
    /// (the profit gradient is minus the demand vector).
    pub fn profit_hessian(&self, w1: f64, w2: f64) -> Result<[[f64; 2]; 2]> {
        check_wage(w1)?;
        check_wage(w2)?;
        let mut h = [[0.0; 2]; 2];
        let w = [w1, w2];
        for j in 0..2 {
            let step = 1e-5 * w[j];
            let mut up = w;
            let mut dn = w;
            up[j] += step;
            dn[j] -= step;
            let lu = self.demands_unchecked(up[0], up[1]);
            let ld = self.demands_unchecked(dn[0], dn[1]);
            h[0][j] = -(lu.0 - ld.0) / (2.0 * step);
            h[1][j] = -(lu.1 - ld.1) / (2.0 * step);
        }
        Ok(h)
    }
}

/// Smallest eigenvalue of a symmetric 2x2 matrix, from its trace and determinant.
pub fn min_eigenvalue_2x2(m: [[f64; 2]; 2]) -> f64 {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = mean + radius;
    // det / hi avoids cancellation in mean - radius
    if hi > 0.0 {
        (a * c - b * b) / hi
    } else {
        mean - radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleFirmSpec {
    pub location: Point,
    pub tech: Ces2,
}

impl TeleFirmSpec {
    pub fn remote_active(&self) -> bool {
        self.tech.remote_productivity >= B_MIN
    }
}

/// Teleworking economy on a fixed grid.
#[derive(Debug, Clone)]
pub struct TeleEconomy {
    grid: Arc<CityGrid>,
    firms: Vec<TeleFirmSpec>,
    params: ModelParams,
    choice: ChoiceSet,
    options: Vec<ChoiceOption>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeleUniquenessReport {
    pub theta0: f64,
    pub alpha0: f64,
    /// Smallest eigenvalue of the profit Hessians over firms and the wage box.
    pub nu: f64,
    pub argmin: [f64; 2],
    pub argmin_firm: usize,
    pub wage_box: WageBox,
}

/// Equilibrium of the teleworking model, keyed by firm.
#[derive(Debug, Clone)]
pub struct TeleEquilibrium {
    pub result: EquilibriumResult,
    firms: usize,
}

impl TeleEquilibrium {
    pub(crate) fn from_result(result: EquilibriumResult, firms: usize) -> Self {
        TeleEquilibrium { result, firms }
    }

    fn index_of(&self, target: ChoiceOption) -> Option<usize> {
        self.result.options.iter().position(|o| *o == target)
    }

    pub fn n_firms(&self) -> usize {
        self.firms
    }

    pub fn onsite_wage(&self, i: usize) -> f64 {
        let j = self.index_of(ChoiceOption::OnSite(i)).expect("on-site option");
        self.result.wages[j - 1]
    }

    /// `None` when the firm's remote option was removed.
    pub fn remote_wage(&self, i: usize) -> Option<f64> {
        self.index_of(ChoiceOption::Remote(i))
            .map(|j| self.result.wages[j - 1])
    }

    pub fn onsite_mass(&self, i: usize) -> f64 {
        let j = self.index_of(ChoiceOption::OnSite(i)).expect("on-site option");
        self.result.labor_supply[j]
    }

    pub fn remote_mass(&self, i: usize) -> f64 {
        self.index_of(ChoiceOption::Remote(i))
            .map_or(0.0, |j| self.result.labor_supply[j])
    }

    pub fn onsite_demand(&self, i: usize) -> f64 {
        let j = self.index_of(ChoiceOption::OnSite(i)).expect("on-site option");
        self.result.demands[j - 1]
    }

    pub fn remote_demand(&self, i: usize) -> f64 {
        self.index_of(ChoiceOption::Remote(i))
            .map_or(0.0, |j| self.result.demands[j - 1])
    }

    pub fn workforce(&self, i: usize) -> f64 {
        self.onsite_mass(i) + self.remote_mass(i)
    }
}

impl TeleEconomy {
    pub fn new(grid: Arc<CityGrid>, firms: Vec<TeleFirmSpec>, params: ModelParams) -> Result<Self> {
        params.validate()?;
        for f in &firms {
            f.tech.validate()?;
        }
        check_locations(&grid, firms.iter().map(|f| f.location))?;
        let cost = params.cost_model();
        let rows = cost_rows(&grid, firms.iter().map(|f| f.location), cost.as_ref());
        let mut options = vec![ChoiceOption::Home];
        let mut costs = Vec::new();
        for (i, (f, row)) in firms.iter().zip(rows).enumerate() {
            options.push(ChoiceOption::OnSite(i));
            costs.push(Some(row));
            if f.remote_active() {
                options.push(ChoiceOption::Remote(i));
                costs.push(None);
            }
        }
        let choice = ChoiceSet {
            grid: grid.clone(),
            costs,
            w0: params.w0,
            sigma: params.sigma,
            alpha: params.alpha(),
        };
        Ok(TeleEconomy {
            grid,
            firms,
            params,
            choice,
            options,
        })
    }

    pub fn firms(&self) -> &[TeleFirmSpec] {
        &self.firms
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<CityGrid> {
        &self.grid
    }

    /// Choice options, home first.
    pub fn options(&self) -> &[ChoiceOption] {
        &self.options
    }

    pub fn n_unknowns(&self) -> usize {
        self.options.len() - 1
    }

    pub fn max_cost(&self) -> f64 {
        self.choice
            .costs
            .iter()
            .flatten()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, c| m.max(*c))
    }

    fn demands(&self, wages: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(wages.len());
        let mut k = 0;
        for f in &self.firms {
            if f.remote_active() {
                let (l, s) = f.tech.demands_unchecked(wages[k], wages[k + 1]);
                out.push(l);
                out.push(s);
                k += 2;
            } else {
                out.push(f.tech.onsite_only().demand_unchecked(wages[k]));
                k += 1;
            }
        }
        out
    }

    /// A priori wage box. With remote options present:
    /// `upper = 2M + sum pi_i(w0, w0) + sigma log(2N+1) + w0`, and `lower` the
    /// smallest wage at which a firm's profit reaches `upper` with the other
    /// wage at `upper`.
    pub fn wage_bounds(&self) -> WageBox {
        let p = &self.params;
        let m = self.n_unknowns();
        let profit_at_home: f64 = self
            .firms
            .iter()
            .map(|f| {
                if f.remote_active() {
                    f.tech.profit_unchecked(p.w0, p.w0)
                } else {
                    f.tech.onsite_only().profit_unchecked(p.w0)
                }
            })
            .sum();
        let upper = 2.0 * self.max_cost() + profit_at_home + p.sigma * ((m + 1) as f64).ln() + p.w0;
        let mut lower = upper;
        for f in &self.firms {
            if f.remote_active() {
                let t = f.tech;
                lower = lower.min(solve_decreasing(|w| t.profit_unchecked(w, upper), upper));
                lower = lower.min(solve_decreasing(|w| t.profit_unchecked(upper, w), upper));
            } else {
                lower = lower.min(f.tech.onsite_only().wage_at_profit(upper));
            }
        }
        WageBox { lower, upper }
    }

    pub fn assemble_residual(&self, wages: &[f64]) -> Result<Vec<f64>> {
        self.params.require_noise()?;
        if wages.len() != self.n_unknowns() {
            return Err(Error::param(
                "wages",
                format!("{} wages for {} unknowns", wages.len(), self.n_unknowns()),
            ));
        }
        if let Some(bad) = wages.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidWage(*bad));
        }
        let state = self.choice.evaluate(wages);
        Ok(residual_from(&state, &self.demands(wages)))
    }

    /// Forward-difference Jacobian of the residual with respect to the wages.
    pub fn residual_jacobian(&self, wages: &[f64]) -> Result<DMatrix<f64>> {
        let g0 = self.assemble_residual(wages)?;
        let n = wages.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut wp = wages.to_vec();
            let h = f64::EPSILON.sqrt() * wp[j].abs().max(1.0);
            wp[j] += h;
            let gp = self.assemble_residual(&wp)?;
            for i in 0..n {
                jac[(i, j)] = (gp[i] - g0[i]) / h;
            }
        }
        Ok(jac)
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<TeleEquilibrium> {
        self.params.require_noise()?;
        config.validate()?;
        let n = self.n_unknowns();
        let w_init = match &config.initial_wages {
            Some(w) if w.len() == n => w.clone(),
            Some(w) => {
                return Err(Error::param(
                    "initial_wages",
                    format!("{} wages for {} unknowns", w.len(), n),
                ))
            }
            None => vec![self.params.w0; n],
        };
        if let Some(bad) = w_init.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidWage(*bad));
        }
        let bounds = self.wage_bounds();
        let (wages, outcome, events) = solve_in_log_wages(&w_init, bounds, config, |w| {
            let state = self.choice.evaluate(w);
            residual_from(&state, &self.demands(w))
        });
        let demands = self.demands(&wages);
        let state = self.choice.evaluate(&wages);
        let result = assemble_result(
            &self.grid,
            self.params.theta,
            self.options.clone(),
            wages,
            demands,
            state,
            bounds,
            SolveMethod::Hybrid,
            outcome.iterations,
            config.residual_tolerance,
            outcome.trace,
            events,
        );
        let firms = self.firms.len();
        finalize(result).map(|result| TeleEquilibrium { result, firms })
    }

    /// `theta0 = alpha0 / (1 + alpha0)` with `alpha0 = w0 nu / (2N)`, `nu` the
    /// smallest eigenvalue of the profit Hessians over the wage box.
    pub fn uniqueness_threshold(&self) -> Result<TeleUniquenessReport> {
        if let Some((i, _)) = self
            .firms
            .iter()
            .enumerate()
            .find(|(_, f)| !f.remote_active())
        {
            return Err(Error::Refused(format!(
                "firm {} has remote productivity below {B_MIN}: profit Hessian is degenerate",
                i + 1
            )));
        }
        let bounds = self.wage_bounds();
        const SCAN: usize = 80;
        let ratio = bounds.upper / bounds.lower;
        let wage_at = |k: usize| bounds.lower * ratio.powf(k as f64 / SCAN as f64);
        let (mut nu, mut arg, mut firm) = (f64::INFINITY, [0.0; 2], 0);
        for (i, f) in self.firms.iter().enumerate() {
            for a in 0..=SCAN {
                for b in 0..=SCAN {
                    let (w1, w2) = (wage_at(a), wage_at(b));
                    let lam = min_eigenvalue_2x2(f.tech.profit_hessian(w1, w2)?);
                    if lam < nu {
                        nu = lam;
                        arg = [w1, w2];
                        firm = i;
                    }
                }
            }
        }
        let n = self.firms.len().max(1);
        let alpha0 = self.params.w0 * nu / (2.0 * n as f64);
        Ok(TeleUniquenessReport {
            theta0: alpha0 / (1.0 + alpha0),
            alpha0,
            nu,
            argmin: arg,
            argmin_firm: firm,
            wage_box: bounds,
        })
    }
}

/// Root of a decreasing function `g(w) = target` on `(0, inf)` by bracketing and bisection.
fn solve_decreasing(g: impl Fn(f64) -> f64, target: f64) -> f64 {
    let mut hi = target;
    let mut lo = target;
    while g(lo) < target && lo > 1e-300 {
        hi = lo;
        lo *= 0.5;
    }
    while g(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    lo
}

/// Strict-contract solve: refuses when some remote productivity is below [`B_MIN`].
pub fn solve_tele_equilibrium(
    firms: &[TeleFirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
    config: &SolverConfig,
) -> Result<TeleEquilibrium> {
    if let Some(f) = firms.iter().find(|f| !f.remote_active()) {
        return Err(Error::Refused(format!(
            "remote productivity {} is below {B_MIN}; no interior equilibrium with remote \
             options exists. Build a TeleEconomy, which drops those options, or raise B",
            f.tech.remote_productivity
        )));
    }
    TeleEconomy::new(grid, firms.to_vec(), *params)?.solve(config)
}

pub fn assemble_tele_residual(
    wages: &[f64],
    firms: &[TeleFirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
) -> Result<Vec<f64>> {
    TeleEconomy::new(grid, firms.to_vec(), *params)?.assemble_residual(wages)
}

pub fn tele_uniqueness_threshold(
    firms: &[TeleFirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
) -> Result<TeleUniquenessReport> {
    TeleEconomy::new(grid, firms.to_vec(), *params)?.uniqueness_threshold()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_tech(b: f64) -> Ces2 {
        Ces2::new(1e4, b, 0.9, 0.7).unwrap()
    }

    /// Two-stage brute force: a 2000 x 2000 log-spaced grid over `[1e-8, l_max]^2`,
    /// then compass search around the best cell.
    fn grid_search(t: &Ces2, w1: f64, w2: f64) -> (f64, f64) {
        let obj = |l: f64, s: f64| t.output(l, s) - w1 * l - w2 * s;
        let l_max = 100.0;
        let (lo, n) = (1e-8f64, 2000);
        let at = |k: usize| lo * (l_max / lo).powf(k as f64 / (n - 1) as f64);
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for a in 0..n {
            let l = at(a);
            for b in 0..n {
                let s = at(b);
                let v = obj(l, s);
                if v > best.2 {
                    best = (l, s, v);
                }
            }
        }
        let (mut l, mut s, mut v) = best;
        let mut step = 0.05;
        while step > 1e-13 {
            let mut improved = false;
            for (dl, ds) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                let (nl, ns) = (l * (1.0 + dl * step), s * (1.0 + ds * step));
                let nv = obj(nl, ns);
                if nv > v {
                    (l, s, v) = (nl, ns, nv);
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (l, s)
    }

    #[test]
    fn demands_match_brute_force() {
        let t = paper_tech(0.5);
        let (l, s) = t.demands(12.0, 12.0).unwrap();
        let (lg, sg) = grid_search(&t, 12.0, 12.0);
        assert!(((l - lg) / l).abs() < 1e-4, "{l} vs {lg}");
        assert!(((s - sg) / s).abs() < 1e-4, "{s} vs {sg}");
    }

    #[test]
    fn demands_satisfy_first_order_conditions() {
        let t = paper_tech(0.37);
        let (w1, w2) = (14.0, 9.5);
        let (l, s) = t.demands(w1, w2).unwrap();
        let h = 1e-6;
        let fl = (t.output(l * (1.0 + h), s) - t.output(l * (1.0 - h), s)) / (2.0 * h * l);
        let fs = (t.output(l, s * (1.0 + h)) - t.output(l, s * (1.0 - h))) / (2.0 * h * s);
        assert!((fl / w1 - 1.0).abs() < 1e-7);
        assert!((fs / w2 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn symmetric_and_degenerate_cases() {
        let t = paper_tech(1.0);
        let (l, s) = t.demands(13.0, 13.0).unwrap();
        assert!((l - s).abs() <= 1e-12 * l);
        assert!((t.profit(11.0, 15.0).unwrap() - t.profit(15.0, 11.0).unwrap()).abs() < 1e-10);

        let t0 = paper_tech(0.0);
        let (l, s) = t0.demands(13.0, 0.5).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(l, t0.onsite_only().labor_demand(13.0).unwrap());
        assert!(t.demands(0.0, 1.0).is_err());
        assert!(t.profit(1.0, -1.0).is_err());
    }

    #[test]
    fn envelope_relations() {
        let t = paper_tech(0.5);
        for (w1, w2) in [(12.0, 12.0), (15.0, 11.0), (20.0, 25.0)] {
            let (l, s) = t.demands(w1, w2).unwrap();
            let e1 = 1e-6 * w1;
            let d1 = -(t.profit(w1 + e1, w2).unwrap() - t.profit(w1 - e1, w2).unwrap()) / (2.0 * e1);
            let e2 = 1e-6 * w2;
            let d2 = -(t.profit(w1, w2 + e2).unwrap() - t.profit(w1, w2 - e2).unwrap()) / (2.0 * e2);
            assert!(((d1 - l) / l).abs() < 1e-4);
            assert!(((d2 - s) / s).abs() < 1e-4);
            assert!(t.profit(w1, w2).unwrap() > t.profit(w1 + 0.5, w2).unwrap());
        }
    }

    #[test]
    fn profit_blows_up_at_zero_wages() {
        let t = paper_tech(0.5);
        assert!(t.profit(1e-6, 12.0).unwrap() > 1e10);
        assert!(t.profit(12.0, 1e-6).unwrap() > 1e10);
    }

    #[test]
    fn hessian_is_symmetric_and_positive() {
        let t = paper_tech(0.6);
        for (w1, w2) in [(12.0, 12.0), (8.0, 30.0), (40.0, 5.0)] {
            let h = t.profit_hessian(w1, w2).unwrap();
            let rel = (h[0][1] - h[1][0]).abs() / h[0][1].abs().max(h[1][0].abs());
            assert!(rel < 1e-4, "cross partials {:?}", h);
            assert!(min_eigenvalue_2x2(h) > 0.0);
        }
    }

    #[test]
    fn closed_form_eigenvalue_matches_nalgebra() {
        let cases = [
            [[2.0, 0.3], [0.3, 1.0]],
            [[1e-3, 2e-4], [2e-4, 5e-1]],
            [[4.0, 0.0], [0.0, 4.0]],
            [[1.0, 0.999], [0.999, 1.0]],
        ];
        for m in cases {
            let mat = nalgebra::Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
            let eig = mat.symmetric_eigen();
            let lmin = eig.eigenvalues.min();
            assert!((min_eigenvalue_2x2(m) - lmin).abs() < 1e-10);
        }
    }
}
