//! Equilibrium wages of the base model.
//!
//! The residual `G_i(w) = -L_i(w_i) + int s_i(x, w) mu_w(x) dx` couples each
//! firm's labour demand to the logit labour supply under the density induced
//! by the wages themselves. Two routes solve `G = 0`:
//!
//! * [`Economy::solve`]: the hybrid dogleg/Broyden root-finder in log-wages;
//! * [`Economy::solve_by_fixed_point`]: damped iteration of the map sending
//!   `w` to the minimiser of `sum pi_i(w_i) + int R(x, w) dmu_w(x)` with the
//!   density frozen.

use std::sync::Arc;

use log::{debug, warn};
use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::economy::{CommuteCost, FirmSpec, ModelParams, WageVector};
use crate::error::{Error, Result};
use crate::grid::{CityGrid, Field};
use crate::hybrid::{self, HybridOptions, IterationRecord};
use crate::market::{ChoiceSet, MarketState};

/// Root-finder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Convergence threshold on the max-norm of the residual.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    /// Forward-difference step in log-wage units; default `sqrt(eps) * max(|u|, 1)`.
    pub fd_step: Option<f64>,
    /// Starting wages; default: every wage equal to the home wage.
    pub initial_wages: Option<Vec<f64>>,
    /// Initial trust radius in log-wage units.
    pub trust_radius_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            residual_tolerance: 1e-10,
            max_iterations: 200,
            fd_step: None,
            initial_wages: None,
            trust_radius_init: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::param("residual_tolerance", "must be > 0"));
        }
        if self.max_iterations < 1 {
            return Err(Error::param("max_iterations", "must be >= 1"));
        }
        if !(self.trust_radius_init > 0.0) {
            return Err(Error::param("trust_radius_init", "must be > 0"));
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0) {
                return Err(Error::param("fd_step", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn with_initial_wages(mut self, w: Vec<f64>) -> Self {
        self.initial_wages = Some(w);
        self
    }

    fn hybrid_options(&self) -> HybridOptions {
        HybridOptions {
            tolerance: self.residual_tolerance,
            max_iterations: self.max_iterations,
            fd_step: self.fd_step,
            initial_radius: self.trust_radius_init,
        }
    }
}

/// Settings of the fixed-point cross-check.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointConfig {
    /// Weight of the new iterate, in (0, 1].
    pub damping: f64,
    /// Stop once successive wage iterates differ by less than this (max-norm).
    pub step_tolerance: f64,
    pub max_outer_iterations: usize,
    pub inner_gradient_tolerance: f64,
    pub inner_max_iterations: usize,
    pub initial_wages: Option<Vec<f64>>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 0.5,
            step_tolerance: 1e-11,
            max_outer_iterations: 2000,
            inner_gradient_tolerance: 1e-13,
            inner_max_iterations: 100,
            initial_wages: None,
        }
    }
}

/// A priori box `[lower, upper]` that contains every equilibrium wage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WageBox {
    pub lower: f64,
    pub upper: f64,
}

impl WageBox {
    pub fn contains(&self, w: f64) -> bool {
        w >= self.lower && w <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "firm")]
pub enum ChoiceOption {
    Home,
    Firm(usize),
    OnSite(usize),
    Remote(usize),
}

impl ChoiceOption {
    pub fn label(&self) -> String {
        match self {
            ChoiceOption::Home => "home".into(),
            ChoiceOption::Firm(i) => format!("{}", i + 1),
            ChoiceOption::OnSite(i) => format!("onsite_{}", i + 1),
            ChoiceOption::Remote(i) => format!("remote_{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Hybrid,
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// `options[0]` is home; the rest carry the wage unknowns in order.
    pub options: Vec<ChoiceOption>,
    pub wages: Vec<f64>,
    pub demands: Vec<f64>,
    pub revenue: Field,
    pub density: Field,
    pub rent: Field,
    /// One field per option, home first.
    pub shares: Vec<Field>,
    /// Integral of `share * density` per option, home first; sums to 1.
    pub labor_supply: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub wage_box: WageBox,
    pub method: SolveMethod,
    pub trace: Vec<IterationRecord>,
    pub events: Vec<String>,
}

impl EquilibriumResult {
    pub fn in_wage_box(&self) -> bool {
        self.wages.iter().all(|w| self.wage_box.contains(*w))
    }

    pub fn home_mass(&self) -> f64 {
        self.labor_supply[0]
    }

    /// Labour supplied to the non-home options.
    pub fn supplied(&self) -> &[f64] {
        &self.labor_supply[1..]
    }

    /// Residential distribution `share_j * density` of the workers choosing option `j`.
    pub fn distribution(&self, j: usize) -> Vec<f64> {
        self.shares[j]
            .values()
            .iter()
            .zip(self.density.values())
            .map(|(s, m)| s * m)
            .collect()
    }
}

/// Diagnostic payload attached to [`Error::NotConverged`].
#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub best_wages: Vec<f64>,
    pub best_residual_norm: f64,
    pub iterations: usize,
    pub residual_history: Vec<IterationRecord>,
    pub events: Vec<String>,
    #[serde(skip)]
    pub partial: Option<Box<EquilibriumResult>>,
}

/// Outcome of [`Economy::uniqueness_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub theta0: f64,
    pub alpha0: f64,
    pub min_curvature: f64,
    pub argmin_wage: f64,
    pub argmin_firm: usize,
    pub wage_box: WageBox,
}

impl UniquenessReport {
    pub fn covers(&self, theta: f64) -> bool {
        theta <= self.theta0
    }
}

/// Base model on a fixed grid: firms, preferences and precomputed commuting costs.
#[derive(Debug, Clone)]
pub struct Economy {
    grid: Arc<CityGrid>,
    firms: Vec<FirmSpec>,
    params: ModelParams,
    choice: ChoiceSet,
}

pub(crate) fn cost_rows(
    grid: &CityGrid,
    locations: impl Iterator<Item = crate::grid::Point>,
    cost: &dyn CommuteCost,
) -> Vec<Vec<f64>> {
    locations
        .map(|y| grid.nodes().iter().map(|x| cost.cost(x, &y)).collect())
        .collect()
}

pub(crate) fn check_locations(
    grid: &CityGrid,
    locations: impl Iterator<Item = crate::grid::Point>,
) -> Result<()> {
    for (i, y) in locations.enumerate() {
        if !grid.contains(&y) {
            return Err(Error::param(
                format!("firms[{i}].location"),
                format!("{:?} lies outside the city", &y[..grid.dimension()]),
            ));
        }
    }
    Ok(())
}

impl Economy {
    pub fn new(grid: Arc<CityGrid>, firms: Vec<FirmSpec>, params: ModelParams) -> Result<Self> {
        let cost = params.cost_model();
        Self::with_cost(grid, firms, params, cost.as_ref())
    }

    /// Like [`Economy::new`] with an arbitrary commuting-cost function.
    pub fn with_cost(
        grid: Arc<CityGrid>,
        firms: Vec<FirmSpec>,
        params: ModelParams,
        cost: &dyn CommuteCost,
    ) -> Result<Self> {
        params.validate()?;
        for f in &firms {
            f.tech.validate()?;
        }
        check_locations(&grid, firms.iter().map(|f| f.location))?;
        let costs = cost_rows(&grid, firms.iter().map(|f| f.location), cost)
            .into_iter()
            .map(Some)
            .collect();
        let choice = ChoiceSet {
            grid: grid.clone(),
            costs,
            w0: params.w0,
            sigma: params.sigma,
            alpha: params.alpha(),
        };
        Ok(Economy {
            grid,
            firms,
            params,
            choice,
        })
    }

    pub fn grid(&self) -> &Arc<CityGrid> {
        &self.grid
    }

    pub fn firms(&self) -> &[FirmSpec] {
        &self.firms
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }

    /// Commuting cost of firm `i` at every node.
    pub fn cost_row(&self, i: usize) -> &[f64] {
        self.choice.costs[i].as_deref().expect("base firms commute")
    }

    /// Largest commuting cost over the city.
    pub fn max_cost(&self) -> f64 {
        self.choice
            .costs
            .iter()
            .flatten()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, c| m.max(*c))
    }

    fn demands(&self, wages: &[f64]) -> Vec<f64> {
        self.firms
            .iter()
            .zip(wages)
            .map(|(f, w)| f.tech.demand_unchecked(*w))
            .collect()
    }

    /// Bounds from comparing the convex objective with its value at `(w0, ..., w0)`:
    /// `upper = 2M + sum pi_i(w0) + sigma log(N+1) + w0` and `lower` the smallest
    /// wage at which some firm's profit reaches `upper`.
    pub fn wage_bounds(&self) -> WageBox {
        let n = self.firms.len();
        let p = &self.params;
        let upper = 2.0 * self.max_cost()
            + self
                .firms
                .iter()
                .map(|f| f.tech.profit_unchecked(p.w0))
                .sum::<f64>()
            + p.sigma * ((n + 1) as f64).ln()
            + p.w0;
        let lower = self
            .firms
            .iter()
            .map(|f| f.tech.wage_at_profit(upper))
            .fold(upper, f64::min);
        WageBox { lower, upper }
    }

    fn check_wages(&self, w: &WageVector) -> Result<()> {
        if w.len() != self.firms.len() {
            return Err(Error::param(
                "wages",
                format!("{} wages for {} firms", w.len(), self.firms.len()),
            ));
        }
        Ok(())
    }

    /// Residual of the labour-market clearing system at `w`.
    pub fn assemble_residual(&self, w: &WageVector) -> Result<Vec<f64>> {
        self.params.require_noise()?;
        self.check_wages(w)?;
        let state = self.choice.evaluate(w.as_slice());
        Ok(residual_from(&state, &self.demands(w.as_slice())))
    }

    /// Forward-difference Jacobian of the residual with respect to the wages.
    pub fn residual_jacobian(&self, w: &WageVector) -> Result<DMatrix<f64>> {
        let g0 = self.assemble_residual(w)?;
        let n = w.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut wp = w.as_slice().to_vec();
            let h = f64::EPSILON.sqrt() * wp[j].abs().max(1.0);
            wp[j] += h;
            let gp = self.assemble_residual(&WageVector::new(wp)?)?;
            for i in 0..n {
                jac[(i, j)] = (gp[i] - g0[i]) / h;
            }
        }
        Ok(jac)
    }

    pub(crate) fn build_result(
        &self,
        wages: Vec<f64>,
        method: SolveMethod,
        iterations: usize,
        tolerance: f64,
        trace: Vec<IterationRecord>,
        events: Vec<String>,
    ) -> EquilibriumResult {
        let options = std::iter::once(ChoiceOption::Home)
            .chain((0..self.firms.len()).map(ChoiceOption::Firm))
            .collect();
        let demands = self.demands(&wages);
        let state = self.choice.evaluate(&wages);
        assemble_result(
            &self.grid,
            self.params.theta,
            options,
            wages,
            demands,
            state,
            self.wage_bounds(),
            method,
            iterations,
            tolerance,
            trace,
            events,
        )
    }

    fn initial_wages(&self, given: Option<&Vec<f64>>) -> Result<Vec<f64>> {
        match given {
            Some(w) => {
                if w.len() != self.firms.len() {
                    return Err(Error::param(
                        "initial_wages",
                        format!("{} wages for {} firms", w.len(), self.firms.len()),
                    ));
                }
                Ok(WageVector::new(w.clone())?.into_inner())
            }
            None => Ok(vec![self.params.w0; self.firms.len()]),
        }
    }

    /// Hybrid dogleg/Broyden solve of the clearing system.
    pub fn solve(&self, config: &SolverConfig) -> Result<EquilibriumResult> {
        self.params.require_noise()?;
        config.validate()?;
        let w_init = self.initial_wages(config.initial_wages.as_ref())?;
        let bounds = self.wage_bounds();
        let (wages, outcome, events) =
            solve_in_log_wages(&w_init, bounds, config, |w| {
                let state = self.choice.evaluate(w);
                residual_from(&state, &self.demands(w))
            });
        let result = self.build_result(
            wages,
            SolveMethod::Hybrid,
            outcome.iterations,
            config.residual_tolerance,
            outcome.trace,
            events,
        );
        finalize(result)
    }

    /// Damped fixed-point iteration on the frozen-density minimisation.
    pub fn solve_by_fixed_point(&self, config: &FixedPointConfig) -> Result<EquilibriumResult> {
        self.params.require_noise()?;
        if !(config.damping > 0.0 && config.damping <= 1.0) {
            return Err(Error::param("damping", "must lie in (0, 1]"));
        }
        let mut w = self.initial_wages(config.initial_wages.as_ref())?;
        let bounds = self.wage_bounds();
        let mut events = Vec::new();
        // with alpha = 0 the density ignores the wages and the map is constant
        let frozen_uniform = self.params.alpha() == 0.0;
        let tau = if frozen_uniform { 1.0 } else { config.damping };
        let mut converged = false;
        let mut outer = 0;
        while outer < config.max_outer_iterations {
            outer += 1;
            let density = self.choice.evaluate(&w).density;
            let target = self.minimize_frozen(&w, &density, bounds, config, &mut events)?;
            let mut step = 0.0f64;
            for (wi, ti) in w.iter_mut().zip(&target) {
                let next = (1.0 - tau) * *wi + tau * ti;
                step = step.max((next - *wi).abs());
                *wi = next;
            }
            debug!("fixed point iteration {outer}: step {step:.3e}");
            if frozen_uniform || step < config.step_tolerance {
                converged = true;
                break;
            }
        }
        let mut result = self.build_result(
            w,
            SolveMethod::FixedPoint,
            outer,
            config.step_tolerance,
            Vec::new(),
            events,
        );
        result.converged = converged;
        if converged {
            Ok(result)
        } else {
            Err(failure(result))
        }
    }

    /// Objective `sum pi_i(w_i) + int R(x, w) dmu(x)` with `mu` frozen.
    pub fn frozen_objective(&self, w: &[f64], density: &[f64]) -> f64 {
        let ev = self.choice.evaluate_frozen(w, density);
        self.firms
            .iter()
            .zip(w)
            .map(|(f, wi)| f.tech.profit_unchecked(*wi))
            .sum::<f64>()
            + ev.mean_revenue
    }

    fn frozen_gradient(&self, w: &[f64], density: &[f64]) -> Vec<f64> {
        let ev = self.choice.evaluate_frozen(w, density);
        ev.supply
            .iter()
            .zip(self.demands(w))
            .map(|(s, l)| s - l)
            .collect()
    }

    /// Minimiser of the frozen-density objective: safeguarded Newton with a
    /// backtracking line search, falling back to coordinate bisection on the
    /// monotone partial derivatives.
    pub fn minimize_frozen(
        &self,
        start: &[f64],
        density: &[f64],
        bounds: WageBox,
        config: &FixedPointConfig,
        events: &mut Vec<String>,
    ) -> Result<Vec<f64>> {
        let n = start.len();
        let mut w: Vec<f64> = start
            .iter()
            .map(|v| v.clamp(bounds.lower, bounds.upper))
            .collect();
        let tol = config.inner_gradient_tolerance;
        let mut newton_ok = false;
        for _ in 0..config.inner_max_iterations {
            let ev = self.choice.evaluate_frozen(&w, density);
            let grad: Vec<f64> = ev
                .supply
                .iter()
                .zip(self.demands(&w))
                .map(|(s, l)| s - l)
                .collect();
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm <= tol {
                newton_ok = true;
                break;
            }
            let mut hess = ev.revenue_hessian.clone();
            for (i, f) in self.firms.iter().enumerate() {
                hess[(i, i)] += f.tech.demand_unchecked(w[i]) / ((1.0 - f.tech.beta) * w[i]);
            }
            let Some(chol) = hess.cholesky() else { break };
            let p = chol.solve(&nalgebra::DVector::from_column_slice(&grad)) * -1.0;
            let slope: f64 = p.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let j0 = self.profit_sum(&w) + ev.mean_revenue;
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = w.iter().zip(p.iter()).map(|(a, b)| a + t * b).collect();
                if cand.iter().all(|v| *v > 0.0) {
                    let j1 = self.frozen_objective(&cand, density);
                    let armijo = j1 <= j0 + 1e-4 * t * slope;
                    let gsmaller = || {
                        self.frozen_gradient(&cand, density)
                            .iter()
                            .fold(0.0f64, |m, g| m.max(g.abs()))
                            < gnorm
                    };
                    if armijo || gsmaller() {
                        w = cand;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if newton_ok {
            return Ok(w);
        }
        events.push("inner Newton stalled; switched to coordinate bisection".into());
        warn!("inner Newton stalled; switching to coordinate bisection");
        for _cycle in 0..10_000 {
            for i in 0..n {
                let (mut lo, mut hi) = (bounds.lower, bounds.upper);
                let g_at = |wi: f64, w: &mut Vec<f64>| {
                    w[i] = wi;
                    self.frozen_gradient(w, density)[i]
                };
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if g_at(mid, &mut w) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                w[i] = 0.5 * (lo + hi);
            }
            let gnorm = self
                .frozen_gradient(&w, density)
                .iter()
                .fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm <= tol.max(1e-12) {
                return Ok(w);
            }
        }
        Err(Error::Refused(
            "coordinate bisection did not reach the inner tolerance".into(),
        ))
    }

    fn profit_sum(&self, w: &[f64]) -> f64 {
        self.firms
            .iter()
            .zip(w)
            .map(|(f, wi)| f.tech.profit_unchecked(*wi))
            .sum()
    }

    /// Largest preference exponent for which the clearing system provably has a
    /// single solution: `alpha0 = (w0 / N) min_i min_{w in box} pi_i''(w)` and
    /// `theta0 = alpha0 / (1 + alpha0)`.
    pub fn uniqueness_threshold(&self) -> UniquenessReport {
        let bounds = self.wage_bounds();
        let n = self.firms.len().max(1);
        let (mut best, mut arg, mut firm) = (f64::INFINITY, bounds.upper, 0);
        const SCAN: usize = 4000;
        for (i, f) in self.firms.iter().enumerate() {
            let curv = |w: f64| f.tech.demand_unchecked(w) / ((1.0 - f.tech.beta) * w);
            let step = (bounds.upper - bounds.lower) / SCAN as f64;
            let (mut k_best, mut v_best) = (0, f64::INFINITY);
            for k in 0..=SCAN {
                let w = if k == SCAN { bounds.upper } else { bounds.lower + k as f64 * step };
                let v = curv(w);
                if v < v_best {
                    v_best = v;
                    k_best = k;
                }
            }
            let a = bounds.lower + k_best.saturating_sub(1) as f64 * step;
            let b = (bounds.lower + (k_best + 1) as f64 * step).min(bounds.upper);
            let (w_min, v_min) = golden_section_min(curv, a, b, 1e-12);
            let (w_min, v_min) = if v_best < v_min { (bounds.lower + k_best as f64 * step, v_best) } else { (w_min, v_min) };
            if v_min < best {
                best = v_min;
                arg = w_min;
                firm = i;
            }
        }
        let alpha0 = self.params.w0 / n as f64 * best;
        UniquenessReport {
            theta0: alpha0 / (1.0 + alpha0),
            alpha0,
            min_curvature: best,
            argmin_wage: arg,
            argmin_firm: firm,
            wage_box: bounds,
        }
    }
}

pub(crate) fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // the endpoints are candidates too (monotone integrands)
    [(a, f(a)), (b, f(b)), (c, fc), (d, fd)]
        .into_iter()
        .fold((a, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

pub(crate) fn residual_from(state: &MarketState, demands: &[f64]) -> Vec<f64> {
    state.supply[1..]
        .iter()
        .zip(demands)
        .map(|(s, l)| s - l)
        .collect()
}

/// Runs the hybrid solver on `u = log w`. Wages that underflow to zero are
/// clamped to half the lower wage bound and the event recorded.
pub(crate) fn solve_in_log_wages(
    w_init: &[f64],
    bounds: WageBox,
    config: &SolverConfig,
    mut residual: impl FnMut(&[f64]) -> Vec<f64>,
) -> (Vec<f64>, hybrid::HybridOutcome, Vec<String>) {
    let mut events = Vec::new();
    let u0: Vec<f64> = w_init.iter().map(|w| w.ln()).collect();
    let outcome = {
        let events = &mut events;
        let f = |u: &[f64]| {
            let mut w = Vec::with_capacity(u.len());
            for (i, ui) in u.iter().enumerate() {
                let wi = ui.exp();
                if wi.is_infinite() || ui.is_nan() {
                    return None;
                }
                if wi <= 0.0 {
                    let msg = format!("wage {i} left (0, inf); clamped to {}", bounds.lower / 2.0);
                    warn!("{msg}");
                    events.push(msg);
                    w.push(bounds.lower / 2.0);
                } else {
                    w.push(wi);
                }
            }
            Some(residual(&w))
        };
        hybrid::solve(f, &u0, &config.hybrid_options())
    };
    let wages = outcome.x.iter().map(|u| u.exp().max(bounds.lower / 2.0)).collect();
    (wages, outcome, events)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_result(
    grid: &Arc<CityGrid>,
    theta: f64,
    options: Vec<ChoiceOption>,
    wages: Vec<f64>,
    demands: Vec<f64>,
    state: MarketState,
    wage_box: WageBox,
    method: SolveMethod,
    iterations: usize,
    tolerance: f64,
    trace: Vec<IterationRecord>,
    events: Vec<String>,
) -> EquilibriumResult {
    let residual = residual_from(&state, &demands);
    let residual_norm = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let rent: Vec<f64> = state
        .revenue
        .iter()
        .zip(&state.density)
        .map(|(r, m)| (1.0 - theta) * r * m)
        .collect();
    let field = |v: Vec<f64>| Field::new(grid.clone(), v).expect("node-sized");
    EquilibriumResult {
        options,
        wages,
        demands,
        revenue: field(state.revenue),
        density: field(state.density),
        rent: field(rent),
        shares: state.shares.into_iter().map(field).collect(),
        labor_supply: state.supply,
        residual,
        residual_norm,
        iterations,
        converged: residual_norm <= tolerance,
        tolerance,
        wage_box,
        method,
        trace,
        events,
    }
}

pub(crate) fn failure(result: EquilibriumResult) -> Error {
    Error::NotConverged(Box::new(FailureReport {
        best_wages: result.wages.clone(),
        best_residual_norm: result.residual_norm,
        iterations: result.iterations,
        residual_history: result.trace.clone(),
        events: result.events.clone(),
        partial: Some(Box::new(result)),
    }))
}

pub(crate) fn finalize(result: EquilibriumResult) -> Result<EquilibriumResult> {
    if result.converged {
        if !result.in_wage_box() {
            warn!(
                "converged wages {:?} outside the a priori box [{}, {}]",
                result.wages, result.wage_box.lower, result.wage_box.upper
            );
        }
        Ok(result)
    } else {
        Err(failure(result))
    }
}

/// Coupling `gamma(i, x)` between options and residences, with its marginals.
#[derive(Debug, Clone)]
pub struct CouplingReport {
    pub coupling: Vec<Field>,
    /// `int gamma(i, .) dmu` per option, home first.
    pub marginals: Vec<f64>,
    /// Largest `|sum_i gamma(i, x) - 1|` over nodes.
    pub row_sum_error: f64,
    /// Largest gap between the marginals and the reported labour supply.
    pub marginal_error: f64,
    /// `|home mass - (1 - sum of the other masses)|`.
    pub budget_error: f64,
    /// `|home mass - (1 - sum of labour demands)|`.
    pub home_consistency_error: f64,
}

pub fn coupling_diagnostics(result: &EquilibriumResult) -> Result<CouplingReport> {
    if !result.converged {
        return Err(Error::Refused(
            "coupling diagnostics need a converged equilibrium".into(),
        ));
    }
    let grid = result.density.grid();
    let n = grid.len();
    let mut row_sum_error = 0.0f64;
    for k in 0..n {
        let s: f64 = result.shares.iter().map(|f| f.values()[k]).sum();
        row_sum_error = row_sum_error.max((s - 1.0).abs());
    }
    let marginals: Vec<f64> = (0..result.shares.len())
        .map(|j| grid.integrate(&result.distribution(j)))
        .collect::<Result<_>>()?;
    let marginal_error = marginals
        .iter()
        .zip(&result.labor_supply)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let others: f64 = marginals[1..].iter().sum();
    let budget_error = (marginals[0] - (1.0 - others)).abs();
    let home_consistency_error =
        (result.labor_supply[0] - (1.0 - result.demands.iter().sum::<f64>())).abs();
    Ok(CouplingReport {
        coupling: result.shares.clone(),
        marginals,
        row_sum_error,
        marginal_error,
        budget_error,
        home_consistency_error,
    })
}

/// Hybrid solve from plain inputs.
pub fn solve_equilibrium(
    firms: &[FirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    Economy::new(grid, firms.to_vec(), *params)?.solve(config)
}

pub fn solve_by_fixed_point(
    firms: &[FirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
    config: &FixedPointConfig,
) -> Result<EquilibriumResult> {
    Economy::new(grid, firms.to_vec(), *params)?.solve_by_fixed_point(config)
}

pub fn assemble_residual(
    w: &WageVector,
    firms: &[FirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
) -> Result<Vec<f64>> {
    Economy::new(grid, firms.to_vec(), *params)?.assemble_residual(w)
}

/// Uniqueness threshold from plain inputs. The wage box needs the city to
/// bound commuting costs, hence the grid argument.
pub fn uniqueness_threshold(
    firms: &[FirmSpec],
    params: &ModelParams,
    grid: Arc<CityGrid>,
) -> Result<UniquenessReport> {
    Ok(Economy::new(grid, firms.to_vec(), *params)?.uniqueness_threshold())
}
