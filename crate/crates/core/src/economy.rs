//! Firms, households and the logit revenue model.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{distance, Field, Point};

/// Single-input Cobb-Douglas technology `f(l) = A^(1-beta) * l^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobbDouglas {
    pub productivity: f64,
    pub beta: f64,
}

fn check_wage(w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidWage(w))
    }
}

impl CobbDouglas {
    pub fn new(productivity: f64, beta: f64) -> Result<Self> {
        let tech = CobbDouglas { productivity, beta };
        tech.validate()?;
        Ok(tech)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.productivity > 0.0 && self.productivity.is_finite()) {
            return Err(Error::param("A", format!("{} is not > 0", self.productivity)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param("beta", format!("{} is not in (0, 1)", self.beta)));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.productivity.powf(1.0 - self.beta)
    }

    pub fn output(&self, labor: f64) -> f64 {
        self.scale() * labor.max(0.0).powf(self.beta)
    }

    /// Profit-maximising employment at wage `w`: solves `f'(l) = w`.
    pub fn labor_demand(&self, w: f64) -> Result<f64> {
        check_wage(w)?;
        Ok(self.demand_unchecked(w))
    }

    pub(crate) fn demand_unchecked(&self, w: f64) -> f64 {
        (self.beta * self.scale() / w).powf(1.0 / (1.0 - self.beta))
    }

    /// `pi(w) = max_l f(l) - w l`, which for Cobb-Douglas is `(1-beta)/beta * w * L(w)`.
    pub fn profit(&self, w: f64) -> Result<f64> {
        check_wage(w)?;
        Ok(self.profit_unchecked(w))
    }

    pub(crate) fn profit_unchecked(&self, w: f64) -> f64 {
        (1.0 - self.beta) / self.beta * w * self.demand_unchecked(w)
    }

    /// Second derivative of the profit function, `-L'(w) = L(w) / ((1-beta) w)`.
    pub fn profit_curvature(&self, w: f64) -> Result<f64> {
        check_wage(w)?;
        Ok(self.demand_unchecked(w) / ((1.0 - self.beta) * w))
    }

    /// Wage at which profit equals `p`. Profit is a decreasing power of the wage.
    pub fn wage_at_profit(&self, p: f64) -> f64 {
        // pi(w) = pi(1) * w^(-beta/(1-beta))
        let pi1 = self.profit_unchecked(1.0);
        (pi1 / p).powf((1.0 - self.beta) / self.beta)
    }
}

/// Commuting cost of a worker living at `home` and working at `workplace`.
pub trait CommuteCost: Send + Sync + fmt::Debug {
    fn cost(&self, home: &Point, workplace: &Point) -> f64;
}

/// `scale * |home - workplace|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledDistance(pub f64);

impl CommuteCost for ScaledDistance {
    fn cost(&self, home: &Point, workplace: &Point) -> f64 {
        self.0 * distance(home, workplace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmSpec {
    pub location: Point,
    pub tech: CobbDouglas,
}

impl FirmSpec {
    pub fn new(location: Point, tech: CobbDouglas) -> Self {
        FirmSpec { location, tech }
    }

    pub fn at(x: f64, tech: CobbDouglas) -> Self {
        FirmSpec {
            location: [x, 0.0],
            tech,
        }
    }
}

/// Household preferences, noise level and outside option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: f64,
    pub sigma: f64,
    pub w0: f64,
    pub commute_scale: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            theta: 0.0,
            sigma: 0.1,
            w0: 12.0,
            commute_scale: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidPreference(self.theta));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("{} is not >= 0", self.sigma)));
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(Error::param("w0", format!("{} is not > 0", self.w0)));
        }
        if !(self.commute_scale >= 0.0 && self.commute_scale.is_finite()) {
            return Err(Error::param(
                "commute_scale",
                format!("{} is not >= 0", self.commute_scale),
            ));
        }
        Ok(())
    }

    pub(crate) fn require_noise(&self) -> Result<()> {
        if self.sigma > 0.0 {
            Ok(())
        } else {
            Err(Error::NonPositiveSigma(self.sigma))
        }
    }

    /// Density exponent `theta / (1 - theta)`.
    pub fn alpha(&self) -> f64 {
        self.theta / (1.0 - self.theta)
    }

    pub fn cost_model(&self) -> Arc<dyn CommuteCost> {
        Arc::new(ScaledDistance(self.commute_scale))
    }
}

/// Strictly positive wages, one per firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WageVector(Vec<f64>);

impl WageVector {
    pub fn new(wages: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = wages.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidWage(bad));
        }
        Ok(WageVector(wages))
    }

    pub fn uniform(n: usize, w: f64) -> Result<Self> {
        Self::new(vec![w; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for WageVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Net value of each option at `x`: `[w0, w_1 - c_1(x), ..., w_N - c_N(x)]`.
pub fn net_values(
    x: &Point,
    w: &WageVector,
    params: &ModelParams,
    firms: &[FirmSpec],
) -> Result<Vec<f64>> {
    if w.len() != firms.len() {
        return Err(Error::param(
            "wages",
            format!("{} wages for {} firms", w.len(), firms.len()),
        ));
    }
    let cost = ScaledDistance(params.commute_scale);
    let mut out = Vec::with_capacity(firms.len() + 1);
    out.push(params.w0);
    out.extend(
        firms
            .iter()
            .zip(w.as_slice())
            .map(|(f, wi)| wi - cost.cost(x, &f.location)),
    );
    Ok(out)
}

/// Stabilised `sigma * log(sum(exp(v / sigma)))` for `sigma > 0`.
pub(crate) fn smooth_max(values: &[f64], sigma: f64) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|v| ((v - m) / sigma).exp()).sum();
    m + sigma * s.ln()
}

/// Writes the Gibbs shares into `out` and returns the smoothed maximum.
pub(crate) fn smooth_max_and_shares(values: &[f64], sigma: f64, out: &mut [f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(values) {
        *o = ((v - m) / sigma).exp();
        s += *o;
    }
    let inv = 1.0 / s;
    out.iter_mut().for_each(|o| *o *= inv);
    m + sigma * s.ln()
}

fn check_values(values: &[f64], sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if values.is_empty() {
        return Err(Error::NumericInput("empty option list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("non-finite option value".into()));
    }
    Ok(())
}

/// Smoothed (log-sum-exp) revenue of a set of options.
pub fn revenue_softmax(values: &[f64], sigma: f64) -> Result<f64> {
    check_values(values, sigma)?;
    Ok(smooth_max(values, sigma))
}

/// Logit choice probabilities; the gradient of [`revenue_softmax`].
pub fn choice_shares(values: &[f64], sigma: f64) -> Result<Vec<f64>> {
    check_values(values, sigma)?;
    let mut out = vec![0.0; values.len()];
    smooth_max_and_shares(values, sigma, &mut out);
    Ok(out)
}

/// Normalised `R^alpha` in log space, written into `out`. Returns the
/// normalising integral's log.
pub(crate) fn density_in_place(
    grid: &crate::grid::CityGrid,
    revenue: &[f64],
    alpha: f64,
    out: &mut [f64],
) -> f64 {
    if alpha == 0.0 {
        let inv = 1.0 / grid.weights().iter().sum::<f64>();
        out.iter_mut().for_each(|o| *o = inv);
        return 0.0;
    }
    let mut amax = f64::NEG_INFINITY;
    for (o, r) in out.iter_mut().zip(revenue) {
        *o = alpha * r.ln();
        amax = amax.max(*o);
    }
    out.iter_mut().for_each(|o| *o = (*o - amax).exp());
    let z = grid.weighted_sum(out.iter().cloned());
    let inv = 1.0 / z;
    out.iter_mut().for_each(|o| *o *= inv);
    amax + z.ln()
}

/// Residential density `R^(theta/(1-theta)) / integral`.
pub fn density_from_revenue(revenue: &Field, theta: f64) -> Result<Field> {
    if !(theta >= 0.0 && theta < 1.0) {
        return Err(Error::InvalidPreference(theta));
    }
    if let Some(bad) = revenue.values().iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::NumericInput(format!("revenue {bad} is not positive")));
    }
    let alpha = theta / (1.0 - theta);
    let mut out = vec![0.0; revenue.values().len()];
    density_in_place(revenue.grid(), revenue.values(), alpha, &mut out);
    Field::new(revenue.grid().clone(), out)
}

/// Rent `Q = (1 - theta) R mu`, from the housing demand `S = (1-theta) R / Q`
/// and land clearing `mu S = 1`.
pub fn rent_from_density(revenue: &Field, density: &Field, theta: f64) -> Result<Field> {
    if !(theta >= 0.0 && theta < 1.0) {
        return Err(Error::InvalidPreference(theta));
    }
    if revenue.values().len() != density.values().len() {
        return Err(Error::NumericInput("revenue and density sizes differ".into()));
    }
    let q = revenue
        .values()
        .iter()
        .zip(density.values())
        .map(|(r, m)| (1.0 - theta) * r * m)
        .collect();
    Field::new(revenue.grid().clone(), q)
}

/// Indirect utility of a household with revenue `r` facing rent `q`.
pub fn indirect_utility(r: f64, q: f64, theta: f64) -> f64 {
    if theta == 0.0 {
        r / q
    } else {
        theta.powf(theta) * (1.0 - theta).powf(1.0 - theta) * r / q.powf(1.0 - theta)
    }
}
