//! The noiseless model: hard assignment of each residence to its best options
//! and the interval form of labour-market clearing,
//!
//! `L_i(w_i) in [mu_w(V_i^s), mu_w(V_i)]`, `1 - sum L_i in [mu_w(V_0^s), mu_w(V_0)]`,
//!
//! where `V_i` collects the residences for which option `i` attains the hard
//! maximum `R_0(x, w) = max_i (w_i - c_i(x))` and `V_i^s` those where it is the
//! only maximiser. Candidate wages come from regularised solves with `sigma -> 0`.

use std::io::Write;
use std::sync::Arc;

use log::info;
use serde::Serialize;

use crate::continuation::continue_to;
use crate::economy::{density_in_place, net_values, FirmSpec, ModelParams, WageVector};
use crate::equilibrium::{Economy, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{write_node_table, CityGrid, Point};

/// Regularisation levels of the default limit study.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.1, 0.05, 0.02, 0.01, 0.005];

/// Default tie tolerance relative to the wage scale.
pub const RELATIVE_TIE_TOLERANCE: f64 = 1e-9;

/// `R_0(x, w)`: the best net value at `x`, home included.
pub fn hard_revenue(
    x: &Point,
    w: &WageVector,
    params: &ModelParams,
    firms: &[FirmSpec],
) -> Result<f64> {
    let v = net_values(x, w, params, firms)?;
    Ok(v.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Classification of every node by its set of optimal options (0 is home).
#[derive(Debug, Clone)]
pub struct Partition {
    grid: Arc<CityGrid>,
    tie_tolerance: f64,
    optimal: Vec<Vec<usize>>,
    /// `R_0` at each node.
    pub revenue: Vec<f64>,
    /// `mu_w` built from `R_0`.
    pub density: Vec<f64>,
    /// `mu_w(V_i^s)` per option, home first.
    pub mass_strict: Vec<f64>,
    /// `mu_w(V_i)` per option, home first.
    pub mass_weak: Vec<f64>,
}

impl Partition {
    pub fn grid(&self) -> &Arc<CityGrid> {
        &self.grid
    }

    pub fn tie_tolerance(&self) -> f64 {
        self.tie_tolerance
    }

    pub fn n_options(&self) -> usize {
        self.mass_weak.len()
    }

    /// Options within `tie_tolerance` of the maximum at node `k`.
    pub fn optimal_set(&self, k: usize) -> &[usize] {
        &self.optimal[k]
    }

    pub fn is_strict(&self, k: usize) -> bool {
        self.optimal[k].len() == 1
    }

    /// The optimal option at node `k`, or -1 on a tie.
    pub fn label(&self, k: usize) -> i64 {
        if self.is_strict(k) {
            self.optimal[k][0] as i64
        } else {
            -1
        }
    }

    /// Number of neighbouring node pairs carrying different labels.
    pub fn boundary_pairs(&self) -> usize {
        let mut count = 0;
        for k in 0..self.grid.len() {
            for nb in self.grid.neighbours(k).filter(|&nb| nb > k) {
                if self.label(nb) != self.label(k) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Size of the cell boundaries: a point count in 1D, a length in 2D
    /// (crossing edges times the spacing).
    pub fn perimeter(&self) -> f64 {
        let pairs = self.boundary_pairs() as f64;
        if self.grid.dimension() == 1 {
            pairs
        } else {
            pairs * self.grid.spacing()
        }
    }

    /// Maximal runs of consecutive nodes in `V_option`, as coordinate pairs.
    /// Only meaningful in 1D.
    pub fn intervals(&self, option: usize) -> Vec<(f64, f64)> {
        let nodes = self.grid.nodes();
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for k in 0..nodes.len() {
            let inside = self.optimal[k].contains(&option);
            match (inside, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    out.push((nodes[s][0], nodes[k - 1][0]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((nodes[s][0], nodes[nodes.len() - 1][0]));
        }
        out
    }

    /// `x[,y],option,strict` per node; option is -1 on ties.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.grid.len();
        let labels: Vec<f64> = (0..n).map(|k| self.label(k) as f64).collect();
        let strict: Vec<f64> = (0..n).map(|k| f64::from(u8::from(self.is_strict(k)))).collect();
        write_node_table(out, &self.grid, &[("option", &labels), ("strict", &strict)])
    }
}

/// Interval condition of one option.
#[derive(Debug, Clone, Serialize)]
pub struct OptionCheck {
    pub option: usize,
    /// Labour demand (`1 - sum L_i` for home).
    pub demand: f64,
    pub mass_strict: f64,
    pub mass_weak: f64,
    /// Distance to the nearer end of the slack-widened interval; negative
    /// when the demand lies outside.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroNoiseReport {
    pub wages: Vec<f64>,
    pub tie_tolerance: f64,
    /// `2 h * perimeter * max mu`.
    pub slack: f64,
    pub perimeter: f64,
    /// Home first.
    pub options: Vec<OptionCheck>,
    pub passed: bool,
}

impl Economy {
    /// `R_0` at every node.
    pub fn hard_revenue_field(&self, w: &[f64]) -> Vec<f64> {
        let w0 = self.params().w0;
        (0..self.grid().len())
            .map(|k| {
                (0..self.n_firms())
                    .map(|i| w[i] - self.cost_row(i)[k])
                    .fold(w0, f64::max)
            })
            .collect()
    }

    /// Partition of the city at wages `w`. `None` selects the default tie
    /// tolerance, `1e-9` times the wage scale.
    pub fn partition(&self, w: &WageVector, tie_tolerance: Option<f64>) -> Result<Partition> {
        if w.len() != self.n_firms() {
            return Err(Error::param(
                "wages",
                format!("{} wages for {} firms", w.len(), self.n_firms()),
            ));
        }
        let w = w.as_slice();
        let w0 = self.params().w0;
        let tol = match tie_tolerance {
            Some(t) if t >= 0.0 && t.is_finite() => t,
            Some(t) => return Err(Error::param("tie_tolerance", format!("{t} is not >= 0"))),
            None => RELATIVE_TIE_TOLERANCE * w.iter().cloned().fold(w0, f64::max),
        };
        let grid = self.grid().clone();
        let n = grid.len();
        let m = self.n_firms() + 1;
        let revenue = self.hard_revenue_field(w);
        let mut density = vec![0.0; n];
        density_in_place(&grid, &revenue, self.params().alpha(), &mut density);
        let mut optimal = Vec::with_capacity(n);
        let mut mass_strict = vec![0.0; m];
        let mut mass_weak = vec![0.0; m];
        let weights = grid.weights();
        for k in 0..n {
            let value = |j: usize| if j == 0 { w0 } else { w[j - 1] - self.cost_row(j - 1)[k] };
            let set: Vec<usize> = (0..m).filter(|&j| value(j) >= revenue[k] - tol).collect();
            let mass = weights[k] * density[k];
            for &j in &set {
                mass_weak[j] += mass;
            }
            if set.len() == 1 {
                mass_strict[set[0]] += mass;
            }
            optimal.push(set);
        }
        Ok(Partition {
            grid,
            tie_tolerance: tol,
            optimal,
            revenue,
            density,
            mass_strict,
            mass_weak,
        })
    }

    /// Checks the interval clearing conditions at `w` up to the quadrature slack.
    pub fn verify_zero_noise(&self, w: &WageVector, tie_tolerance: Option<f64>) -> Result<ZeroNoiseReport> {
        let part = self.partition(w, tie_tolerance)?;
        let demands: Vec<f64> = self
            .firms()
            .iter()
            .zip(w.as_slice())
            .map(|(f, wi)| f.tech.labor_demand(*wi))
            .collect::<Result<_>>()?;
        let perimeter = part.perimeter();
        let max_mu = part.density.iter().cloned().fold(0.0, f64::max);
        let slack = 2.0 * self.grid().spacing() * perimeter * max_mu;
        let home_demand = 1.0 - demands.iter().sum::<f64>();
        let options: Vec<OptionCheck> = std::iter::once(home_demand)
            .chain(demands)
            .enumerate()
            .map(|(j, demand)| {
                let lo = part.mass_strict[j] - slack;
                let hi = part.mass_weak[j] + slack;
                let margin = (demand - lo).min(hi - demand);
                OptionCheck {
                    option: j,
                    demand,
                    mass_strict: part.mass_strict[j],
                    mass_weak: part.mass_weak[j],
                    margin,
                    passed: margin >= 0.0,
                }
            })
            .collect();
        Ok(ZeroNoiseReport {
            wages: w.as_slice().to_vec(),
            tie_tolerance: part.tie_tolerance,
            slack,
            perimeter,
            passed: options.iter().all(|o| o.passed),
            options,
        })
    }
}

pub fn build_partition(
    w: &WageVector,
    params: &ModelParams,
    firms: &[FirmSpec],
    grid: Arc<CityGrid>,
    tie_tolerance: Option<f64>,
) -> Result<Partition> {
    Economy::new(grid, firms.to_vec(), *params)?.partition(w, tie_tolerance)
}

pub fn verify_zero_noise_equilibrium(
    w: &WageVector,
    params: &ModelParams,
    firms: &[FirmSpec],
    grid: Arc<CityGrid>,
) -> Result<ZeroNoiseReport> {
    Economy::new(grid, firms.to_vec(), *params)?.verify_zero_noise(w, None)
}

#[derive(Debug, Clone)]
pub struct LimitStudyOptions {
    /// Strictly decreasing, positive.
    pub sigmas: Vec<f64>,
    pub solver: SolverConfig,
    /// Nodes whose two best net values differ by less than this count as
    /// near a tie when measuring how sharp the shares are.
    pub tie_band: f64,
    /// Retries a failing sigma with up to `2^max_substeps` geometric steps.
    pub max_substeps: usize,
}

impl Default for LimitStudyOptions {
    fn default() -> Self {
        LimitStudyOptions {
            sigmas: DEFAULT_SIGMAS.to_vec(),
            solver: SolverConfig::default(),
            tie_band: 0.05,
            max_substeps: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub sigma: f64,
    pub wages: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Max-norm distance to the previous row's wages.
    pub wage_increment: Option<f64>,
    /// `min_x (R_sigma - R_0)`; nonnegative.
    pub sandwich_low: f64,
    /// `max_x (R_sigma - R_0)`.
    pub sandwich_high: f64,
    /// `sigma log(N + 1)`.
    pub sandwich_bound: f64,
    /// Smallest largest-share over nodes away from ties.
    pub min_top_share: f64,
    pub substeps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitStudy {
    pub rows: Vec<LimitRow>,
    /// Zero-noise verification of the last row's wages.
    pub verification: ZeroNoiseReport,
}

impl LimitStudy {
    /// Whether every row satisfies `R_0 <= R_sigma <= R_0 + sigma log(N+1)`.
    pub fn sandwich_holds(&self, tol: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.sandwich_low >= -tol && r.sandwich_high <= r.sandwich_bound + tol)
    }
}

fn top_two(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        if v > a {
            (v, a)
        } else {
            (a, b.max(v))
        }
    })
}

/// Solves the regularised model along `options.sigmas` with warm starts and
/// verifies the last solution against the interval conditions. `params.sigma`
/// is ignored.
pub fn zero_noise_limit_study(
    grid: Arc<CityGrid>,
    firms: &[FirmSpec],
    params: &ModelParams,
    options: &LimitStudyOptions,
) -> Result<LimitStudy> {
    let sig = &options.sigmas;
    if sig.is_empty() || sig.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param("sigmas", "need a nonempty list of positive values"));
    }
    if sig.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::param("sigmas", "must be strictly decreasing"));
    }
    let mut rows: Vec<LimitRow> = Vec::new();
    let mut warm = options.solver.initial_wages.clone();
    let mut last: Option<(Economy, Vec<f64>)> = None;
    let mut prev_sigma: Option<f64> = None;
    for &sigma in sig {
        let ((econ, result), substeps) = continue_to(
            prev_sigma,
            sigma,
            warm.clone(),
            true,
            options.max_substeps,
            |s, w| {
                let econ = Economy::new(grid.clone(), firms.to_vec(), ModelParams { sigma: s, ..*params })?;
                let mut cfg = options.solver.clone();
                cfg.initial_wages = w;
                let res = econ.solve(&cfg)?;
                Ok((econ, res))
            },
            |(_, r)| r.wages.clone(),
        )
        .map_err(|e| annotate(e, sigma))?;
        let hard = econ.hard_revenue_field(&result.wages);
        let gaps: Vec<f64> = result
            .revenue
            .values()
            .iter()
            .zip(&hard)
            .map(|(r, h)| r - h)
            .collect();
        let n = econ.n_firms();
        let w0 = params.w0;
        let mut min_top = 1.0f64;
        for k in 0..grid.len() {
            let values = std::iter::once(w0).chain((0..n).map(|i| result.wages[i] - econ.cost_row(i)[k]));
            let (a, b) = top_two(values);
            if a - b >= options.tie_band {
                let top = result.shares.iter().map(|s| s.values()[k]).fold(0.0, f64::max);
                min_top = min_top.min(top);
            }
        }
        let increment = rows.last().map(|r| {
            r.wages
                .iter()
                .zip(&result.wages)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        });
        info!(
            "sigma {sigma}: wages {:?}, residual {:.2e}",
            result.wages, result.residual_norm
        );
        rows.push(LimitRow {
            sigma,
            wages: result.wages.clone(),
            residual_norm: result.residual_norm,
            iterations: result.iterations,
            wage_increment: increment,
            sandwich_low: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            sandwich_high: gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            sandwich_bound: sigma * ((n + 1) as f64).ln(),
            min_top_share: min_top,
            substeps,
        });
        warm = Some(result.wages.clone());
        prev_sigma = Some(sigma);
        last = Some((econ, result.wages));
    }
    let (econ, wages) = last.expect("nonempty sigma list");
    let verification = econ.verify_zero_noise(&WageVector::new(wages)?, None)?;
    Ok(LimitStudy { rows, verification })
}

fn annotate(err: Error, sigma: f64) -> Error {
    match err {
        Error::NotConverged(mut rep) => {
            rep.events.push(format!("limit study stopped at sigma = {sigma}"));
            Error::NotConverged(rep)
        }
        other => other,
    }
}
