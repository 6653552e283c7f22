//! Node-wise logit assembly shared by the base and teleworking models.
//!
//! Option 0 is always "stay home" (wage `w0`, no commute). Every other option
//! carries a wage unknown and a per-node cost row; remote options have no row.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::economy::{density_in_place, smooth_max_and_shares};
use crate::grid::CityGrid;

#[derive(Debug, Clone)]
pub(crate) struct ChoiceSet {
    pub grid: Arc<CityGrid>,
    pub costs: Vec<Option<Vec<f64>>>,
    pub w0: f64,
    pub sigma: f64,
    pub alpha: f64,
}

/// Everything the logit model implies for one wage vector.
#[derive(Debug, Clone)]
pub(crate) struct MarketState {
    pub revenue: Vec<f64>,
    pub density: Vec<f64>,
    /// `shares[j][k]`: probability that a resident of node `k` picks option `j`.
    pub shares: Vec<Vec<f64>>,
    /// Integral of `shares[j] * density`; entry 0 is the home mass.
    pub supply: Vec<f64>,
}

/// Quantities of the convex problem `sum pi_i + int R dmu` for a frozen density.
#[derive(Debug, Clone)]
pub(crate) struct FrozenDensityEval {
    pub mean_revenue: f64,
    /// Supply of the non-home options.
    pub supply: Vec<f64>,
    /// `int (diag(s) - s s^T) mu`, restricted to non-home options, already divided by sigma.
    pub revenue_hessian: DMatrix<f64>,
}

impl ChoiceSet {
    pub fn n_options(&self) -> usize {
        self.costs.len() + 1
    }

    fn fill_values(&self, k: usize, wages: &[f64], buf: &mut [f64]) {
        buf[0] = self.w0;
        for (j, (w, c)) in wages.iter().zip(&self.costs).enumerate() {
            buf[j + 1] = match c {
                Some(row) => w - row[k],
                None => *w,
            };
        }
    }

    pub fn evaluate(&self, wages: &[f64]) -> MarketState {
        debug_assert_eq!(wages.len(), self.costs.len());
        let n = self.grid.len();
        let m = self.n_options();
        let mut values = vec![0.0; m];
        let mut node_shares = vec![0.0; m];
        let mut revenue = vec![0.0; n];
        let mut shares = vec![vec![0.0; n]; m];
        for k in 0..n {
            self.fill_values(k, wages, &mut values);
            revenue[k] = smooth_max_and_shares(&values, self.sigma, &mut node_shares);
            for j in 0..m {
                shares[j][k] = node_shares[j];
            }
        }
        let mut density = vec![0.0; n];
        density_in_place(&self.grid, &revenue, self.alpha, &mut density);
        let supply = shares
            .iter()
            .map(|s| {
                self.grid
                    .weighted_sum(s.iter().zip(&density).map(|(a, b)| a * b))
            })
            .collect();
        MarketState {
            revenue,
            density,
            shares,
            supply,
        }
    }

    pub fn evaluate_frozen(&self, wages: &[f64], density: &[f64]) -> FrozenDensityEval {
        let n = self.grid.len();
        let m = self.n_options();
        let nw = m - 1;
        let mut values = vec![0.0; m];
        let mut s = vec![0.0; m];
        let mut mean_revenue = 0.0;
        let mut supply = vec![0.0; nw];
        let mut hess = DMatrix::zeros(nw, nw);
        let weights = self.grid.weights();
        for k in 0..n {
            self.fill_values(k, wages, &mut values);
            let r = smooth_max_and_shares(&values, self.sigma, &mut s);
            let wm = weights[k] * density[k];
            mean_revenue += wm * r;
            for a in 0..nw {
                let sa = s[a + 1];
                supply[a] += wm * sa;
                hess[(a, a)] += wm * sa;
                for b in 0..nw {
                    hess[(a, b)] -= wm * sa * s[b + 1];
                }
            }
        }
        hess /= self.sigma;
        FrozenDensityEval {
            mean_revenue,
            supply,
            revenue_hessian: hess,
        }
    }
}
