//! Uniform tensor grids over a rectangular city and trapezoid-rule integration.
//!
//! Nodes are stored row-major with axis 0 varying fastest, so a 2D node
//! `(i, j)` lives at index `i + j * nodes_per_axis`. The quadrature weights are
//! the tensor product of composite trapezoid weights (`h/2` at the two ends of
//! an axis, `h` inside), computed once at construction.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig10;

/// Coordinates of a point of the city. 1D grids leave the second entry at 0.
pub type Point = [f64; 2];

/// Euclidean distance between two points.
pub fn distance(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityGrid {
    dimension: usize,
    bounds: Vec<Interval>,
    nodes_per_axis: usize,
    spacing: f64,
    spacings: Vec<f64>,
    nodes: Vec<Point>,
    weights: Vec<f64>,
}

fn axis_coords(iv: Interval, n: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let steps = n - 1;
    let h = iv.length() / steps as f64;
    let coords = (0..n)
        .map(|k| {
            if k == steps {
                iv.hi
            } else {
                iv.lo + k as f64 * h
            }
        })
        .collect();
    let weights = (0..n)
        .map(|k| if k == 0 || k == steps { 0.5 * h } else { h })
        .collect();
    (h, coords, weights)
}

impl CityGrid {
    /// Builds a uniform grid with `nodes_per_axis` nodes along every axis.
    pub fn new(bounds: &[Interval], nodes_per_axis: usize) -> Result<Self> {
        let dimension = bounds.len();
        if !(1..=2).contains(&dimension) {
            return Err(Error::param(
                "dimension",
                format!("expected 1 or 2 axes, got {dimension}"),
            ));
        }
        for (axis, iv) in bounds.iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo >= iv.hi {
                return Err(Error::InvalidDomain {
                    axis,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        if nodes_per_axis < 2 {
            return Err(Error::InvalidResolution(nodes_per_axis));
        }

        let axes: Vec<_> = bounds
            .iter()
            .map(|iv| axis_coords(*iv, nodes_per_axis))
            .collect();
        let spacings: Vec<f64> = axes.iter().map(|a| a.0).collect();
        let (nodes, weights) = if dimension == 1 {
            let (_, xs, ws) = &axes[0];
            (xs.iter().map(|&x| [x, 0.0]).collect(), ws.clone())
        } else {
            let (_, xs, wx) = &axes[0];
            let (_, ys, wy) = &axes[1];
            let mut nodes = Vec::with_capacity(xs.len() * ys.len());
            let mut weights = Vec::with_capacity(xs.len() * ys.len());
            for (y, wyj) in ys.iter().zip(wy) {
                for (x, wxi) in xs.iter().zip(wx) {
                    nodes.push([*x, *y]);
                    weights.push(wxi * wyj);
                }
            }
            (nodes, weights)
        };

        Ok(CityGrid {
            dimension,
            bounds: bounds.to_vec(),
            nodes_per_axis,
            spacing: spacings.iter().cloned().fold(0.0, f64::max),
            spacings,
            nodes,
            weights,
        })
    }

    pub fn interval(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::new(&[Interval::new(lo, hi)], nodes)
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), nodes_per_axis: usize) -> Result<Self> {
        Self::new(
            &[Interval::new(x.0, x.1), Interval::new(y.0, y.1)],
            nodes_per_axis,
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    /// Largest axis step `h`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn axis_spacing(&self, axis: usize) -> f64 {
        self.spacings[axis]
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        self.bounds.iter().map(Interval::length).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.bounds
            .iter()
            .enumerate()
            .all(|(axis, iv)| iv.contains(p[axis]))
            && (self.dimension == 2 || p[1] == 0.0)
    }

    /// Indices of the grid neighbours of node `k` (2 in 1D, up to 4 in 2D).
    pub fn neighbours(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.nodes_per_axis;
        let (i, j) = (k % n, k / n);
        let dim = self.dimension;
        let cands: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        cands.into_iter().filter_map(move |(di, dj)| {
            if dim == 1 && dj != 0 {
                return None;
            }
            let (ii, jj) = (i as isize + di, j as isize + dj);
            let rows = if dim == 1 { 1 } else { n as isize };
            if ii < 0 || jj < 0 || ii >= n as isize || jj >= rows {
                None
            } else {
                Some(ii as usize + jj as usize * n)
            }
        })
    }

    /// Trapezoid-rule integral of node values.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.weights.len() {
            return Err(Error::NumericInput(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                self.weights.len()
            )));
        }
        let mut acc = 0.0;
        for (k, (w, v)) in self.weights.iter().zip(values).enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericInput(format!(
                    "non-finite value {v} at node {k}"
                )));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Unchecked weighted sum used on solver hot paths.
    pub(crate) fn weighted_sum(&self, values: impl Iterator<Item = f64>) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    #[doc(hidden)]
    pub fn weights_mut_for_testing(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

/// Node-valued real function on a grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<CityGrid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<CityGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::NumericInput(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn from_fn(grid: Arc<CityGrid>, f: impl Fn(&Point) -> f64) -> Self {
        let values = grid.nodes().iter().map(f).collect();
        Field { grid, values }
    }

    pub fn constant(grid: Arc<CityGrid>, v: f64) -> Self {
        let values = vec![v; grid.len()];
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<CityGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integrate(&self) -> Result<f64> {
        self.grid.integrate(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes `x[,y],value` rows in node order.
    pub fn write_csv<W: Write>(&self, out: W, column: &str) -> Result<()> {
        write_node_table(out, &self.grid, &[(column, &self.values)])
    }
}

/// Writes one row per grid node: the coordinates followed by the given columns.
pub fn write_node_table<W: Write>(
    out: W,
    grid: &CityGrid,
    columns: &[(&str, &[f64])],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec!["x"];
    if grid.dimension() == 2 {
        header.push("y");
    }
    header.extend(columns.iter().map(|c| c.0));
    wtr.write_record(&header)?;
    for (k, p) in grid.nodes().iter().enumerate() {
        let mut row = vec![sig10(p[0])];
        if grid.dimension() == 2 {
            row.push(sig10(p[1]));
        }
        row.extend(columns.iter().map(|c| sig10(c.1[k])));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
