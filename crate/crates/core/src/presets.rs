//! Parameter sets of the three reference experiments.
//!
//! Test 1: three Cobb-Douglas firms on `[-10, 10]`, preference exponent swept.
//! Test 2: the same city with two-input (on-site/remote) technologies, remote
//! productivity `B` swept. Test 3: Test 2 on the square `[-10, 10]^2`.

use std::sync::Arc;

use crate::economy::{CobbDouglas, FirmSpec, ModelParams};
use crate::error::Result;
use crate::grid::CityGrid;

pub const PRODUCTIVITY: f64 = 1e4;
pub const BETA: f64 = 0.7;
pub const CES_ALPHA: f64 = 0.9;
pub const HOME_WAGE: f64 = 12.0;
pub const SIGMA: f64 = 0.1;
pub const TELEWORK_THETA: f64 = 0.7;

pub const LINE_LOCATIONS: [f64; 3] = [-7.0, 0.0, 3.0];
pub const SQUARE_LOCATIONS: [[f64; 2]; 3] = [[-7.0, 7.0], [0.0, 0.0], [3.0, -3.0]];

pub const TEST1_THETAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.99];
pub const TEST2_BS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const TEST3_BS: [f64; 5] = [0.0, 0.33, 0.5, 0.66, 1.0];

/// Default resolutions: `N_h = 400` steps on a line, 100 per axis on a square.
pub const LINE_NODES: usize = 401;
pub const SQUARE_NODES: usize = 101;

pub fn line_grid(nodes: usize) -> Result<Arc<CityGrid>> {
    Ok(Arc::new(CityGrid::interval(-10.0, 10.0, nodes)?))
}

pub fn square_grid(nodes_per_axis: usize) -> Result<Arc<CityGrid>> {
    Ok(Arc::new(CityGrid::rectangle(
        (-10.0, 10.0),
        (-10.0, 10.0),
        nodes_per_axis,
    )?))
}

pub fn test1_firms() -> Vec<FirmSpec> {
    let tech = CobbDouglas {
        productivity: PRODUCTIVITY,
        beta: BETA,
    };
    LINE_LOCATIONS.iter().map(|&y| FirmSpec::at(y, tech)).collect()
}

pub fn test1_params(theta: f64) -> ModelParams {
    ModelParams {
        theta,
        sigma: SIGMA,
        w0: HOME_WAGE,
        commute_scale: 0.5,
    }
}

pub fn telework_tech(remote_productivity: f64) -> crate::telework::Ces2 {
    crate::telework::Ces2 {
        productivity: PRODUCTIVITY,
        remote_productivity,
        alpha: CES_ALPHA,
        beta: BETA,
    }
}

pub fn test2_firms(remote_productivity: f64) -> Vec<crate::telework::TeleFirmSpec> {
    LINE_LOCATIONS
        .iter()
        .map(|&y| crate::telework::TeleFirmSpec {
            location: [y, 0.0],
            tech: telework_tech(remote_productivity),
        })
        .collect()
}

pub fn test3_firms(remote_productivity: f64) -> Vec<crate::telework::TeleFirmSpec> {
    SQUARE_LOCATIONS
        .iter()
        .map(|&y| crate::telework::TeleFirmSpec {
            location: y,
            tech: telework_tech(remote_productivity),
        })
        .collect()
}

pub fn telework_params() -> ModelParams {
    test1_params(TELEWORK_THETA)
}
