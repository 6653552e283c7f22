//! Shared fixtures for the criterion benches.

use cityeq::presets::{line_grid, square_grid, telework_params, test1_firms, test1_params, test2_firms, test3_firms};
use cityeq::telework::TeleEconomy;
use cityeq::Economy;

/// The three-firm line city on `nodes` grid points.
pub fn line_city(theta: f64, nodes: usize) -> Economy {
    Economy::new(line_grid(nodes).expect("grid"), test1_firms(), test1_params(theta)).expect("economy")
}

/// Teleworking line city with remote productivity `b`.
pub fn tele_line(b: f64, nodes: usize) -> TeleEconomy {
    TeleEconomy::new(line_grid(nodes).expect("grid"), test2_firms(b), telework_params()).expect("economy")
}

/// Teleworking square city with remote productivity `b`.
pub fn tele_square(b: f64, nodes_per_axis: usize) -> TeleEconomy {
    TeleEconomy::new(square_grid(nodes_per_axis).expect("grid"), test3_firms(b), telework_params())
        .expect("economy")
}
