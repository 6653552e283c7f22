//! Semi-discrete spatial equilibrium: firms at fixed workplaces, workers spread
//! over a city, logit commuting choices, and residential density and rents
//! pinned down by housing-market clearing.

mod continuation;
pub mod economy;
pub mod equilibrium;
pub mod error;
pub mod format;
pub mod grid;
pub mod hybrid;
mod market;
pub mod presets;
pub mod scenario;
pub mod selfcheck;
pub mod telework;
pub mod zero_noise;

pub use economy::{
    choice_shares, density_from_revenue, net_values, rent_from_density, revenue_softmax,
    CobbDouglas, CommuteCost, FirmSpec, ModelParams, ScaledDistance, WageVector,
};
pub use equilibrium::{
    coupling_diagnostics, ChoiceOption, Economy, EquilibriumResult, FixedPointConfig,
    SolverConfig, UniquenessReport, WageBox,
};
pub use error::{Error, Result};
pub use grid::{CityGrid, Field, Interval, Point};
