//! Solves the preference-exponent sweep on the line city and prints wages and masses.

use std::time::Instant;

use cityeq::{presets, Economy, SolverConfig};

fn main() -> cityeq::Result<()> {
    let grid = presets::line_grid(presets::LINE_NODES)?;
    let mut warm: Option<Vec<f64>> = None;
    for theta in presets::TEST1_THETAS {
        let eco = Economy::new(grid.clone(), presets::test1_firms(), presets::test1_params(theta))?;
        let mut cfg = SolverConfig::default();
        cfg.initial_wages = warm.clone();
        let t = Instant::now();
        let res = eco.solve(&cfg)?;
        println!(
            "theta={theta:<5} wages={:.6?} masses={:.6?} home={:.4} resid={:.1e} iters={} ({:.2?})",
            res.wages,
            res.supplied(),
            res.home_mass(),
            res.residual_norm,
            res.iterations,
            t.elapsed()
        );
        warm = Some(res.wages.clone());
    }
    Ok(())
}
