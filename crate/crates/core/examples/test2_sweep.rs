//! Remote-productivity sweep of the teleworking model on the line city.

use std::time::Instant;

use cityeq::telework::TeleEconomy;
use cityeq::{presets, SolverConfig};

fn main() -> cityeq::Result<()> {
    let square = std::env::args().any(|a| a == "--square");
    let (grid, bs): (_, Vec<f64>) = if square {
        (presets::square_grid(presets::SQUARE_NODES)?, presets::TEST3_BS.to_vec())
    } else {
        (presets::line_grid(presets::LINE_NODES)?, presets::TEST2_BS.to_vec())
    };
    let mut warm: Option<Vec<f64>> = None;
    for b in bs {
        let firms = if square { presets::test3_firms(b) } else { presets::test2_firms(b) };
        let eco = TeleEconomy::new(grid.clone(), firms, presets::telework_params())?;
        let mut cfg = SolverConfig::default();
        if let Some(w) = &warm {
            if w.len() == eco.n_unknowns() {
                cfg.initial_wages = Some(w.clone());
            } else {
                // onsite wages from the reduced solve, remote wages at the home wage
                cfg.initial_wages = Some(w.iter().flat_map(|&x| [x, 12.0]).collect());
            }
        }
        let t = Instant::now();
        let eq = eco.solve(&cfg)?;
        let n = eq.n_firms();
        println!(
            "B={b:<4} onsite={:.5?} remote={:.6?} m_on={:.4?} m_rem={:.4?} home={:.4} resid={:.1e} it={} ({:.2?})",
            (0..n).map(|i| eq.onsite_wage(i)).collect::<Vec<_>>(),
            (0..n).map(|i| eq.remote_wage(i)).collect::<Vec<_>>(),
            (0..n).map(|i| eq.onsite_mass(i)).collect::<Vec<_>>(),
            (0..n).map(|i| eq.remote_mass(i)).collect::<Vec<_>>(),
            eq.result.home_mass(),
            eq.result.residual_norm,
            eq.result.iterations,
            t.elapsed()
        );
        warm = Some(eq.result.wages.clone());
    }
    Ok(())
}
