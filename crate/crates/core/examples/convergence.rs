//! Residual and stiff-error convergence on a coarse version of the golden setup.
//!
//! cargo run --release --example convergence

use std::path::Path;

use maxbloch::config::parse_config;
use maxbloch::harness::{convergence_study, transverse_grid, Study};
use maxbloch::stiff_solver::singular_grid;

fn main() -> maxbloch::Result<()> {
    let cfg = parse_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/golden_tm.json"))?;
    let mut setup = cfg.convergence_setup()?;
    setup.grid = singular_grid(16, 16, 8, 20.0, 20.0, 1)?;
    setup.init = cfg.initial_data(&transverse_grid(&setup.grid)?)?;
    setup.epsilons = vec![0.04, 0.02, 0.01, 0.005];
    setup.t_star = 0.25;
    let report = convergence_study(&setup, Study::Full)?;
    println!("{:>8} {:>12} {:>12}", "eps", "residual", "error");
    for i in 0..report.epsilons.len() {
        println!("{:>8} {:>12.4e} {:>12.4e}", report.epsilons[i], report.residual_norms[i], report.error_norms[i]);
    }
    for (name, fit) in [("residual", report.residual_fit), ("error", report.error_fit)] {
        if let Some(f) = fit {
            println!("{name} slope {:.3} (95% interval [{:.3}, {:.3}])", f.slope, f.ci_low, f.ci_high);
        }
    }
    Ok(())
}
