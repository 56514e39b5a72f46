//! Finite-window averages along the transverse bicharacteristics: a wave is fixed by
//! the average of its own branch and washed out by the others.
//!
//! cargo run --release --example averaging

use maxbloch::grid::Grid;
use maxbloch::harness::sublinearity_diagnostic;
use maxbloch::spectral::{semigroup_m2, zero_field6, Branch};
use num_complex::Complex64;

fn main() -> maxbloch::Result<()> {
    let grid = Grid::new(vec![32, 32], vec![25.0, 25.0])?;
    let (ys, zs) = (grid.coords(0), grid.coords(1));
    // Localized Ex pulse: equal parts on the two wave branches, nothing on the kernel.
    let mut u0 = zero_field6(&grid);
    for (i, y) in ys.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            let r2 = (y - 12.5).powi(2) + (z - 12.5).powi(2);
            u0[3][i * zs.len() + j] = Complex64::new((-r2 / 4.0).exp(), 0.0);
        }
    }
    let step = 0.1;
    let samples: Vec<_> = (0..=400).map(|j| semigroup_m2(&grid, &u0, j as f64 * step)).collect::<Result<_, _>>()?;
    let windows = [5.0, 10.0, 20.0, 40.0];
    for branch in [Branch::Plus, Branch::Minus, Branch::Zero] {
        let report = sublinearity_diagnostic(branch, &grid, step, &windows, |j| samples[j].clone())?;
        let line: Vec<String> = report.iter().map(|(s, n)| format!("S={s}: {n:.4e}")).collect();
        println!("{branch:?}: {}", line.join("  "));
    }
    Ok(())
}
