//! Stiff singular solver on a prepared TM packet: observables over time.
//!
//! cargo run --release --example stiff_packet

use maxbloch::grid::Grid;
use maxbloch::profile_builder::{lift_initial_data, tm_field, InitialData};
use maxbloch::quantum::{gibbs_populations, pauli_from_upper, LevelSystem};
use maxbloch::spectral::PhaseLattice;
use maxbloch::stiff_solver::{initialize, singular_grid, DataMode, StiffSolver};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn packet(grid: &Grid, amp: f64, width: f64) -> Vec<Complex64> {
    let (xs, ys) = (grid.coords(0), grid.coords(1));
    let (cx, cy) = (grid.lengths()[0] / 2.0, grid.lengths()[1] / 2.0);
    xs.iter()
        .flat_map(|x| ys.iter().map(move |y| (x, y)))
        .map(|(x, y)| Complex64::new(amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (width * width)).exp(), 0.0))
        .collect()
}

fn main() -> maxbloch::Result<()> {
    let omega = vec![1.0, 2.0];
    let w = pauli_from_upper(&omega, &DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.0]), 1.0);
    let g = Complex64::new(0.5, 0.0);
    let o = Complex64::default();
    let sys = LevelSystem::tm(omega, &[o, g, g, o], w, 1.0, 1.0)?;
    let lat = PhaseLattice::new(vec![2.0_f64.sqrt()], 1.0, 0.1, 8)?;
    let tgrid = Grid::new(vec![32, 32], vec![20.0, 20.0])?;
    let grid = singular_grid(32, 32, 16, 20.0, 20.0, 1)?;

    let mut init = InitialData::default();
    for beta in [1_i64, -1] {
        let ez = packet(&tgrid, 0.5, 2.0);
        let by = ez.iter().map(|z| -z).collect();
        init.fields.insert(vec![beta], tm_field(tgrid.len(), None, Some(by), Some(ez)));
    }
    let pops = gibbs_populations(&sys);
    init.populations.insert(vec![0], pops.iter().map(|&p| vec![Complex64::new(p, 0.0); tgrid.len()]).collect());
    let lifted = lift_initial_data(&sys, &lat, &tgrid, &init)?;

    let eps = 0.01;
    let mut state = initialize(&lifted, None, eps, &grid, DataMode::Prepared)?;
    let solver = StiffSolver::new(&sys, &lat, &grid, eps)?;
    let dt = (0.05 * eps).min(solver.dt_max());
    println!("eps = {eps}, dt = {dt:.2e}, dt_max = {:.2e}", solver.dt_max());
    println!("{:>6} {:>10} {:>12} {:>14} {:>10}", "t", "sup|E|", "energy", "trace", "coherence");
    let series = solver.run(&mut state, 0.2, dt, 40, |_| {})?;
    for o in series {
        println!("{:6.3} {:10.5} {:12.6} {:14.10} {:10.2e}", o.t, o.sup_norm_e, o.l2_energy, o.trace_rho, o.coh_norm);
    }
    Ok(())
}
