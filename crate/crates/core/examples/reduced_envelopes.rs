//! Schrodinger-Boltzmann limit: a resonant envelope pumping populations, plus the
//! nonlinear rate as a function of detuning.
//!
//! cargo run --release --example reduced_envelopes

use std::collections::BTreeMap;

use maxbloch::grid::Grid;
use maxbloch::profile_builder::{lift_initial_data, tm_field, InitialData};
use maxbloch::quantum::LevelSystem;
use maxbloch::reduced_model::{nonlinear_pauli_rates, ReducedModel};
use maxbloch::spectral::{Mode, PhaseLattice};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn system() -> maxbloch::Result<LevelSystem> {
    let g = Complex64::new(0.5, 0.0);
    let o = Complex64::default();
    LevelSystem::tm(vec![1.0, 2.0], &[o, g, g, o], DMatrix::zeros(2, 2), 0.1, 1.0)
}

fn main() -> maxbloch::Result<()> {
    let sys = system()?;
    println!("detuning  upper-level rate");
    for i in -4..=4 {
        let k = 1.0 + 0.05 * i as f64;
        let lat = PhaseLattice::new(vec![k], 1.0, 1e-3, 2)?;
        let amp = Complex64::new(0.2, 0.0);
        let o = Complex64::default();
        let mut e = BTreeMap::new();
        e.insert(Mode::d1(1, 1), [vec![o], vec![o], vec![amp]]);
        e.insert(Mode::d1(-1, -1), [vec![o], vec![o], vec![amp.conj()]]);
        let mut n = BTreeMap::new();
        n.insert(Mode::zero(1), vec![vec![Complex64::new(1.0, 0.0)], vec![o]]);
        let r = nonlinear_pauli_rates(&sys, &lat, &e, &n);
        println!("{:+.2}      {:.6}", k - 1.0, r[&Mode::zero(1)][1][0].re);
    }

    let lat = PhaseLattice::new(vec![1.0], 1.0, 0.1, 4)?;
    let grid = Grid::new(vec![32, 32], vec![20.0, 20.0])?;
    let (xs, ys) = (grid.coords(0), grid.coords(1));
    let env: Vec<Complex64> = xs
        .iter()
        .flat_map(|x| ys.iter().map(move |y| (x, y)))
        .map(|(x, y)| Complex64::new(0.3 * (-((x - 10.0).powi(2) + (y - 10.0).powi(2)) / 8.0).exp(), 0.0))
        .collect();
    let mut init = InitialData::default();
    for beta in [1_i64, -1] {
        let by = env.iter().map(|z| -z).collect();
        init.fields.insert(vec![beta], tm_field(grid.len(), None, Some(by), Some(env.clone())));
    }
    let one = vec![Complex64::new(1.0, 0.0); grid.len()];
    init.populations.insert(vec![0], vec![one, grid.zeros()]);
    let mut state = lift_initial_data(&sys, &lat, &grid, &init)?.leading_state(0)?;
    let model = ReducedModel::new(&sys, &lat, &grid)?;
    let dt = 0.01;
    for step in 0..=400 {
        if step % 100 == 0 {
            let upper = &state.pop_modes[&Mode::zero(1)][1];
            let peak = upper.iter().fold(0.0_f64, |m, z| m.max(z.re));
            println!(
                "t = {:4.1}: peak upper population {peak:.5}, total population {:.12}",
                step as f64 * dt,
                state.total_population(1)
            );
        }
        model.step(&mut state, dt)?;
    }
    Ok(())
}
