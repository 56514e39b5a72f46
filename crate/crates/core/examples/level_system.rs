//! Three-level species: detailed-balance rates, Gibbs state and relaxation.
//!
//! cargo run --example level_system

use maxbloch::quantum::{gibbs_state, pauli_from_upper, relaxation_q, DensityMatrix, LevelSystem};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn main() -> maxbloch::Result<()> {
    let omega = vec![0.0, 0.7, 1.9];
    let upper = DMatrix::from_row_slice(3, 3, &[0.0, 0.2, 0.05, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0]);
    let temperature = 0.8;
    let w = pauli_from_upper(&omega, &upper, temperature);
    let z = Complex64::new(0.4, 0.0);
    let gz = [
        Complex64::default(), z, z * 0.5,
        z, Complex64::default(), z,
        z * 0.5, z, Complex64::default(),
    ];
    let sys = LevelSystem::tm(omega, &gz, w.clone(), 0.5, temperature)?;
    println!("rate matrix W:\n{w:.4}");

    let gibbs = gibbs_state(&sys);
    println!("Gibbs populations: {:.4?}", gibbs.populations());
    println!("|Q(Gibbs)| = {:.2e}", relaxation_q(&sys, &gibbs).0.norm());

    // Relax an inverted state with explicit Euler steps of d(rho)/dt = Q(rho).
    let mut rho = DensityMatrix::from_diagonal(&[0.0, 0.0, 1.0]);
    rho.0[(0, 2)] = Complex64::new(0.2, 0.0);
    rho.0[(2, 0)] = Complex64::new(0.2, 0.0);
    let dt = 0.01;
    for step in 0..=2000 {
        if step % 500 == 0 {
            println!(
                "t = {:5.2}: populations {:.4?}, |rho_02| = {:.2e}, trace {:.12}",
                step as f64 * dt,
                rho.populations(),
                rho.0[(0, 2)].norm(),
                rho.trace().re
            );
        }
        let q = relaxation_q(&sys, &rho);
        rho = DensityMatrix(&rho.0 + q.0 * Complex64::new(dt, 0.0));
    }
    Ok(())
}
