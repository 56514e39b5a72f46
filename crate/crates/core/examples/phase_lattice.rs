//! Harmonic classes, small-divisor floors and resonances of a two-phase lattice.
//!
//! cargo run --example phase_lattice

use maxbloch::quantum::{pauli_from_upper, LevelSystem};
use maxbloch::spectral::{classify_mode, diffraction_coeff, group_velocity, resonant_set, ModeClass, PhaseLattice};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn main() -> maxbloch::Result<()> {
    let lat = PhaseLattice::new(vec![1.0, 2.0_f64.sqrt()], 1.0, 0.1, 2)?;
    let mut counts = std::collections::BTreeMap::new();
    for mode in lat.modes() {
        let class = classify_mode(&lat, &mode);
        *counts.entry(class.label()).or_insert(0) += 1;
        if class.is_wave() && class != ModeClass::CZero && mode.alpha0.iter().all(|&a| a >= 0) {
            println!(
                "{mode}: {:<7} v = {:+} a = {:+.4} divisor floor {:.4}",
                class.label(),
                group_velocity(&lat, &mode)?,
                diffraction_coeff(&lat, &mode)?,
                lat.divisor_floor(&mode.alpha1)
            );
        }
    }
    println!("class counts: {counts:?}");

    // Level gaps 1 and 1 + sqrt(2) are hit by alpha1 = (1, 0) and (1, 1).
    let omega = vec![0.0, 1.0, 2.0 + 2.0_f64.sqrt()];
    let w = pauli_from_upper(&omega, &DMatrix::zeros(3, 3), 1.0);
    let g = Complex64::new(0.3, 0.0);
    let o = Complex64::default();
    let sys = LevelSystem::tm(omega, &[o, g, g, g, o, g, g, g, o], w, 0.2, 1.0)?;
    // Diagonal entries resonate trivially at alpha1 = 0 and are skipped.
    for r in resonant_set(&sys, &lat, None)?.into_iter().filter(|r| r.m != r.n) {
        println!("resonance: levels ({}, {}) at alpha1 = {:?}", r.m, r.n, r.alpha1);
    }
    Ok(())
}
