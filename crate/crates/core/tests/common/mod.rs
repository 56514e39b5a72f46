#![allow(dead_code)]

pub mod oracle;

use std::f64::consts::PI;

use maxbloch::grid::Grid;
use maxbloch::profile_builder::{tm_field, InitialData};
use maxbloch::quantum::{pauli_from_upper, LevelSystem};
use maxbloch::spectral::{Field6, PhaseLattice};
use maxbloch::stiff_solver::singular_grid;
use nalgebra::DMatrix;
use num_complex::Complex64;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Two-level TM species used by the golden runs.
pub fn golden_system() -> LevelSystem {
    let omega = vec![1.0, 2.0];
    let upper = DMatrix::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.0]);
    let w = pauli_from_upper(&omega, &upper, 1.0);
    LevelSystem::tm(omega, &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)], w, 1.0, 1.0).unwrap()
}

/// Same energies and rates, no coupling to the field.
pub fn uncoupled(sys: &LevelSystem) -> LevelSystem {
    sys.with_dipole(vec![[c(0.0, 0.0); 3]; sys.n_levels() * sys.n_levels()]).unwrap()
}

pub fn without_rates(sys: &LevelSystem) -> LevelSystem {
    let n = sys.n_levels();
    sys.with_pauli(DMatrix::zeros(n, n)).unwrap()
}

pub fn golden_lattice() -> PhaseLattice {
    PhaseLattice::new(vec![2.0_f64.sqrt()], 1.0, 0.1, 8).unwrap()
}

pub fn transverse(nx: usize, ny: usize) -> Grid {
    Grid::new(vec![nx, ny], vec![20.0, 20.0]).unwrap()
}

pub fn singular(nx: usize, ny: usize, nt: usize) -> Grid {
    singular_grid(nx, ny, nt, 20.0, 20.0, 1).unwrap()
}

/// `amp * exp(-|r - center|^2 / width^2)` on a transverse grid, centred in the box.
pub fn gaussian(grid: &Grid, width: f64, amp: Complex64) -> Vec<Complex64> {
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    let (cx, cy) = (grid.lengths()[0] / 2.0, grid.lengths()[1] / 2.0);
    let mut out = Vec::with_capacity(grid.len());
    for x in &xs {
        for y in &ys {
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            out.push(amp * (-r2 / (width * width)).exp());
        }
    }
    out
}

/// Right-moving TM packet at harmonic `+-1` (`By = -Ez`) with uniform populations.
pub fn cplus_packet(grid: &Grid, amp: f64, width: f64, pops: &[f64]) -> InitialData {
    let mut init = InitialData::default();
    let len = grid.len();
    for (beta, a) in [(1_i64, c(amp, 0.0)), (-1, c(amp, 0.0))] {
        let ez = gaussian(grid, width, a);
        let by = ez.iter().map(|z| -z).collect();
        init.fields.insert(vec![beta], tm_field(len, None, Some(by), Some(ez)));
    }
    init.populations
        .insert(vec![0], pops.iter().map(|&p| vec![c(p, 0.0); len]).collect());
    init
}

/// Periodic smooth function on the singular grid from its coordinates `(x, y, theta)`.
pub fn sample3(grid: &Grid, f: impl Fn(f64, f64, f64) -> f64) -> Vec<Complex64> {
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    let nt = grid.shape()[2];
    let mut out = Vec::with_capacity(grid.len());
    for x in &xs {
        for y in &ys {
            for q in 0..nt {
                let th = 2.0 * PI * q as f64 / nt as f64;
                out.push(c(f(*x, *y, th), 0.0));
            }
        }
    }
    out
}

pub fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()))
}

pub fn sup(a: &[Complex64]) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Plus-branch solution of the transverse system whose spectrum sits on the ring
/// `|xi| ~ 2`, sampled at `T + j * step`. Returns the grid and the sampler.
pub fn ring_wave(seed: u64, t0: f64, step: f64) -> (Grid, impl Fn(usize) -> Field6) {
    use maxbloch::grid::{for_each_index, Fft};
    use maxbloch::spectral::m2_spectral;
    use rand::{Rng, SeedableRng};

    let l = 20.0 * 2.0_f64.sqrt();
    let grid = Grid::new(vec![64, 64], vec![l, l]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ky = grid.wavenumbers(0);
    let kz = grid.wavenumbers(1);
    let mut hat: Field6 = std::array::from_fn(|_| grid.zeros());
    let mut radius = vec![0.0; grid.len()];
    for_each_index(grid.shape(), |flat, idx| {
        let (eta, zeta) = (ky[idx[0]], kz[idx[1]]);
        let r = eta.hypot(zeta);
        radius[flat] = r;
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        if r == 0.0 {
            return;
        }
        let amp = (-(r - 2.0).powi(2) / 0.5).exp();
        if amp < 1e-14 {
            return;
        }
        let [_, (_, pp), _] = m2_spectral(eta, zeta).unwrap();
        for c in 0..6 {
            hat[c][flat] = Complex64::from_polar(amp * pp[(c, 3)], phase);
        }
    });
    let fft = Fft::new(&grid);
    let g = grid.clone();
    let sampler = move |j: usize| -> Field6 {
        let t = t0 + j as f64 * step;
        std::array::from_fn(|c| {
            let mut f: Vec<Complex64> = hat[c]
                .iter()
                .zip(&radius)
                .map(|(z, r)| z * Complex64::from_polar(1.0, -r * t))
                .collect();
            fft.inverse(&mut f);
            debug_assert_eq!(f.len(), g.len());
            f
        })
    };
    (grid, sampler)
}

/// `(t, |C(t)|)` from a stiff run started with a uniform coherence of size 0.1 and an
/// electric field of sup norm `e_amp`, sampled over `[0, 5 eps / gamma]`.
pub fn coherence_decay_series(sys: &LevelSystem, lat: &PhaseLattice, eps: f64, e_amp: f64) -> Vec<(f64, f64)> {
    use maxbloch::harness::perturbation_field;
    use maxbloch::quantum::gibbs_populations;
    use maxbloch::stiff_solver::StiffSolver;

    let grid = singular(16, 16, 8);
    let mut st = perturbation_field(&grid, sys.n_levels(), 11, 0.0);
    st.epsilon = eps;
    let smooth = perturbation_field(&grid, sys.n_levels(), 5, e_amp);
    st.e = smooth.e;
    st.set_populations(&gibbs_populations(sys));
    let coh = vec![c(0.1, 0.0); grid.len()];
    st.set_rho_entry(0, 1, &coh);
    st.set_rho_entry(1, 0, &coh);
    let solver = StiffSolver::new(sys, lat, &grid, eps).unwrap();
    let mut series = vec![(0.0, st.coherence_norm())];
    let dt = 0.02 * eps;
    let obs = solver.run(&mut st, 5.0 * eps / sys.gamma(), dt, 5, |_| {}).unwrap();
    series.extend(obs.iter().map(|o| (o.t, o.coh_norm)));
    series
}
