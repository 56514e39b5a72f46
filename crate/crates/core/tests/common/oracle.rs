//! Dense reference for the nonlinear Pauli rates, built directly from double commutators.

use std::collections::BTreeMap;

use maxbloch::quantum::{pauli_from_upper, LevelSystem};
use maxbloch::reduced_model::Vec3Field;
use maxbloch::spectral::{classify_mode, Mode, ModeClass, PhaseLattice};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::c;

pub type CMat = DMatrix<Complex64>;

pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> LevelSystem {
    let mut omega: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    omega.sort_by(f64::total_cmp);
    let mut dipole = vec![[c(0.0, 0.0); 3]; n * n];
    for m in 0..n {
        for k in m..n {
            for comp in 0..3 {
                let z = if m == k {
                    c(rng.gen_range(-0.5..0.5), 0.0)
                } else {
                    c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
                };
                dipole[m * n + k][comp] = z;
                dipole[k * n + m][comp] = z.conj();
            }
        }
    }
    let upper = DMatrix::from_fn(n, n, |i, j| if i < j { rng.gen_range(0.0..0.3) } else { 0.0 });
    let w = pauli_from_upper(&omega, &upper, 1.0);
    LevelSystem::new(omega, dipole, w, rng.gen_range(0.2..2.0), 1.0).unwrap()
}

/// `E . Gamma` as a dense matrix.
pub fn coupling(sys: &LevelSystem, e: [Complex64; 3]) -> CMat {
    let n = sys.n_levels();
    CMat::from_fn(n, n, |m, k| {
        let g = sys.dipole(m, k);
        e[0] * g[0] + e[1] * g[1] + e[2] * g[2]
    })
}

pub fn resolvent(sys: &LevelSystem, lat: &PhaseLattice, mu: &Mode, x: &CMat) -> CMat {
    let w = sys.omega();
    let s = lat.dot(&mu.alpha1);
    CMat::from_fn(x.nrows(), x.ncols(), |m, k| {
        x[(m, k)] / c(sys.gamma(), w[m] - w[k] - s)
    })
}

/// Brute-force `-[G_a, R_mu [G_a', N_b]]_d` summed over all harmonic triples.
pub fn oracle_rates(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    e: &[(Mode, [Complex64; 3])],
    pops: &[(Mode, Vec<f64>)],
) -> BTreeMap<Mode, Vec<Complex64>> {
    let n = sys.n_levels();
    let mut out: BTreeMap<Mode, Vec<Complex64>> = BTreeMap::new();
    for (a, ea) in e {
        let ga = coupling(sys, *ea);
        for (a2, ea2) in e {
            let ga2 = coupling(sys, *ea2);
            for (b, nb) in pops {
                let nmat = CMat::from_diagonal(&nalgebra::DVector::from_iterator(n, nb.iter().map(|&v| c(v, 0.0))));
                let mu = a2.add(b);
                let y = resolvent(sys, lat, &mu, &(&ga2 * &nmat - &nmat * &ga2));
                let tau = a.add(&mu);
                if !matches!(classify_mode(lat, &tau), ModeClass::Mean | ModeClass::CZero) || !lat.contains(&tau) {
                    continue;
                }
                let z = &ga * &y - &y * &ga;
                let acc = out.entry(tau).or_insert_with(|| vec![c(0.0, 0.0); n]);
                for d in 0..n {
                    acc[d] -= z[(d, d)];
                }
            }
        }
    }
    out
}

pub fn to_maps(
    e: &[(Mode, [Complex64; 3])],
    pops: &[(Mode, Vec<f64>)],
) -> (BTreeMap<Mode, Vec3Field>, BTreeMap<Mode, Vec<Vec<Complex64>>>) {
    let em = e
        .iter()
        .map(|(m, v)| (m.clone(), [vec![v[0]], vec![v[1]], vec![v[2]]]))
        .collect();
    let pm = pops
        .iter()
        .map(|(m, v)| (m.clone(), v.iter().map(|&x| vec![c(x, 0.0)]).collect()))
        .collect();
    (em, pm)
}

pub fn resonant_two_level(k: f64) -> (LevelSystem, PhaseLattice) {
    let sys = LevelSystem::tm(
        vec![1.0, 2.0],
        &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        DMatrix::zeros(2, 2),
        0.1,
        1.0,
    )
    .unwrap();
    (sys, PhaseLattice::new(vec![k], 1.0, 1e-3, 2).unwrap())
}

pub fn single_wave(amp: Complex64) -> Vec<(Mode, [Complex64; 3])> {
    let z = c(0.0, 0.0);
    vec![(Mode::d1(1, 1), [z, z, amp]), (Mode::d1(-1, -1), [z, z, amp.conj()])]
}

