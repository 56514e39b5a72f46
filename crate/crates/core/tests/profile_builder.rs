mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use common::*;
use maxbloch::grid::Grid;
use maxbloch::profile_builder::{
    assemble_on_grid, assemble_uapp, build_corrector1_tm, build_corrector2_tm, evolve_leading,
    lift_initial_data, polarization_defect, tm_field, Component, Family, InitialData, ProfileSet, Provenance,
    Sample, SlotKey,
};
use maxbloch::quantum::{gibbs_populations, LevelSystem};
use maxbloch::reduced_model::ReducedModel;
use maxbloch::spectral::{Mode, PhaseLattice};
use maxbloch::stiff_solver::sample_initial_data;
use maxbloch::Error;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key(j: u8, kappa: u32, mode: Mode, comp: Component) -> SlotKey {
    SlotKey { j, kappa, mode, comp }
}

fn slot<'a>(p: &'a ProfileSet, i: usize, k: &SlotKey) -> Option<&'a Vec<Complex64>> {
    p.frames[i].get(k)
}

#[test]
fn lift_splits_electric_data_between_the_two_waves() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(8, 8);
    let len = grid.len();
    let mut init = InitialData::default();
    init.fields.insert(vec![1], tm_field(len, None, None, Some(vec![c(1.0, 0.0); len])));
    let p = lift_initial_data(&sys, &lat, &grid, &init).unwrap();
    let plus = Mode::d1(1, 1);
    let minus = Mode::d1(1, -1);
    let get = |m: &Mode, comp| slot(&p, 0, &key(0, 0, m.clone(), comp)).unwrap()[0];
    assert!((get(&plus, Component::E(2)) - c(0.5, 0.0)).norm() < 1e-15);
    assert!((get(&minus, Component::E(2)) - c(0.5, 0.0)).norm() < 1e-15);
    assert!((get(&plus, Component::B(1)) - c(-0.5, 0.0)).norm() < 1e-15);
    assert!((get(&minus, Component::B(1)) - c(0.5, 0.0)).norm() < 1e-15);
    assert!(p.frames[0].keys().all(|k| k.mode == plus || k.mode == minus));
    assert!(polarization_defect(&p, 0) < 1e-15);
}

#[test]
fn mean_data_is_copied_and_zero_data_gives_nothing() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(8, 8);
    let len = grid.len();
    let by = gaussian(&grid, 2.0, c(0.3, 0.0));
    let mut init = InitialData::default();
    init.fields.insert(vec![0], tm_field(len, Some(by.clone()), Some(by.clone()), None));
    let p = lift_initial_data(&sys, &lat, &grid, &init).unwrap();
    assert_eq!(slot(&p, 0, &key(0, 0, Mode::zero(1), Component::B(1))), Some(&by));
    assert_eq!(slot(&p, 0, &key(0, 0, Mode::zero(1), Component::B(0))), Some(&by));
    assert_eq!(p.frames[0].len(), 2);

    let z = lift_initial_data(&sys, &lat, &grid, &InitialData::default()).unwrap();
    assert!(z.frames[0].is_empty());
    let mut zero = InitialData::default();
    zero.fields.insert(vec![1], tm_field(len, None, None, None));
    assert!(lift_initial_data(&sys, &lat, &grid, &zero).unwrap().frames[0].is_empty());
}

#[test]
fn lift_rejects_non_resonant_coherence() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(8, 8);
    let mut init = InitialData::default();
    init.coherences.insert((1, 0, vec![1]), vec![c(0.1, 0.0); grid.len()]);
    assert!(matches!(
        lift_initial_data(&sys, &lat, &grid, &init),
        Err(Error::NonLiftable { m: 1, n: 0, .. })
    ));
}

#[test]
fn lift_places_resonant_coherence_at_unit_decay_index() {
    let sys = LevelSystem::tm(
        vec![0.0, 1.0],
        &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        DMatrix::zeros(2, 2),
        0.5,
        1.0,
    )
    .unwrap();
    let lat = PhaseLattice::new(vec![1.0], 1.0, 0.1, 4).unwrap();
    let grid = transverse(8, 8);
    let mut init = InitialData::default();
    let f = vec![c(0.1, 0.02); grid.len()];
    init.coherences.insert((1, 0, vec![2]), f.clone());
    let p = lift_initial_data(&sys, &lat, &grid, &init).unwrap();
    assert_eq!(slot(&p, 0, &key(0, 1, Mode::d1(2, 1), Component::Rho(1, 0))), Some(&f));
    assert_eq!(p.provenance[&(0, 1, Family::Coherence)], Provenance::Lifted);
}

#[test]
fn zero_leading_profile_gives_zero_correctors() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(8, 8);
    let p = lift_initial_data(&sys, &lat, &grid, &InitialData::default()).unwrap();
    let p1 = build_corrector1_tm(&p).unwrap();
    let p2 = build_corrector2_tm(&p1).unwrap();
    assert!(p2.frames[0].is_empty());
    assert_eq!(p2.provenance[&(1, 0, Family::Field)], Provenance::ClosedForm);
    assert_eq!(p2.provenance[&(2, 1, Family::Field)], Provenance::ZeroFreeChoice);
}

/// Eighth-order periodic central difference along `y`.
fn fd_dy(grid: &Grid, f: &[Complex64]) -> Vec<Complex64> {
    let (nx, ny) = (grid.shape()[0], grid.shape()[1]);
    let h = grid.spacing(1);
    let w = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let mut out = vec![c(0.0, 0.0); f.len()];
    for ix in 0..nx {
        for iy in 0..ny {
            let mut acc = c(0.0, 0.0);
            for (s, wk) in w.iter().enumerate() {
                let d = s + 1;
                acc += (f[ix * ny + (iy + d) % ny] - f[ix * ny + (iy + ny - d) % ny]) * *wk;
            }
            out[ix * ny + iy] = acc / h;
        }
    }
    out
}

#[test]
fn magnetic_corrector_is_the_scaled_transverse_derivative() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = Grid::new(vec![16, 256], vec![20.0, 20.0]).unwrap();
    let init = cplus_packet(&grid, 0.5, 2.0, &gibbs_populations(&sys));
    let p = build_corrector1_tm(&lift_initial_data(&sys, &lat, &grid, &init).unwrap()).unwrap();
    for a in [1_i64, -1] {
        let mode = Mode::d1(a, a);
        let e0 = slot(&p, 0, &key(0, 0, mode.clone(), Component::E(2))).unwrap();
        let bx1 = slot(&p, 0, &key(1, 0, mode.clone(), Component::B(0))).unwrap();
        let s = lat.dot(&mode.alpha1);
        let expected: Vec<Complex64> = fd_dy(&grid, e0).iter().map(|z| z / c(0.0, s)).collect();
        let err = max_diff(bx1, &expected);
        assert!(err <= 1e-8, "mode {mode}: {err:e}");
    }
}

#[test]
fn first_coherence_corrector_entry_formula() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(8, 8);
    let len = grid.len();
    let n = gibbs_populations(&sys);
    let amp = c(0.3, -0.1);
    let mut init = InitialData::default();
    init.fields.insert(vec![1], tm_field(len, None, Some(vec![-amp; len]), Some(vec![amp; len])));
    init.populations
        .insert(vec![0], n.iter().map(|&v| vec![c(v, 0.0); len]).collect());
    let p = build_corrector1_tm(&lift_initial_data(&sys, &lat, &grid, &init).unwrap()).unwrap();
    let mode = Mode::d1(1, 1);
    let w = sys.omega();
    for (m, k) in [(0, 1), (1, 0)] {
        let g = sys.dipole(m, k)[2];
        let expected = c(0.0, 1.0) * amp * g * (n[k] - n[m]) / c(sys.gamma(), w[m] - w[k] - lat.k()[0]);
        let got = slot(&p, 0, &key(1, 0, mode.clone(), Component::Rho(m, k))).unwrap();
        assert!(got.iter().all(|z| (z - expected).norm() <= 1e-14), "({m},{k})");
    }
    assert!(!p.frames[0].keys().any(|k| k.j == 1 && matches!(k.comp, Component::Rho(a, b) if a == b)));
}

#[test]
fn uncoupled_second_corrector_has_no_matter_part() {
    let sys = uncoupled(&golden_system());
    let lat = golden_lattice();
    let grid = transverse(16, 16);
    let init = cplus_packet(&grid, 0.5, 2.0, &gibbs_populations(&sys));
    let p = build_corrector2_tm(&build_corrector1_tm(&lift_initial_data(&sys, &lat, &grid, &init).unwrap()).unwrap())
        .unwrap();
    let second: Vec<&SlotKey> = p.frames[0].keys().filter(|k| k.j == 2).collect();
    assert!(!second.is_empty());
    assert!(second.iter().all(|k| matches!(k.comp, Component::B(_) | Component::E(_))));
    assert!(!p.frames[0].keys().any(|k| k.j == 1 && matches!(k.comp, Component::Rho(..))));
}

#[test]
fn mean_field_with_y_average_is_rejected() {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(16, 16);
    let len = grid.len();
    let xs = grid.coords(0);
    let by: Vec<Complex64> = xs
        .iter()
        .flat_map(|x| std::iter::repeat(c((2.0 * PI * x / 20.0).sin(), 0.0)).take(16))
        .collect();
    let mut init = InitialData::default();
    init.fields.insert(vec![0], tm_field(len, None, Some(by), None));
    let p = lift_initial_data(&sys, &lat, &grid, &init).unwrap();
    assert!(matches!(build_corrector1_tm(&p), Err(Error::Profile(_))));
}

#[test]
fn lift_then_assemble_round_trip() {
    let sys = golden_system();
    let lat = golden_lattice();
    let tgrid = transverse(16, 16);
    let grid = singular(16, 16, 16);
    let len = tgrid.len();
    let mut init = InitialData::default();
    for (beta, a) in [(1_i64, c(0.4, 0.1)), (2, c(0.0, 0.2))] {
        let ez = gaussian(&tgrid, 2.0, a);
        let by = gaussian(&tgrid, 3.0, a * 0.3);
        let bx = gaussian(&tgrid, 2.5, a * 0.1);
        let conj = |f: &Vec<Complex64>| f.iter().map(|z| z.conj()).collect::<Vec<_>>();
        init.fields
            .insert(vec![-beta], tm_field(len, Some(conj(&bx)), Some(conj(&by)), Some(conj(&ez))));
        init.fields.insert(vec![beta], tm_field(len, Some(bx), Some(by), Some(ez)));
    }
    init.populations.insert(vec![0], vec![vec![c(0.6, 0.0); len], vec![c(0.4, 0.0); len]]);
    let p = lift_initial_data(&sys, &lat, &tgrid, &init).unwrap();
    for eps in [0.04, 1e-3] {
        let st = assemble_on_grid(&p, eps, 0, &grid, 0, Sample::Value).unwrap();
        let raw = sample_initial_data(&init, &grid, 2, eps).unwrap();
        let err = st.max_abs_diff(&raw);
        assert!(err <= 1e-12, "eps {eps}: {err:e}");
    }
}

fn golden_profiles(n: usize, times: &[f64]) -> ProfileSet {
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(n, n);
    let mut init = cplus_packet(&grid, 0.5, 2.0, &gibbs_populations(&sys));
    // Mean By with zero y-average in every x column.
    let xs = grid.coords(0);
    let ys = grid.coords(1);
    let mut by = Vec::new();
    for x in &xs {
        for y in &ys {
            by.push(c(0.1 * (-(x - 10.0).powi(2) / 4.0).exp() * (2.0 * PI * y / 20.0).sin(), 0.0));
        }
    }
    init.fields.insert(vec![0], tm_field(grid.len(), None, Some(by), None));
    let lifted = lift_initial_data(&sys, &lat, &grid, &init).unwrap();
    let model = ReducedModel::new(&sys, &lat, &grid).unwrap();
    let leading = evolve_leading(&model, &lifted, times, 0.005).unwrap();
    build_corrector2_tm(&build_corrector1_tm(&leading).unwrap()).unwrap()
}

#[test]
fn assembled_fields_are_real() {
    let p = golden_profiles(16, &[0.0, 0.1, 0.2]);
    let grid = singular(16, 16, 16);
    for i in 0..3 {
        let st = assemble_on_grid(&p, 0.01, i, &grid, 2, Sample::Value).unwrap();
        for f in [&st.bx, &st.by, &st.e] {
            assert!(f.iter().all(|z| z.im.abs() <= 1e-12));
        }
        assert!(st.hermitian_defect() <= 1e-12);
        let dt = assemble_on_grid(&p, 0.01, i, &grid, 2, Sample::TimeDerivative).unwrap();
        let scale = sup(&dt.e).max(1.0);
        assert!(dt.e.iter().all(|z| z.im.abs() <= 1e-12 * scale));
    }
    let at = assemble_uapp(&p, 0.01, 0.1, &grid).unwrap();
    assert_eq!(at, assemble_on_grid(&p, 0.01, 1, &grid, 2, Sample::Value).unwrap());
    assert!(assemble_uapp(&p, 0.01, 0.15, &grid).is_err());
}

#[test]
fn assembly_at_time_zero_is_the_weighted_sum_of_orders() {
    let p = golden_profiles(16, &[0.0, 0.1]);
    let grid = singular(16, 16, 8);
    let eps: f64 = 0.02;
    let full = assemble_on_grid(&p, eps, 0, &grid, 2, Sample::Value).unwrap();
    let u0 = assemble_on_grid(&p, eps, 0, &grid, 0, Sample::Value).unwrap();
    let u01 = assemble_on_grid(&p, eps, 0, &grid, 1, Sample::Value).unwrap();
    // Orders enter with weights 1, sqrt(eps), eps: recover U^1 and U^2 at two epsilons.
    let eps2 = eps / 4.0;
    let full2 = assemble_on_grid(&p, eps2, 0, &grid, 2, Sample::Value).unwrap();
    let u01b = assemble_on_grid(&p, eps2, 0, &grid, 1, Sample::Value).unwrap();
    for idx in [0, 37, 500] {
        let u1a = (u01.e[idx] - u0.e[idx]) / eps.sqrt();
        let u1b = (u01b.e[idx] - u0.e[idx]) / eps2.sqrt();
        assert!((u1a - u1b).norm() <= 1e-12);
        let u2a = (full.e[idx] - u01.e[idx]) / eps;
        let u2b = (full2.e[idx] - u01b.e[idx]) / eps2;
        assert!((u2a - u2b).norm() <= 1e-10);
    }
}

#[test]
fn decaying_slots_shrink_exponentially() {
    let sys = LevelSystem::tm(
        vec![0.0, 1.0],
        &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        DMatrix::zeros(2, 2),
        0.5,
        1.0,
    )
    .unwrap();
    let lat = PhaseLattice::new(vec![1.0], 1.0, 0.1, 4).unwrap();
    let tgrid = transverse(8, 8);
    let grid = singular(8, 8, 8);
    let mut init = InitialData::default();
    init.coherences.insert((1, 0, vec![1]), vec![c(0.1, 0.0); tgrid.len()]);
    let mut p = lift_initial_data(&sys, &lat, &tgrid, &init).unwrap();
    let t = 0.05;
    p.times.push(t);
    p.frames.push(p.frames[0].clone());
    for eps in [0.02, 0.01, 0.005] {
        let st = assemble_on_grid(&p, eps, 1, &grid, 0, Sample::Value).unwrap();
        let got = sup(&st.rho_entry(1, 0));
        let expected = 0.1 * (-sys.gamma() * t / eps).exp();
        assert!((got - expected).abs() <= 1e-15 + 1e-12 * expected, "eps {eps}");
    }
}

#[test]
fn polarizations_hold_after_every_stage() {
    let p = golden_profiles(16, &[0.0, 0.1, 0.2]);
    p.check_polarizations().unwrap();
    for i in 0..p.frames.len() {
        assert!(polarization_defect(&p, i) <= 1e-12);
        for k in p.frames[i].keys() {
            let ok = match (k.j, &k.comp) {
                (0, Component::Rho(m, n)) if m != n => k.kappa == 1,
                (0, _) => k.kappa == 0,
                (1, _) => k.kappa <= 1,
                (2, Component::Rho(..)) => k.kappa <= 2,
                (2, _) => k.kappa <= 1,
                _ => false,
            };
            assert!(ok, "forbidden slot {k:?}");
        }
    }
    let mut bad = p.clone();
    bad.frames[0].insert(key(0, 1, Mode::d1(1, 1), Component::E(2)), vec![c(1.0, 0.0); 256]);
    assert!(bad.check_polarizations().is_err());
}

/// Value and transverse derivatives at one point by a direct Fourier sum.
fn point_values(grid: &Grid, f: &[Complex64], ix: usize, iy: usize) -> [Complex64; 3] {
    let (nx, ny) = (grid.shape()[0], grid.shape()[1]);
    let (lx, ly) = (grid.lengths()[0], grid.lengths()[1]);
    let wave = |k: usize, n: usize| -> i64 {
        if 2 * k < n {
            k as i64
        } else {
            k as i64 - n as i64
        }
    };
    let (mut dx, mut dy) = (c(0.0, 0.0), c(0.0, 0.0));
    for kx in 0..nx {
        for ky in 0..ny {
            let mut hat = c(0.0, 0.0);
            for jx in 0..nx {
                for jy in 0..ny {
                    let ph = -2.0 * PI * ((kx * jx) as f64 / nx as f64 + (ky * jy) as f64 / ny as f64);
                    hat += f[jx * ny + jy] * c(0.0, ph).exp();
                }
            }
            let ph = 2.0 * PI * ((kx * ix) as f64 / nx as f64 + (ky * iy) as f64 / ny as f64);
            let back = hat * c(0.0, ph).exp() / (nx * ny) as f64;
            if 2 * kx != nx {
                dx += back * c(0.0, 2.0 * PI * wave(kx, nx) as f64 / lx);
            }
            if 2 * ky != ny {
                dy += back * c(0.0, 2.0 * PI * wave(ky, ny) as f64 / ly);
            }
        }
    }
    [f[ix * ny + iy], dx, dy]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Row {
    Bx,
    By,
    E,
    Rho(usize, usize),
}

/// Coefficients of `eps^-1`, `eps^-1/2`, `eps^0` in the scaled TM residual of the expansion,
/// harmonic by harmonic, at one transverse point.
fn residual_coefficients(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    grid: &Grid,
    p: &ProfileSet,
    i: usize,
    point: (usize, usize),
) -> BTreeMap<(Mode, Row), [Complex64; 3]> {
    let n = sys.n_levels();
    let w = sys.omega();
    let gamma = sys.gamma();
    let g = sys.dipole_component(2);
    let iu = c(0.0, 1.0);
    let mut vals: BTreeMap<(u8, Mode, Component), [Complex64; 3]> = BTreeMap::new();
    let mut rates: BTreeMap<(u8, Mode, Component), Complex64> = BTreeMap::new();
    for (k, f) in &p.frames[i] {
        assert_eq!(k.kappa, 0, "prepared data carries no decaying slots");
        vals.insert((k.j, k.mode.clone(), k.comp), point_values(grid, f, point.0, point.1));
    }
    for (k, f) in &p.rates[i] {
        if k.j == 0 {
            rates.insert((k.j, k.mode.clone(), k.comp), f[point.0 * grid.shape()[1] + point.1]);
        }
    }
    let mut out: BTreeMap<(Mode, Row), [Complex64; 3]> = BTreeMap::new();
    let mut add = |mode: &Mode, row: Row, idx: usize, v: Complex64| {
        if idx <= 2 {
            out.entry((mode.clone(), row)).or_insert([c(0.0, 0.0); 3])[idx] += v;
        }
    };
    for ((j, mode, comp), v) in &vals {
        let j = *j as usize;
        let s = lat.dot(&mode.alpha1);
        let s0 = lat.dot(&mode.alpha0);
        let rate = rates.get(&(j as u8, mode.clone(), *comp)).copied().unwrap_or_default();
        match comp {
            Component::B(0) => {
                add(mode, Row::Bx, j, -iu * s * v[0]);
                add(mode, Row::Bx, j + 2, rate);
                add(mode, Row::E, j + 1, v[2]);
            }
            Component::B(1) => {
                add(mode, Row::By, j, -iu * s * v[0]);
                add(mode, Row::By, j + 2, rate);
                add(mode, Row::E, j + 2, -v[1]);
                add(mode, Row::E, j, -iu * s0 * v[0]);
            }
            Component::E(2) => {
                add(mode, Row::E, j, -iu * s * v[0]);
                add(mode, Row::E, j + 2, rate);
                add(mode, Row::By, j + 2, -v[1]);
                add(mode, Row::By, j, -iu * s0 * v[0]);
                add(mode, Row::Bx, j + 1, v[2]);
            }
            Component::Rho(a, b) => {
                let (a, b) = (*a, *b);
                add(mode, Row::Rho(a, b), j, -iu * s * v[0]);
                add(mode, Row::Rho(a, b), j + 2, rate);
                if a != b {
                    add(mode, Row::Rho(a, b), j, iu * c(w[a] - w[b], -gamma) * v[0]);
                    // Field source -i Tr(g Omega_gamma C) with (Omega_gamma C)(b,a) = (w_b - w_a - i gamma) C(b,a).
                    add(mode, Row::E, j + 1, -iu * g[(b, a)] * c(w[a] - w[b], -gamma) * v[0]);
                } else {
                    for q in 0..n {
                        let wp = sys.pauli();
                        // -(W# N)_q gains from b = a and loses at q = a.
                        if q != a {
                            add(mode, Row::Rho(q, q), j + 2, -wp[(a, q)] * v[0]);
                            add(mode, Row::Rho(a, a), j + 2, wp[(a, q)] * v[0]);
                        }
                    }
                }
            }
            other => panic!("unexpected TM component {other:?}"),
        }
    }
    // Quadratic coupling -i E_{j1}[g, rho_{j2}] lands at index j1 + j2 + 1.
    for ((j1, m1, c1), e) in &vals {
        if *c1 != Component::E(2) {
            continue;
        }
        for ((j2, m2, c2), r) in &vals {
            let Component::Rho(a, b) = *c2 else { continue };
            let idx = (*j1 + *j2 + 1) as usize;
            if idx > 2 {
                continue;
            }
            let mode = m1.add(m2);
            // [g, R] where R has the single entry (a, b).
            for q in 0..n {
                add(&mode, Row::Rho(q, b), idx, -iu * e[0] * g[(q, a)] * r[0]);
                add(&mode, Row::Rho(a, q), idx, iu * e[0] * r[0] * g[(b, q)]);
            }
        }
    }
    out
}

#[test]
fn residual_cascade_vanishes_at_a_random_point() {
    let times = [0.0, 0.1];
    let p = golden_profiles(32, &times);
    let sys = golden_system();
    let lat = golden_lattice();
    let grid = transverse(32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let point = (rng.gen_range(8..24), rng.gen_range(8..24));
    for i in 0..times.len() {
        let coeffs = residual_coefficients(&sys, &lat, &grid, &p, i, point);
        assert!(coeffs.len() > 10);
        let mut worst = [0.0_f64; 3];
        let mut size = 0.0_f64;
        for v in coeffs.values() {
            for q in 0..3 {
                worst[q] = worst[q].max(v[q].norm());
            }
        }
        for f in p.frames[i].values() {
            size = size.max(sup(f));
        }
        assert!(size > 1e-3);
        assert!(worst[0] <= 1e-12, "eps^-1 coefficient {:e}", worst[0]);
        assert!(worst[1] <= 1e-10, "eps^-1/2 coefficient {:e}", worst[1]);
        assert!(worst[2] <= 1e-9, "eps^0 coefficient {:e}", worst[2]);
    }
}
