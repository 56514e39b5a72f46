//! WKB profile hierarchy: lifting of initial data onto characteristic harmonics,
//! leading-order evolution, closed-form TM correctors and assembly of the
//! approximate solution on the singular grid.

use std::collections::BTreeMap;

use nalgebra::Vector6;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{for_each_index, Fft, Grid};
use crate::quantum::LevelSystem;
use crate::reduced_model::{
    coherence_corrector, field_source, MatField, ReducedModel, ReducedRates, ReducedState, Vec3Field,
};
use crate::spectral::{
    classify_mode, default_resonance_tol, m1_pseudo_inverse, pi_projector, resonant_harmonic, Field6,
    Mode, ModeClass, PhaseLattice, BX, BY, BZ, EX, EY, EZ,
};
use crate::stiff_solver::{check_singular_grid, SingularState};

/// Physical component carried by a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    B(usize),
    E(usize),
    Rho(usize, usize),
}

impl Component {
    pub fn field(slot: usize) -> Self {
        if slot < 3 {
            Component::B(slot)
        } else {
            Component::E(slot - 3)
        }
    }

    pub fn label(&self) -> String {
        const AXES: [&str; 3] = ["x", "y", "z"];
        match self {
            Component::B(c) => format!("B{}", AXES[*c]),
            Component::E(c) => format!("E{}", AXES[*c]),
            Component::Rho(m, n) => format!("rho_{m}_{n}"),
        }
    }

    fn family(&self) -> Family {
        match self {
            Component::B(_) | Component::E(_) => Family::Field,
            Component::Rho(m, n) if m == n => Family::Population,
            Component::Rho(..) => Family::Coherence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Field,
    Population,
    Coherence,
}

/// `(j, kappa, alpha, component)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotKey {
    pub j: u8,
    pub kappa: u32,
    pub mode: Mode,
    pub comp: Component,
}

/// Coefficient fields on the transverse grid; absent slots are exactly zero.
pub type Frame = BTreeMap<SlotKey, Vec<Complex64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Lifted,
    ClosedForm,
    Evolved,
    ZeroFreeChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub sys: LevelSystem,
    pub lat: PhaseLattice,
    pub grid: Grid,
    pub times: Vec<f64>,
    pub frames: Vec<Frame>,
    /// Slow time derivatives of every stored slot; empty when not available.
    pub rates: Vec<Frame>,
    pub provenance: BTreeMap<(u8, u32, Family), Provenance>,
}

/// Initial data by `theta_0` harmonic `beta`, on the transverse grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialData {
    pub fields: BTreeMap<Vec<i64>, Field6>,
    pub populations: BTreeMap<Vec<i64>, Vec<Vec<Complex64>>>,
    pub coherences: BTreeMap<(usize, usize, Vec<i64>), Vec<Complex64>>,
}

fn is_zero(f: &[Complex64]) -> bool {
    f.iter().all(|z| z.norm() == 0.0)
}

fn insert_nonzero(frame: &mut Frame, key: SlotKey, f: Vec<Complex64>) {
    if !is_zero(&f) {
        frame.insert(key, f);
    }
}

fn leading(mode: &Mode, comp: Component, kappa: u32) -> SlotKey {
    SlotKey {
        j: 0,
        kappa,
        mode: mode.clone(),
        comp,
    }
}

/// Apply a real 6x6 matrix pointwise to a six-component field.
fn apply6(p: &nalgebra::Matrix6<f64>, u: &Field6) -> Field6 {
    let len = u[0].len();
    let mut out: Field6 = std::array::from_fn(|_| vec![Complex64::default(); len]);
    for i in 0..6 {
        for j in 0..6 {
            let c = p[(i, j)];
            if c == 0.0 {
                continue;
            }
            for q in 0..len {
                out[i][q] += u[j][q] * c;
            }
        }
    }
    out
}

/// Split initial data over the characteristic harmonics; resonant coherences go to `kappa = 1`.
pub fn lift_initial_data(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    grid: &Grid,
    init: &InitialData,
) -> Result<ProfileSet> {
    let d = lat.d();
    let len = grid.len();
    let mut frame = Frame::new();
    let check_len = |f: &[Complex64], what: &str| {
        if f.len() != len {
            Err(Error::GridMismatch(format!("{what} has {} points, grid has {len}", f.len())))
        } else {
            Ok(())
        }
    };
    for (beta, u) in &init.fields {
        if beta.len() != d {
            return Err(Error::Profile(format!("harmonic {beta:?} has wrong dimension")));
        }
        for c in u {
            check_len(c, "field data")?;
        }
        let targets: Vec<Mode> = if beta.iter().all(|&b| b == 0) {
            vec![Mode::zero(d)]
        } else {
            let neg: Vec<i64> = beta.iter().map(|b| -b).collect();
            vec![
                Mode::new(beta.clone(), beta.clone()),
                Mode::new(beta.clone(), neg),
                Mode::new(beta.clone(), vec![0; d]),
            ]
        };
        for mode in targets {
            let part = apply6(&pi_projector(lat, &mode), u);
            for (slot, f) in part.into_iter().enumerate() {
                let key = leading(&mode, Component::field(slot), 0);
                if !is_zero(&f) {
                    let entry = frame.entry(key).or_insert_with(|| vec![Complex64::default(); len]);
                    entry.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    for (beta, pops) in &init.populations {
        if pops.len() != sys.n_levels() {
            return Err(Error::Profile(format!("populations at {beta:?} need {} levels", sys.n_levels())));
        }
        let mode = Mode::new(beta.clone(), vec![0; d]);
        for (n, f) in pops.iter().enumerate() {
            check_len(f, "population data")?;
            insert_nonzero(&mut frame, leading(&mode, Component::Rho(n, n), 0), f.clone());
        }
    }
    let tol = default_resonance_tol(sys);
    for ((m, n, beta), f) in &init.coherences {
        check_len(f, "coherence data")?;
        if m == n || is_zero(f) {
            continue;
        }
        let Some(alpha1) = resonant_harmonic(sys, lat, *m, *n, tol)? else {
            return Err(Error::NonLiftable {
                m: *m,
                n: *n,
                beta: beta.clone(),
            });
        };
        let mode = Mode::new(beta.clone(), alpha1);
        frame.insert(leading(&mode, Component::Rho(*m, *n), 1), f.clone());
    }
    let mut provenance = BTreeMap::new();
    for fam in [Family::Field, Family::Population] {
        provenance.insert((0, 0, fam), Provenance::Lifted);
    }
    provenance.insert((0, 1, Family::Coherence), Provenance::Lifted);
    Ok(ProfileSet {
        sys: sys.clone(),
        lat: lat.clone(),
        grid: grid.clone(),
        times: vec![0.0],
        frames: vec![frame],
        rates: Vec::new(),
        provenance,
    })
}

/// Electric part of a wave envelope determines the magnetic part.
fn wave_magnetic(class: ModeClass, e: &Vec3Field) -> Vec3Field {
    let len = e[0].len();
    let zero = vec![Complex64::default(); len];
    let sign = if class == ModeClass::CPlus { 1.0 } else { -1.0 };
    [
        zero,
        e[2].iter().map(|z| -z * sign).collect(),
        e[1].iter().map(|z| z * sign).collect(),
    ]
}

impl ProfileSet {
    /// Leading-order slow state stored in frame `i`.
    pub fn leading_state(&self, i: usize) -> Result<ReducedState> {
        let frame = self.frames.get(i).ok_or_else(|| Error::Profile(format!("no frame {i}")))?;
        let len = self.grid.len();
        let mut st = ReducedState::new(&self.grid);
        st.t = self.times[i];
        let zero = || vec![Complex64::default(); len];
        for (key, f) in frame.iter().filter(|(k, _)| k.j == 0) {
            let class = classify_mode(&self.lat, &key.mode);
            match (key.comp, key.kappa) {
                (Component::E(c), 0) if class.is_wave() => {
                    st.e_modes.entry(key.mode.clone()).or_insert_with(|| std::array::from_fn(|_| zero()))[c] = f.clone();
                }
                (Component::B(_), 0) if class.is_wave() => {}
                (comp @ (Component::B(_) | Component::E(_)), 0) => {
                    let slot = match comp {
                        Component::B(c) => c,
                        Component::E(c) => c + 3,
                        _ => unreachable!(),
                    };
                    st.field_means
                        .entry(key.mode.clone())
                        .or_insert_with(|| std::array::from_fn(|_| zero()))[slot] = f.clone();
                }
                (Component::Rho(m, n), 0) if m == n => {
                    st.pop_modes
                        .entry(key.mode.clone())
                        .or_insert_with(|| vec![zero(); self.sys.n_levels()])[m] = f.clone();
                }
                (Component::Rho(m, n), 1) if m != n => {
                    st.coh.insert((m, n, key.mode.clone()), f.clone());
                }
                _ => {
                    return Err(Error::Profile(format!(
                        "leading slot {:?} at kappa {} on {} is not allowed",
                        key.comp, key.kappa, key.mode
                    )))
                }
            }
        }
        Ok(st)
    }

    /// Slow rates of the leading slots in frame `i`.
    pub fn leading_rates(&self, i: usize) -> Option<ReducedRates> {
        let frame = self.rates.get(i)?;
        let len = self.grid.len();
        let zero = || vec![Complex64::default(); len];
        let mut r = ReducedRates {
            e_modes: BTreeMap::new(),
            pop_modes: BTreeMap::new(),
        };
        for (key, f) in frame.iter().filter(|(k, _)| k.j == 0 && k.kappa == 0) {
            match key.comp {
                Component::E(c) if classify_mode(&self.lat, &key.mode).is_wave() => {
                    r.e_modes.entry(key.mode.clone()).or_insert_with(|| std::array::from_fn(|_| zero()))[c] = f.clone();
                }
                Component::Rho(m, n) if m == n => {
                    r.pop_modes
                        .entry(key.mode.clone())
                        .or_insert_with(|| vec![zero(); self.sys.n_levels()])[m] = f.clone();
                }
                _ => {}
            }
        }
        Some(r)
    }

    pub fn frame_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or_else(|| Error::Profile(format!("no stored frame at t = {t}")))
    }

    /// Largest modulus over the stored slots of order `j`.
    pub fn order_sup(&self, i: usize, j: u8) -> f64 {
        self.frames[i]
            .iter()
            .filter(|(k, _)| k.j == j)
            .flat_map(|(_, f)| f.iter())
            .fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }

    /// Checks the exact-zero storage rules for forbidden slots.
    pub fn check_polarizations(&self) -> Result<()> {
        for frame in self.frames.iter().chain(&self.rates) {
            for key in frame.keys() {
                let class = classify_mode(&self.lat, &key.mode);
                let fam = key.comp.family();
                let ok = match (key.j, fam) {
                    (0, Family::Field) => key.kappa == 0 && class != ModeClass::NonCharacteristic,
                    (0, Family::Population) => key.kappa == 0 && matches!(class, ModeClass::Mean | ModeClass::CZero),
                    (0, Family::Coherence) => key.kappa == 1,
                    (1, _) => key.kappa <= 1,
                    (2, Family::Field) => key.kappa <= 1,
                    (2, _) => key.kappa <= 2,
                    _ => false,
                };
                if !ok {
                    return Err(Error::Profile(format!(
                        "slot j={} kappa={} {} on {} violates polarization",
                        key.j,
                        key.kappa,
                        key.comp.label(),
                        key.mode
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Frame with the leading slots of a reduced state; wave magnetic parts by polarization.
pub fn leading_frame(lat: &PhaseLattice, state: &ReducedState) -> Frame {
    let mut frame = Frame::new();
    for (mode, e) in &state.e_modes {
        let b = wave_magnetic(classify_mode(lat, mode), e);
        for c in 0..3 {
            insert_nonzero(&mut frame, leading(mode, Component::E(c), 0), e[c].clone());
            insert_nonzero(&mut frame, leading(mode, Component::B(c), 0), b[c].clone());
        }
    }
    for (mode, u) in &state.field_means {
        for (slot, f) in u.iter().enumerate() {
            insert_nonzero(&mut frame, leading(mode, Component::field(slot), 0), f.clone());
        }
    }
    for (mode, pops) in &state.pop_modes {
        for (n, f) in pops.iter().enumerate() {
            insert_nonzero(&mut frame, leading(mode, Component::Rho(n, n), 0), f.clone());
        }
    }
    for ((m, n, mode), f) in &state.coh {
        insert_nonzero(&mut frame, leading(mode, Component::Rho(*m, *n), 1), f.clone());
    }
    frame
}

fn rates_frame(lat: &PhaseLattice, r: &ReducedRates) -> Frame {
    let mut frame = Frame::new();
    for (mode, e) in &r.e_modes {
        let b = wave_magnetic(classify_mode(lat, mode), e);
        for c in 0..3 {
            insert_nonzero(&mut frame, leading(mode, Component::E(c), 0), e[c].clone());
            insert_nonzero(&mut frame, leading(mode, Component::B(c), 0), b[c].clone());
        }
    }
    for (mode, pops) in &r.pop_modes {
        for (n, f) in pops.iter().enumerate() {
            insert_nonzero(&mut frame, leading(mode, Component::Rho(n, n), 0), f.clone());
        }
    }
    frame
}

/// Integrate the leading order from frame 0 and store frames (with rates) at `times`.
/// Each interval is split into steps no longer than `max_dt`.
pub fn evolve_leading(model: &ReducedModel, lifted: &ProfileSet, times: &[f64], max_dt: f64) -> Result<ProfileSet> {
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Profile("output times must start at 0 and increase".into()));
    }
    if !(max_dt > 0.0) {
        return Err(Error::Profile(format!("step must be positive, got {max_dt}")));
    }
    let mut state = lifted.leading_state(0)?;
    let mut out = lifted.clone();
    out.times.clear();
    out.frames.clear();
    out.rates.clear();
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            let span = t - times[i - 1];
            let steps = (span / max_dt - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                model.step(&mut state, h)?;
            }
            state.t = t;
        }
        out.times.push(t);
        out.frames.push(leading_frame(&lifted.lat, &state));
        out.rates.push(rates_frame(&lifted.lat, &model.rates(&state)?));
    }
    for fam in [Family::Field, Family::Population] {
        out.provenance.insert((0, 0, fam), Provenance::Evolved);
    }
    Ok(out)
}

/// Everything the closed-form corrector formulas need.
struct TmContext<'a> {
    sys: &'a LevelSystem,
    lat: &'a PhaseLattice,
    grid: &'a Grid,
    fft: Fft,
}

impl TmContext<'_> {
    fn dy(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.fft.derivative(f, 1)
    }

    fn dx(&self, f: &[Complex64]) -> Vec<Complex64> {
        self.fft.derivative(f, 0)
    }

    /// `1/(k.beta)` with the small-divisor floor asserted.
    fn inv_phase(&self, beta: &[i64]) -> Result<f64> {
        let s = self.lat.dot(beta);
        let floor = self.lat.divisor_floor(beta);
        if s.abs() < floor || s == 0.0 {
            return Err(Error::Profile(format!(
                "small divisor |k.{beta:?}| = {:.3e} below {floor:.3e}",
                s.abs()
            )));
        }
        Ok(1.0 / s)
    }

    /// `d_y^{-1}` on the zero-y-mean part; rejects data with nonzero y-averages.
    fn inv_dy(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let shape = self.grid.shape();
        let (nx, ny) = (shape[0], shape[1]);
        let scale = f.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        for ix in 0..nx {
            let mean: Complex64 = f[ix * ny..(ix + 1) * ny].iter().sum::<Complex64>() / ny as f64;
            if mean.norm() > 1e-10 * scale {
                return Err(Error::Profile(format!(
                    "mean-field x-derivative has nonzero y-average {:.3e} at x index {ix}",
                    mean.norm()
                )));
            }
        }
        Ok(self.fft.apply_symbol(f, |k| {
            if k[1] == 0.0 {
                Complex64::default()
            } else {
                Complex64::new(0.0, -1.0 / k[1])
            }
        }))
    }
}

fn tm_checks(ctx: &TmContext, state: &ReducedState) -> Result<()> {
    if ctx.grid.ndim() != 2 {
        return Err(Error::Profile("TM correctors need a two-axis transverse grid".into()));
    }
    if state.coh.values().any(|f| !is_zero(f)) {
        return Err(Error::PreparedCoherence);
    }
    let zero = Mode::zero(ctx.lat.d());
    if let Some(mean) = state.field_means.get(&zero) {
        for slot in [BX, BZ, EX, EY, EZ] {
            if !is_zero(&mean[slot]) {
                return Err(Error::Profile(format!(
                    "TM mean field must carry only By, found component {slot}"
                )));
            }
        }
    }
    for (mode, e) in &state.e_modes {
        if !is_zero(&e[0]) || !is_zero(&e[1]) {
            return Err(Error::Profile(format!("TM envelope on {mode} has in-plane E")));
        }
    }
    for (mode, u) in &state.field_means {
        if *mode != zero && (!is_zero(&u[EX]) || [BY, BZ, EY, EZ].iter().any(|&s| !is_zero(&u[s]))) {
            return Err(Error::Profile(format!("TM oscillating mean on {mode} must be Bx only")));
        }
    }
    Ok(())
}

fn ez_modes(state: &ReducedState) -> Vec<(Mode, Vec3Field)> {
    state.e_modes.iter().map(|(m, f)| (m.clone(), f.clone())).collect()
}

/// First TM corrector slots (`j = 1`, `kappa = 0`).
fn corrector1(ctx: &TmContext, state: &ReducedState) -> Result<Frame> {
    tm_checks(ctx, state)?;
    let lat = ctx.lat;
    let d = lat.d();
    let mut frame = Frame::new();
    let key = |mode: &Mode, comp| SlotKey {
        j: 1,
        kappa: 0,
        mode: mode.clone(),
        comp,
    };
    for (mode, e) in &state.e_modes {
        let inv = ctx.inv_phase(&mode.alpha1)?;
        let bx: Vec<Complex64> = ctx.dy(&e[2]).iter().map(|z| z * Complex64::new(0.0, -inv)).collect();
        insert_nonzero(&mut frame, key(mode, Component::B(0)), bx);
    }
    let zero = Mode::zero(d);
    for (mode, u) in &state.field_means {
        if *mode == zero {
            let dxby = ctx.dx(&u[BY]);
            let bx = ctx.inv_dy(&dxby)?;
            insert_nonzero(&mut frame, key(mode, Component::B(0)), bx);
        } else {
            let inv = ctx.inv_phase(&mode.alpha0)?;
            let by: Vec<Complex64> = ctx.dy(&u[BX]).iter().map(|z| z * Complex64::new(0.0, -inv)).collect();
            insert_nonzero(&mut frame, key(mode, Component::B(1)), by);
        }
    }
    let c1 = coherence_corrector(ctx.sys, lat, &ez_modes(state), &state.pop_modes);
    let n = ctx.sys.n_levels();
    for (mode, mat) in c1 {
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    insert_nonzero(&mut frame, key(&mode, Component::Rho(m, k)), mat[m * n + k].clone());
                }
            }
        }
    }
    Ok(frame)
}

fn mat_from_frame(frame: &Frame, j: u8, n: usize, len: usize) -> BTreeMap<Mode, MatField> {
    let mut out: BTreeMap<Mode, MatField> = BTreeMap::new();
    for (key, f) in frame.iter().filter(|(k, _)| k.j == j && k.kappa == 0) {
        if let Component::Rho(m, k) = key.comp {
            out.entry(key.mode.clone()).or_insert_with(|| vec![vec![Complex64::default(); len]; n * n])[m * n + k] =
                f.clone();
        }
    }
    out
}

/// Second TM corrector slots (`j = 2`, `kappa = 0`), given the first corrector.
fn corrector2(ctx: &TmContext, state: &ReducedState, first: &Frame) -> Result<Frame> {
    let sys = ctx.sys;
    let lat = ctx.lat;
    let n = sys.n_levels();
    let len = ctx.grid.len();
    let mut frame = Frame::new();
    let key = |mode: &Mode, comp| SlotKey {
        j: 2,
        kappa: 0,
        mode: mode.clone(),
        comp,
    };
    let c1 = mat_from_frame(first, 1, n, len);
    let g = sys.dipole_component(2);
    // P = E0 [g, C1] per harmonic.
    let mut prod: BTreeMap<Mode, MatField> = BTreeMap::new();
    for (alpha, e) in &state.e_modes {
        for (nu, c) in &c1 {
            let mu = alpha.add(nu);
            let acc = prod.entry(mu).or_insert_with(|| vec![vec![Complex64::default(); len]; n * n]);
            for m in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        let (gmj, gjk) = (g[(m, j)], g[(j, k)]);
                        if gmj.norm() == 0.0 && gjk.norm() == 0.0 {
                            continue;
                        }
                        let (cjk, cmj) = (&c[j * n + k], &c[m * n + j]);
                        let dst = &mut acc[m * n + k];
                        for p in 0..len {
                            dst[p] += e[2][p] * (gmj * cjk[p] - cmj[p] * gjk);
                        }
                    }
                }
            }
        }
    }
    for (mu, p) in &prod {
        let s1 = lat.dot(&mu.alpha1);
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    let r = Complex64::new(sys.gamma(), sys.omega()[m] - sys.omega()[k] - s1).inv();
                    let f: Vec<Complex64> = p[m * n + k].iter().map(|z| z * r * Complex64::i()).collect();
                    insert_nonzero(&mut frame, key(mu, Component::Rho(m, k)), f);
                }
            }
            if mu.alpha1.iter().any(|&a| a != 0) {
                let inv = ctx.inv_phase(&mu.alpha1)?;
                let f: Vec<Complex64> = p[m * n + m].iter().map(|z| -z * inv).collect();
                insert_nonzero(&mut frame, key(mu, Component::Rho(m, m)), f);
            }
        }
    }
    // Field part: solve the order-one Maxwell rows off the kernel, mode by mode.
    let mut sources: BTreeMap<Mode, (Vec<Complex64>, Vec<Complex64>)> = BTreeMap::new();
    let zero = || vec![Complex64::default(); len];
    let mut add = |mode: &Mode, row: usize, f: &[Complex64], w: Complex64| {
        let entry = sources.entry(mode.clone()).or_insert_with(|| (zero(), zero()));
        let dst = if row == 0 { &mut entry.0 } else { &mut entry.1 };
        dst.iter_mut().zip(f).for_each(|(a, b)| *a += b * w);
    };
    let one = Complex64::new(1.0, 0.0);
    // Row By: r2 = d_x E0 (time derivatives lie along the kernel and drop out).
    for (mode, e) in &state.e_modes {
        add(mode, 0, &ctx.dx(&e[2]), one);
    }
    // Row E: r3 = d_x By0 - d_y Bx1 + F, F = i Tr(g Omega_gamma C1).
    for (mode, e) in &state.e_modes {
        let by = wave_magnetic(classify_mode(lat, mode), e)[1].clone();
        add(mode, 1, &ctx.dx(&by), one);
    }
    for (k, f) in first.iter().filter(|(k, _)| k.j == 1 && k.comp == Component::B(0)) {
        add(&k.mode, 1, &ctx.dy(f), -one);
    }
    for (mu, c) in &c1 {
        add(mu, 1, &field_source(sys, c)[2], one);
    }
    for (mode, (r2, r3)) in sources {
        if mode.is_zero() {
            continue;
        }
        let pinv = m1_pseudo_inverse(lat, &mode);
        let (a, b, c, dd) = (pinv[(BY, BY)], pinv[(BY, EZ)], pinv[(EZ, BY)], pinv[(EZ, EZ)]);
        let by: Vec<Complex64> = r2.iter().zip(&r3).map(|(x, y)| a * x + b * y).collect();
        let ez: Vec<Complex64> = r2.iter().zip(&r3).map(|(x, y)| c * x + dd * y).collect();
        insert_nonzero(&mut frame, key(&mode, Component::B(1)), by);
        insert_nonzero(&mut frame, key(&mode, Component::E(2)), ez);
    }
    Ok(frame)
}

fn shifted(state: &ReducedState, rates: &ReducedRates, h: f64) -> ReducedState {
    let mut s = state.clone();
    for (mode, f) in s.e_modes.iter_mut() {
        if let Some(r) = rates.e_modes.get(mode) {
            for c in 0..3 {
                f[c].iter_mut().zip(&r[c]).for_each(|(a, b)| *a += b * h);
            }
        }
    }
    for (mode, f) in s.pop_modes.iter_mut() {
        if let Some(r) = rates.pop_modes.get(mode) {
            for (lv, rv) in f.iter_mut().zip(r) {
                lv.iter_mut().zip(rv).for_each(|(a, b)| *a += b * h);
            }
        }
    }
    s
}

/// Central difference of a polynomial map along the slow flow.
fn directional(
    state: &ReducedState,
    rates: &ReducedRates,
    build: impl Fn(&ReducedState) -> Result<Frame>,
) -> Result<Frame> {
    const H: f64 = 1e-4;
    let plus = build(&shifted(state, rates, H))?;
    let minus = build(&shifted(state, rates, -H))?;
    let mut out = Frame::new();
    let keys: std::collections::BTreeSet<&SlotKey> = plus.keys().chain(minus.keys()).collect();
    for key in keys {
        let len = plus.get(key).or(minus.get(key)).map_or(0, |f| f.len());
        let zero = vec![Complex64::default(); len];
        let p = plus.get(key).unwrap_or(&zero);
        let m = minus.get(key).unwrap_or(&zero);
        let f: Vec<Complex64> = p.iter().zip(m).map(|(a, b)| (a - b) / (2.0 * H)).collect();
        insert_nonzero(&mut out, key.clone(), f);
    }
    Ok(out)
}

fn fill_order(profiles: &ProfileSet, j: u8) -> Result<ProfileSet> {
    let ctx = TmContext {
        sys: &profiles.sys,
        lat: &profiles.lat,
        grid: &profiles.grid,
        fft: Fft::new(&profiles.grid),
    };
    let build = |s: &ReducedState| -> Result<Frame> {
        let first = corrector1(&ctx, s)?;
        if j == 1 {
            Ok(first)
        } else {
            corrector2(&ctx, s, &first)
        }
    };
    let mut out = profiles.clone();
    for i in 0..profiles.frames.len() {
        let state = profiles.leading_state(i)?;
        out.frames[i].retain(|k, _| k.j != j);
        out.frames[i].extend(build(&state)?);
        if let Some(rates) = profiles.leading_rates(i) {
            let d = directional(&state, &rates, &build)?;
            out.rates[i].retain(|k, _| k.j != j);
            out.rates[i].extend(d);
        }
    }
    let closed = Provenance::ClosedForm;
    let free = Provenance::ZeroFreeChoice;
    let entries: &[((u8, u32, Family), Provenance)] = if j == 1 {
        &[
            ((1, 0, Family::Field), closed),
            ((1, 0, Family::Coherence), closed),
            ((1, 0, Family::Population), free),
            ((1, 1, Family::Field), free),
            ((1, 1, Family::Coherence), free),
            ((1, 1, Family::Population), free),
        ]
    } else {
        &[
            ((2, 0, Family::Field), closed),
            ((2, 0, Family::Coherence), closed),
            ((2, 0, Family::Population), closed),
            ((2, 1, Family::Field), free),
            ((2, 1, Family::Coherence), free),
            ((2, 1, Family::Population), free),
            ((2, 2, Family::Coherence), free),
            ((2, 2, Family::Population), free),
        ]
    };
    for (k, p) in entries {
        out.provenance.insert(*k, *p);
    }
    out.check_polarizations()?;
    Ok(out)
}

/// Fill the `j = 1` slots of every frame by the closed-form TM relations.
pub fn build_corrector1_tm(profiles: &ProfileSet) -> Result<ProfileSet> {
    fill_order(profiles, 1)
}

/// Fill the `j = 2` slots of every frame by the closed-form TM relations.
pub fn build_corrector2_tm(profiles: &ProfileSet) -> Result<ProfileSet> {
    fill_order(profiles, 2)
}

/// Which quantity of the profile expansion to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    Value,
    TimeDerivative,
}

/// Sample `sum_j sqrt(eps)^j U^j` (orders `<= max_order`) at stored frame `i` on the
/// singular grid, with `theta_1 = -k t / eps` and `sigma = gamma t / eps` substituted.
pub fn assemble_on_grid(
    profiles: &ProfileSet,
    epsilon: f64,
    i: usize,
    grid: &Grid,
    max_order: u8,
    what: Sample,
) -> Result<SingularState> {
    check_singular_grid(grid, &profiles.lat)?;
    let tshape = profiles.grid.shape();
    if grid.shape()[..2] != tshape[..] || grid.lengths()[..2] != profiles.grid.lengths()[..] {
        return Err(Error::GridMismatch("singular grid does not extend the profile grid".into()));
    }
    let frame = profiles.frames.get(i).ok_or_else(|| Error::Profile(format!("no frame {i}")))?;
    let rates = if what == Sample::TimeDerivative {
        Some(
            profiles
                .rates
                .get(i)
                .ok_or_else(|| Error::Profile("time derivatives were not built".into()))?,
        )
    } else {
        None
    };
    let t = profiles.times[i];
    let n = profiles.sys.n_levels();
    let gamma = profiles.sys.gamma();
    let mut st = SingularState::zeros(grid, n, epsilon);
    st.time = t;
    let theta_shape: Vec<usize> = grid.shape()[2..].to_vec();
    let nq: usize = theta_shape.iter().product();
    let theta_idx: Vec<Vec<i64>> = {
        let mut v = Vec::with_capacity(nq);
        for_each_index(&theta_shape, |_, idx| v.push(idx.iter().map(|&i| i as i64).collect()));
        v
    };
    let nt = theta_shape.first().copied().unwrap_or(1) as f64;
    let np = profiles.grid.len();
    let sq = epsilon.sqrt();
    for (key, f) in frame.iter().filter(|(k, _)| k.j <= max_order) {
        let fast = -lat_phase(&profiles.lat, &key.mode.alpha1) * t / epsilon;
        let decay = (-(key.kappa as f64) * gamma * t / epsilon).exp();
        let weight = sq.powi(key.j as i32) * decay;
        let base = Complex64::from_polar(weight, fast);
        // Coefficient field: value, or d/dt including the fast phase and decay factors.
        let coeff: Vec<Complex64> = match rates {
            None => f.iter().map(|z| z * base).collect(),
            Some(r) => {
                let slow = r.get(key);
                let fac = Complex64::new(-(key.kappa as f64) * gamma / epsilon, -lat_phase(&profiles.lat, &key.mode.alpha1) / epsilon);
                f.iter()
                    .enumerate()
                    .map(|(p, z)| (z * fac + slow.map_or(Complex64::default(), |s| s[p])) * base)
                    .collect()
            }
        };
        let phases: Vec<Complex64> = theta_idx
            .iter()
            .map(|q| {
                let ph: f64 = q
                    .iter()
                    .zip(&key.mode.alpha0)
                    .map(|(&qi, &a)| 2.0 * std::f64::consts::PI * (qi * a) as f64 / nt)
                    .sum();
                Complex64::from_polar(1.0, ph)
            })
            .collect();
        let (target, stride, offset): (&mut Vec<Complex64>, usize, usize) = match key.comp {
            Component::B(0) => (&mut st.bx, 1, 0),
            Component::B(1) => (&mut st.by, 1, 0),
            Component::E(2) => (&mut st.e, 1, 0),
            Component::Rho(m, k) => (&mut st.rho, n * n, m * n + k),
            other => {
                return Err(Error::Profile(format!(
                    "component {} has no place on the TM singular grid",
                    other.label()
                )))
            }
        };
        for p in 0..np {
            let c = coeff[p];
            if c.norm() == 0.0 {
                continue;
            }
            for (q, ph) in phases.iter().enumerate() {
                target[(p * nq + q) * stride + offset] += c * ph;
            }
        }
    }
    Ok(st)
}

fn lat_phase(lat: &PhaseLattice, beta: &[i64]) -> f64 {
    lat.dot(beta)
}

/// Approximate solution `U_app` at stored time `t`, all orders.
pub fn assemble_uapp(profiles: &ProfileSet, epsilon: f64, t: f64, grid: &Grid) -> Result<SingularState> {
    let i = profiles.frame_index(t)?;
    assemble_on_grid(profiles, epsilon, i, grid, 2, Sample::Value)
}

/// Field 6-vector from TM components, for lifting TM data.
pub fn tm_field(len: usize, bx: Option<Vec<Complex64>>, by: Option<Vec<Complex64>>, ez: Option<Vec<Complex64>>) -> Field6 {
    let zero = || vec![Complex64::default(); len];
    let mut u: Field6 = std::array::from_fn(|_| zero());
    if let Some(f) = bx {
        u[BX] = f;
    }
    if let Some(f) = by {
        u[BY] = f;
    }
    if let Some(f) = ez {
        u[EZ] = f;
    }
    u
}

/// Pointwise projector action check used by tests: `pi_alpha u = u` for stored wave slots.
pub fn polarization_defect(profiles: &ProfileSet, i: usize) -> f64 {
    let frame = &profiles.frames[i];
    let len = profiles.grid.len();
    let mut modes: BTreeMap<Mode, Field6> = BTreeMap::new();
    for (key, f) in frame.iter().filter(|(k, _)| k.j == 0 && k.kappa == 0) {
        let slot = match key.comp {
            Component::B(c) => c,
            Component::E(c) => c + 3,
            _ => continue,
        };
        modes.entry(key.mode.clone()).or_insert_with(|| std::array::from_fn(|_| vec![Complex64::default(); len]))[slot] =
            f.clone();
    }
    let mut worst = 0.0_f64;
    for (mode, u) in &modes {
        let p = pi_projector(&profiles.lat, mode);
        for q in 0..len {
            let v = Vector6::from_fn(|c, _| u[c][q]);
            let w = p.map(|x| Complex64::new(x, 0.0)) * v - v;
            worst = worst.max(w.iter().fold(0.0_f64, |a, z| a.max(z.norm())));
        }
    }
    worst
}
