//! Leading-order slow dynamics: envelope Schrodinger equations on the wave harmonics,
//! the field-driven Pauli/Boltzmann rate equation and the resonant coherence flow in `T`.
//!
//! Transverse grids are `[nx, ny]` for TM runs and `[nx, ny, nz]` for the 3D path.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{for_each_index, Fft, Grid};
use crate::quantum::LevelSystem;
use crate::spectral::{
    classify_mode, default_resonance_tol, diffraction_coeff, group_velocity, resonant_harmonic,
    semigroup_m2, Field6, Mode, ModeClass, PhaseLattice,
};

pub type Vec3Field = [Vec<Complex64>; 3];

/// `N x N` matrix of fields, row-major.
pub type MatField = Vec<Vec<Complex64>>;

/// Coherence slot `(m, n, alpha)`.
pub type CohKey = (usize, usize, Mode);

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub grid: Grid,
    /// Electric envelopes on `CPlus` and `CMinus`; the magnetic part follows by polarization.
    pub e_modes: BTreeMap<Mode, Vec3Field>,
    /// Non-oscillating field components: all six at the mean, `(Bx, Ex)` on `CZero`.
    pub field_means: BTreeMap<Mode, Field6>,
    /// Population envelopes on `CZero` and the mean, one field per level.
    pub pop_modes: BTreeMap<Mode, Vec<Vec<Complex64>>>,
    /// Resonant coherences, off-diagonal only.
    pub coh: BTreeMap<CohKey, Vec<Complex64>>,
    pub t: f64,
    pub big_t: f64,
}

impl ReducedState {
    pub fn new(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            e_modes: BTreeMap::new(),
            field_means: BTreeMap::new(),
            pop_modes: BTreeMap::new(),
            coh: BTreeMap::new(),
            t: 0.0,
            big_t: 0.0,
        }
    }

    /// Spatially uniform populations at the mean harmonic.
    pub fn with_uniform_populations(mut self, d: usize, pops: &[f64]) -> Self {
        let fields = pops
            .iter()
            .map(|&p| vec![Complex64::new(p, 0.0); self.grid.len()])
            .collect();
        self.pop_modes.insert(Mode::zero(d), fields);
        self
    }

    /// Grid mean of the summed mean-harmonic populations.
    pub fn total_population(&self, d: usize) -> f64 {
        self.pop_modes
            .get(&Mode::zero(d))
            .map(|levels| {
                levels
                    .iter()
                    .map(|f| f.iter().map(|z| z.re).sum::<f64>())
                    .sum::<f64>()
                    / self.grid.len() as f64
            })
            .unwrap_or(0.0)
    }

    /// Largest violation of `X_{-alpha} = conj(X_alpha)` over stored envelopes.
    pub fn pairing_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        let mut check = |a: &[Complex64], b: Option<&[Complex64]>| {
            let w = match b {
                Some(b) => a.iter().zip(b).fold(0.0_f64, |acc, (x, y)| acc.max((x - y.conj()).norm())),
                None => a.iter().fold(0.0_f64, |acc, x| acc.max(x.norm())),
            };
            worst = worst.max(w);
        };
        for (mode, f) in &self.e_modes {
            let partner = self.e_modes.get(&mode.neg());
            for c in 0..3 {
                check(&f[c], partner.map(|p| p[c].as_slice()));
            }
        }
        for (mode, f) in &self.pop_modes {
            let partner = self.pop_modes.get(&mode.neg());
            for (j, level) in f.iter().enumerate() {
                check(level, partner.map(|p| p[j].as_slice()));
            }
        }
        worst
    }

    /// Root-mean-square of all stored coherences.
    pub fn coherence_norm(&self) -> f64 {
        let n = self.grid.len().max(1) as f64;
        (self
            .coh
            .values()
            .flat_map(|f| f.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

/// `E . Gamma` per harmonic as a matrix of fields.
fn dipole_fields(sys: &LevelSystem, e: &Vec3Field) -> MatField {
    let n = sys.n_levels();
    let len = e[0].len();
    (0..n * n)
        .map(|k| {
            let g = sys.dipole(k / n, k % n);
            (0..len)
                .map(|p| e[0][p] * g[0] + e[1][p] * g[1] + e[2][p] * g[2])
                .collect()
        })
        .collect()
}

fn mat_zero(n: usize, len: usize) -> MatField {
    vec![vec![Complex64::default(); len]; n * n]
}

/// Field modes entering the Bloch coupling: wave envelopes plus a nonzero mean `E`.
fn coupling_modes(d: usize, e_modes: &BTreeMap<Mode, Vec3Field>, means: Option<&BTreeMap<Mode, Field6>>) -> Vec<(Mode, Vec3Field)> {
    let mut out: Vec<(Mode, Vec3Field)> = e_modes.iter().map(|(m, f)| (m.clone(), f.clone())).collect();
    if let Some(mean) = means.and_then(|m| m.get(&Mode::zero(d))) {
        let e: Vec3Field = [mean[3].clone(), mean[4].clone(), mean[5].clone()];
        if e.iter().flatten().any(|z| z.norm() > 0.0) {
            out.push((Mode::zero(d), e));
        }
    }
    out
}

/// `sum_{alpha + beta = mu} [E_alpha . Gamma, diag N_beta]`, keyed by `mu`.
pub fn inner_commutators(
    sys: &LevelSystem,
    e_modes: &[(Mode, Vec3Field)],
    pop_modes: &BTreeMap<Mode, Vec<Vec<Complex64>>>,
) -> BTreeMap<Mode, MatField> {
    let n = sys.n_levels();
    let mut out: BTreeMap<Mode, MatField> = BTreeMap::new();
    for (alpha, e) in e_modes {
        let g = dipole_fields(sys, e);
        for (beta, pops) in pop_modes {
            let mu = alpha.add(beta);
            let len = e[0].len();
            let acc = out.entry(mu).or_insert_with(|| mat_zero(n, len));
            for m in 0..n {
                for k in 0..n {
                    if m == k {
                        continue;
                    }
                    let dst = &mut acc[m * n + k];
                    let gmk = &g[m * n + k];
                    for p in 0..len {
                        dst[p] += gmk[p] * (pops[k][p] - pops[m][p]);
                    }
                }
            }
        }
    }
    out
}

/// Entrywise `1/(i(omega(m,n) - k.alpha1) + gamma)` applied to a matrix field at harmonic `mu`.
fn apply_resolvent(sys: &LevelSystem, lat: &PhaseLattice, mu: &Mode, x: &mut MatField) {
    let n = sys.n_levels();
    let s1 = lat.dot(&mu.alpha1);
    for m in 0..n {
        for k in 0..n {
            let r = Complex64::new(sys.gamma(), sys.omega()[m] - sys.omega()[k] - s1).inv();
            x[m * n + k].iter_mut().for_each(|z| *z *= r);
        }
    }
}

/// First coherence corrector `i R([E . Gamma, N])` per harmonic.
pub fn coherence_corrector(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    e_modes: &[(Mode, Vec3Field)],
    pop_modes: &BTreeMap<Mode, Vec<Vec<Complex64>>>,
) -> BTreeMap<Mode, MatField> {
    let mut inner = inner_commutators(sys, e_modes, pop_modes);
    let i = Complex64::i();
    for (mu, x) in inner.iter_mut() {
        apply_resolvent(sys, lat, mu, x);
        x.iter_mut().flatten().for_each(|z| *z *= i);
    }
    inner
}

/// Field-driven population rates `-[E . Gamma, R([E . Gamma, N])]_d` on `CZero` and the mean.
pub fn nonlinear_pauli_rates(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    e_modes: &BTreeMap<Mode, Vec3Field>,
    pop_modes: &BTreeMap<Mode, Vec<Vec<Complex64>>>,
) -> BTreeMap<Mode, Vec<Vec<Complex64>>> {
    let modes: Vec<(Mode, Vec3Field)> = e_modes.iter().map(|(m, f)| (m.clone(), f.clone())).collect();
    rates_from_modes(sys, lat, &modes, pop_modes)
}

fn rates_from_modes(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    e_modes: &[(Mode, Vec3Field)],
    pop_modes: &BTreeMap<Mode, Vec<Vec<Complex64>>>,
) -> BTreeMap<Mode, Vec<Vec<Complex64>>> {
    let n = sys.n_levels();
    let mut inner = inner_commutators(sys, e_modes, pop_modes);
    for (mu, x) in inner.iter_mut() {
        apply_resolvent(sys, lat, mu, x);
    }
    let mut out: BTreeMap<Mode, Vec<Vec<Complex64>>> = BTreeMap::new();
    for (alpha, e) in e_modes {
        let g = dipole_fields(sys, e);
        for (mu, y) in &inner {
            let target = alpha.add(mu);
            if !matches!(classify_mode(lat, &target), ModeClass::Mean | ModeClass::CZero)
                || !lat.contains(&target)
            {
                continue;
            }
            let len = e[0].len();
            let acc = out
                .entry(target)
                .or_insert_with(|| vec![vec![Complex64::default(); len]; n]);
            for d in 0..n {
                for j in 0..n {
                    let gdj = &g[d * n + j];
                    let yjd = &y[j * n + d];
                    let ydj = &y[d * n + j];
                    let gjd = &g[j * n + d];
                    let dst = &mut acc[d];
                    for p in 0..len {
                        dst[p] -= gdj[p] * yjd[p] - ydj[p] * gjd[p];
                    }
                }
            }
        }
    }
    out
}

/// `F_alpha = i Tr(Gamma Omega_gamma C1_alpha)` per Cartesian component.
pub(crate) fn field_source(sys: &LevelSystem, c1: &MatField) -> Vec3Field {
    let n = sys.n_levels();
    let len = c1.first().map_or(0, |f| f.len());
    let i = Complex64::i();
    std::array::from_fn(|c| {
        let g = sys.dipole_component(c);
        let mut out = vec![Complex64::default(); len];
        for m in 0..n {
            for k in 0..n {
                if m == k || g[(m, k)].norm() == 0.0 {
                    continue;
                }
                let w = g[(m, k)] * Complex64::new(sys.omega()[k] - sys.omega()[m], -sys.gamma()) * i;
                let src = &c1[k * n + m];
                for p in 0..len {
                    out[p] += w * src[p];
                }
            }
        }
        out
    })
}

/// Time derivatives of every slow unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRates {
    pub e_modes: BTreeMap<Mode, Vec3Field>,
    pub pop_modes: BTreeMap<Mode, Vec<Vec<Complex64>>>,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    sys: LevelSystem,
    lat: PhaseLattice,
    grid: Grid,
    fft: Fft,
}

impl ReducedModel {
    pub fn new(sys: &LevelSystem, lat: &PhaseLattice, grid: &Grid) -> Result<Self> {
        if !(grid.ndim() == 2 || grid.ndim() == 3) {
            return Err(Error::GridMismatch(format!(
                "transverse grid needs 2 or 3 axes, got {}",
                grid.ndim()
            )));
        }
        if !(sys.gamma() > 0.0) {
            return Err(Error::Invalid("the slow model needs a positive coherence decay rate".into()));
        }
        Ok(Self {
            sys: sys.clone(),
            lat: lat.clone(),
            grid: grid.clone(),
            fft: Fft::new(grid),
        })
    }

    pub fn system(&self) -> &LevelSystem {
        &self.sys
    }

    pub fn lattice(&self) -> &PhaseLattice {
        &self.lat
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_tm(&self) -> bool {
        self.grid.ndim() == 2
    }

    pub fn fft(&self) -> &Fft {
        &self.fft
    }

    fn check(&self, state: &ReducedState) -> Result<()> {
        if state.grid != self.grid {
            return Err(Error::GridMismatch("reduced state grid differs from model grid".into()));
        }
        for mode in state.e_modes.keys() {
            if !classify_mode(&self.lat, mode).is_wave() {
                return Err(Error::Profile(format!("field envelope stored on non-wave harmonic {mode}")));
            }
        }
        for mode in state.pop_modes.keys() {
            if !matches!(classify_mode(&self.lat, mode), ModeClass::Mean | ModeClass::CZero) {
                return Err(Error::Profile(format!("population envelope stored on harmonic {mode}")));
            }
        }
        Ok(())
    }

    /// Electric-part source `pi(0, F)` per wave harmonic; half of `F` on the transverse components.
    pub fn field_coupling(&self, state: &ReducedState) -> BTreeMap<Mode, Vec3Field> {
        let modes = coupling_modes(self.lat.d(), &state.e_modes, Some(&state.field_means));
        let c1 = coherence_corrector(&self.sys, &self.lat, &modes, &state.pop_modes);
        let mut out = BTreeMap::new();
        for mode in state.e_modes.keys() {
            let len = self.grid.len();
            let src = match c1.get(mode) {
                Some(c) => field_source(&self.sys, c),
                None => std::array::from_fn(|_| vec![Complex64::default(); len]),
            };
            let half: Vec3Field = [
                vec![Complex64::default(); len],
                src[1].iter().map(|z| z * 0.5).collect(),
                src[2].iter().map(|z| z * 0.5).collect(),
            ];
            out.insert(mode.clone(), half);
        }
        out
    }

    pub fn population_rates(&self, state: &ReducedState) -> BTreeMap<Mode, Vec<Vec<Complex64>>> {
        let modes = coupling_modes(self.lat.d(), &state.e_modes, Some(&state.field_means));
        let mut rates = rates_from_modes(&self.sys, &self.lat, &modes, &state.pop_modes);
        let n = self.sys.n_levels();
        for (mode, pops) in &state.pop_modes {
            let len = self.grid.len();
            let acc = rates
                .entry(mode.clone())
                .or_insert_with(|| vec![vec![Complex64::default(); len]; n]);
            let w = self.sys.pauli();
            for i in 0..n {
                for k in 0..n {
                    let (gain, loss) = (w[(k, i)], w[(i, k)]);
                    if gain == 0.0 && loss == 0.0 {
                        continue;
                    }
                    for p in 0..len {
                        acc[i][p] += pops[k][p] * gain - pops[i][p] * loss;
                    }
                }
            }
        }
        rates
    }

    /// Phase factor of transport and transverse dispersion over `tau` for one harmonic.
    fn free_propagator(&self, mode: &Mode, tau: f64) -> Result<Vec<Complex64>> {
        let v = group_velocity(&self.lat, mode)?;
        let a = diffraction_coeff(&self.lat, mode)?;
        let ks: Vec<Vec<f64>> = (0..self.grid.ndim()).map(|ax| self.grid.wavenumbers(ax)).collect();
        let mut out = vec![Complex64::default(); self.grid.len()];
        for_each_index(self.grid.shape(), |flat, idx| {
            let kx = ks[0][idx[0]];
            let perp: f64 = (1..idx.len()).map(|ax| ks[ax][idx[ax]].powi(2)).sum();
            out[flat] = Complex64::from_polar(1.0, -(v * kx + a * perp) * tau);
        });
        Ok(out)
    }

    fn propagate(&self, state: &mut ReducedState, tau: f64) -> Result<()> {
        let props: Vec<(Mode, Vec<Complex64>)> = state
            .e_modes
            .keys()
            .map(|m| self.free_propagator(m, tau).map(|p| (m.clone(), p)))
            .collect::<Result<_>>()?;
        let fft = &self.fft;
        let mut fields: Vec<&mut Vec3Field> = state.e_modes.values_mut().collect();
        fields
            .par_iter_mut()
            .zip(props.par_iter())
            .for_each(|(field, (_, prop))| {
                for comp in field.iter_mut() {
                    fft.forward(comp);
                    comp.iter_mut().zip(prop).for_each(|(z, p)| *z *= p);
                    fft.inverse(comp);
                }
            });
        Ok(())
    }

    /// Strang step of the envelope equations with populations frozen.
    pub fn step_field(&self, state: &mut ReducedState, dt: f64) -> Result<()> {
        self.check(state)?;
        self.propagate(state, 0.5 * dt)?;
        let base = state.clone();
        let eval = |e: &BTreeMap<Mode, Vec3Field>| {
            let mut s = base.clone();
            s.e_modes = e.clone();
            self.field_coupling(&s)
        };
        let new_e = rk4_map(&base.e_modes, dt, eval);
        state.e_modes = new_e;
        self.propagate(state, 0.5 * dt)?;
        Ok(())
    }

    /// RK4 step of the population envelopes with the field frozen.
    pub fn step_populations(&self, state: &mut ReducedState, dt: f64) -> Result<()> {
        self.check(state)?;
        let base = state.clone();
        let eval = |p: &BTreeMap<Mode, Vec<Vec<Complex64>>>| {
            let mut s = base.clone();
            s.pop_modes = p.clone();
            self.population_rates(&s)
        };
        state.pop_modes = rk4_map(&base.pop_modes, dt, eval);
        Ok(())
    }

    /// Symmetric composition of the population and field steps.
    pub fn step(&self, state: &mut ReducedState, dt: f64) -> Result<()> {
        self.step_populations(state, 0.5 * dt)?;
        self.step_field(state, dt)?;
        self.step_populations(state, 0.5 * dt)?;
        state.t += dt;
        Ok(())
    }

    /// Right-hand side of the slow system, used for time derivatives of correctors.
    pub fn rates(&self, state: &ReducedState) -> Result<ReducedRates> {
        self.check(state)?;
        let coupling = self.field_coupling(state);
        let mut e_rates = BTreeMap::new();
        for (mode, field) in &state.e_modes {
            let v = group_velocity(&self.lat, mode)?;
            let a = diffraction_coeff(&self.lat, mode)?;
            let src = &coupling[mode];
            let lin: Vec3Field = std::array::from_fn(|c| {
                self.fft.apply_symbol(&field[c], |k| {
                    let perp: f64 = k[1..].iter().map(|x| x * x).sum();
                    Complex64::new(0.0, -(v * k[0] + a * perp))
                })
            });
            let total: Vec3Field = std::array::from_fn(|c| {
                lin[c].iter().zip(&src[c]).map(|(a, b)| a + b).collect()
            });
            e_rates.insert(mode.clone(), total);
        }
        Ok(ReducedRates {
            e_modes: e_rates,
            pop_modes: self.population_rates(state),
        })
    }

    /// RK4 step in `T` of `dC/dT = i P[E . Gamma, C]`, `P` the projection on stored resonant slots.
    pub fn step_coherence_t(&self, state: &mut ReducedState, dbig_t: f64) -> Result<()> {
        if state.coh.is_empty() {
            state.big_t += dbig_t;
            return Ok(());
        }
        let tol = default_resonance_tol(&self.sys);
        for (m, n, mode) in state.coh.keys() {
            if m == n {
                return Err(Error::Profile(format!("diagonal coherence slot ({m},{n})")));
            }
            match resonant_harmonic(&self.sys, &self.lat, *m, *n, tol)? {
                Some(a1) if a1 == mode.alpha1 => {}
                _ => {
                    return Err(Error::Profile(format!(
                        "coherence ({m},{n}) stored on non-resonant harmonic {mode}"
                    )))
                }
            }
        }
        let modes = coupling_modes(self.lat.d(), &state.e_modes, Some(&state.field_means));
        let gs: Vec<(Mode, MatField)> = modes
            .iter()
            .map(|(m, e)| (m.clone(), dipole_fields(&self.sys, e)))
            .collect();
        let slots: Vec<CohKey> = state.coh.keys().cloned().collect();
        let n = self.sys.n_levels();
        let len = self.grid.len();
        let eval = |c: &BTreeMap<CohKey, Vec<Complex64>>| {
            let mut out: BTreeMap<CohKey, Vec<Complex64>> = BTreeMap::new();
            for key in &slots {
                let (m, k, target) = key;
                let mut acc = vec![Complex64::default(); len];
                for (alpha, g) in &gs {
                    // [G_alpha, C_beta](m,k) with beta = target - alpha.
                    let beta = target.add(&alpha.neg());
                    for j in 0..n {
                        if let Some(cjk) = c.get(&(j, *k, beta.clone())) {
                            let gmj = &g[m * n + j];
                            for p in 0..len {
                                acc[p] += gmj[p] * cjk[p];
                            }
                        }
                        if let Some(cmj) = c.get(&(*m, j, beta.clone())) {
                            let gjk = &g[j * n + k];
                            for p in 0..len {
                                acc[p] -= cmj[p] * gjk[p];
                            }
                        }
                    }
                }
                acc.iter_mut().for_each(|z| *z *= Complex64::i());
                out.insert(key.clone(), acc);
            }
            out
        };
        state.coh = rk4_map(&state.coh, dbig_t, eval);
        state.big_t += dbig_t;
        Ok(())
    }

    /// Gronwall constant `2 sup |E . Gamma|`, bounded by the sum of harmonic sup norms.
    pub fn coherence_growth_bound(&self, state: &ReducedState) -> f64 {
        let modes = coupling_modes(self.lat.d(), &state.e_modes, Some(&state.field_means));
        let n = self.sys.n_levels();
        let mut total = 0.0;
        for (_, e) in &modes {
            let g = dipole_fields(&self.sys, e);
            let sup = (0..self.grid.len())
                .map(|p| (0..n * n).map(|k| g[k][p].norm_sqr()).sum::<f64>().sqrt())
                .fold(0.0_f64, f64::max);
            total += sup;
        }
        2.0 * total
    }

    /// Exact `M2` semigroup on the 3D mean field along each `x` slice; identity for TM.
    pub fn evolve_mean_t(&self, state: &mut ReducedState, dbig_t: f64) -> Result<()> {
        if self.is_tm() {
            return Ok(());
        }
        let zero = Mode::zero(self.lat.d());
        let Some(mean) = state.field_means.get_mut(&zero) else {
            return Ok(());
        };
        let shape = self.grid.shape();
        let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
        let lengths = self.grid.lengths();
        let slice_grid = Grid::new(vec![ny, nz], vec![lengths[1], lengths[2]])?;
        for ix in 0..nx {
            let off = ix * ny * nz;
            let slice: Field6 = std::array::from_fn(|c| mean[c][off..off + ny * nz].to_vec());
            let out = semigroup_m2(&slice_grid, &slice, dbig_t)?;
            for c in 0..6 {
                mean[c][off..off + ny * nz].copy_from_slice(&out[c]);
            }
        }
        Ok(())
    }
}

/// Maps whose values are lists of equally sized complex buffers, for RK4 bookkeeping.
pub trait Buffers: Clone {
    fn for_each_pair(&mut self, other: &Self, f: &mut dyn FnMut(&mut Complex64, Complex64));
}

impl Buffers for Vec<Complex64> {
    fn for_each_pair(&mut self, other: &Self, f: &mut dyn FnMut(&mut Complex64, Complex64)) {
        for (a, b) in self.iter_mut().zip(other) {
            f(a, *b);
        }
    }
}

impl Buffers for Vec<Vec<Complex64>> {
    fn for_each_pair(&mut self, other: &Self, f: &mut dyn FnMut(&mut Complex64, Complex64)) {
        for (a, b) in self.iter_mut().zip(other) {
            a.for_each_pair(b, f);
        }
    }
}

impl Buffers for Vec3Field {
    fn for_each_pair(&mut self, other: &Self, f: &mut dyn FnMut(&mut Complex64, Complex64)) {
        for (a, b) in self.iter_mut().zip(other) {
            a.for_each_pair(b, f);
        }
    }
}

/// `x + h * k` over the keys of `x`; keys missing from `k` count as zero.
fn axpy<K: Ord + Clone, V: Buffers>(x: &BTreeMap<K, V>, h: f64, k: &BTreeMap<K, V>) -> BTreeMap<K, V> {
    let mut out = x.clone();
    for (key, v) in out.iter_mut() {
        if let Some(dk) = k.get(key) {
            v.for_each_pair(dk, &mut |a, b| *a += b * h);
        }
    }
    out
}

/// Classical RK4 on a map of buffers. Slots created by the right-hand side outside
/// the keys of `x` are dropped (polarization is enforced by the key set).
pub fn rk4_map<K: Ord + Clone, V: Buffers>(
    x: &BTreeMap<K, V>,
    h: f64,
    f: impl Fn(&BTreeMap<K, V>) -> BTreeMap<K, V>,
) -> BTreeMap<K, V> {
    let k1 = f(x);
    let k2 = f(&axpy(x, 0.5 * h, &k1));
    let k3 = f(&axpy(x, 0.5 * h, &k2));
    let k4 = f(&axpy(x, h, &k3));
    let mut out = x.clone();
    for (key, v) in out.iter_mut() {
        for (k, w) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
            if let Some(dk) = k.get(key) {
                v.for_each_pair(dk, &mut |a, b| *a += b * (h * w / 6.0));
            }
        }
    }
    out
}
