//! Strang-split integrator for the scaled TM system in singular-profile form.
//!
//! Unknowns live on a periodic `(x, y, theta_0)` grid with `theta_0` on a `d`-torus
//! (shape `[nx, ny, n_theta, ..., n_theta]`); the fast phase enters only through the
//! coefficient `k/eps` multiplying `d/d theta_0`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{for_each_index, Fft, Grid};
use crate::quantum::LevelSystem;
use crate::profile_builder::{assemble_on_grid, Component, InitialData, ProfileSet, Sample};
use crate::spectral::{BX, BY, EZ};
use crate::spectral::PhaseLattice;

pub const DEFAULT_C_CFL: f64 = 0.5;

/// TM fields and the density matrix sampled on the singular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularState {
    pub grid: Grid,
    pub n_levels: usize,
    pub bx: Vec<Complex64>,
    pub by: Vec<Complex64>,
    pub e: Vec<Complex64>,
    /// Point-major: entry `(m, n)` at point `p` is `rho[p * N * N + m * N + n]`.
    pub rho: Vec<Complex64>,
    pub epsilon: f64,
    pub time: f64,
}

impl SingularState {
    pub fn zeros(grid: &Grid, n_levels: usize, epsilon: f64) -> Self {
        Self {
            grid: grid.clone(),
            n_levels,
            bx: grid.zeros(),
            by: grid.zeros(),
            e: grid.zeros(),
            rho: vec![Complex64::default(); grid.len() * n_levels * n_levels],
            epsilon,
            time: 0.0,
        }
    }

    /// Fill every point's diagonal with `pops`.
    pub fn set_populations(&mut self, pops: &[f64]) {
        let n = self.n_levels;
        for p in self.rho.chunks_exact_mut(n * n) {
            for (i, &v) in pops.iter().enumerate() {
                p[i * n + i] = Complex64::new(v, 0.0);
            }
        }
    }

    /// Entry `(m, n)` of rho as a grid field.
    pub fn rho_entry(&self, m: usize, n: usize) -> Vec<Complex64> {
        let nn = self.n_levels * self.n_levels;
        let off = m * self.n_levels + n;
        self.rho.iter().skip(off).step_by(nn).copied().collect()
    }

    pub fn set_rho_entry(&mut self, m: usize, n: usize, field: &[Complex64]) {
        let nn = self.n_levels * self.n_levels;
        let off = m * self.n_levels + n;
        for (p, v) in field.iter().enumerate() {
            self.rho[p * nn + off] = *v;
        }
    }

    /// Largest pointwise difference over all fields and matrix entries.
    pub fn max_abs_diff(&self, other: &SingularState) -> f64 {
        let d = |a: &[Complex64], b: &[Complex64]| {
            a.iter()
                .zip(b)
                .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
        };
        d(&self.bx, &other.bx)
            .max(d(&self.by, &other.by))
            .max(d(&self.e, &other.e))
            .max(d(&self.rho, &other.rho))
    }

    pub fn is_finite(&self) -> bool {
        self.bx
            .iter()
            .chain(&self.by)
            .chain(&self.e)
            .chain(&self.rho)
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Mean over the grid of `Bx^2 + By^2 + E^2`.
    pub fn em_energy(&self) -> f64 {
        let s: f64 = self
            .bx
            .iter()
            .chain(&self.by)
            .chain(&self.e)
            .map(|z| z.norm_sqr())
            .sum();
        s / self.grid.len() as f64
    }

    /// Grid mean of the trace of rho.
    pub fn mean_trace(&self) -> f64 {
        let n = self.n_levels;
        let s: f64 = self
            .rho
            .chunks_exact(n * n)
            .map(|p| (0..n).map(|i| p[i * n + i].re).sum::<f64>())
            .sum();
        s / self.grid.len() as f64
    }

    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n_levels;
        self.rho.chunks_exact(n * n).fold(0.0_f64, |acc, p| {
            let mut w = acc;
            for i in 0..n {
                for j in i..n {
                    w = w.max((p[i * n + j] - p[j * n + i].conj()).norm());
                }
            }
            w
        })
    }

    /// Root-mean-square of the off-diagonal entries.
    pub fn coherence_norm(&self) -> f64 {
        let n = self.n_levels;
        let s: f64 = self
            .rho
            .chunks_exact(n * n)
            .map(|p| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            acc += p[i * n + j].norm_sqr();
                        }
                    }
                }
                acc
            })
            .sum();
        (s / self.grid.len() as f64).sqrt()
    }
}

/// One observer sample; column order matches the CSV contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    pub t: f64,
    pub sup_norm_e: f64,
    pub l2_energy: f64,
    pub trace_rho: f64,
    pub herm_defect: f64,
    pub coh_norm: f64,
    pub div_defect: f64,
}

impl Observation {
    pub const HEADER: [&'static str; 7] = [
        "t",
        "sup_norm_E",
        "l2_energy",
        "trace_rho",
        "herm_defect",
        "coh_norm",
        "div_defect",
    ];

    pub fn row(&self) -> [f64; 7] {
        [
            self.t,
            self.sup_norm_e,
            self.l2_energy,
            self.trace_rho,
            self.herm_defect,
            self.coh_norm,
            self.div_defect,
        ]
    }
}

/// Integration scheme for the pointwise coupling substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingScheme {
    Midpoint,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct StiffSolver {
    sys: LevelSystem,
    lat: PhaseLattice,
    grid: Grid,
    fft: Fft,
    epsilon: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    keep: Vec<bool>,
    gz: Vec<Complex64>,
    pub c_cfl: f64,
    pub scheme: CouplingScheme,
}

impl StiffSolver {
    /// `grid` must have shape `[nx, ny, n_theta; d]` with the theta axes of period `2 pi`.
    pub fn new(sys: &LevelSystem, lat: &PhaseLattice, grid: &Grid, epsilon: f64) -> Result<Self> {
        check_singular_grid(grid, lat)?;
        if !(epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let shape = grid.shape().to_vec();
        let kx = grid.wavenumbers(0);
        let ky = grid.wavenumbers(1);
        let sq = epsilon.sqrt();
        let mut a = vec![0.0; grid.len()];
        let mut b = vec![0.0; grid.len()];
        let mut keep = vec![true; grid.len()];
        for_each_index(&shape, |flat, idx| {
            let mut phase = 0.0;
            for (j, &k) in lat.k().iter().enumerate() {
                if !grid.is_nyquist(2 + j, idx[2 + j]) {
                    phase += k * grid.mode_index(2 + j, idx[2 + j]) as f64;
                }
            }
            a[flat] = kx[idx[0]] + phase / epsilon;
            b[flat] = ky[idx[1]] / sq;
            keep[flat] = (0..shape.len()).all(|ax| grid.dealias_keep(ax, idx[ax]));
        });
        let n = sys.n_levels();
        let gz = (0..n * n).map(|i| sys.dipole(i / n, i % n)[2]).collect();
        Ok(Self {
            sys: sys.clone(),
            lat: lat.clone(),
            grid: grid.clone(),
            fft: Fft::new(grid),
            epsilon,
            a,
            b,
            keep,
            gz,
            c_cfl: DEFAULT_C_CFL,
            scheme: CouplingScheme::Rk4,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn system(&self) -> &LevelSystem {
        &self.sys
    }

    pub fn lattice(&self) -> &PhaseLattice {
        &self.lat
    }

    /// `c_cfl * min(sqrt(eps), h_x, sqrt(eps) h_y)`.
    pub fn dt_max(&self) -> f64 {
        let sq = self.epsilon.sqrt();
        self.c_cfl * sq.min(self.grid.spacing(0)).min(sq * self.grid.spacing(1))
    }

    fn check_state(&self, state: &SingularState) -> Result<()> {
        if state.grid != self.grid || state.n_levels != self.sys.n_levels() {
            return Err(Error::GridMismatch("state does not match the solver grid".into()));
        }
        if state.epsilon != self.epsilon {
            return Err(Error::GridMismatch(format!(
                "state epsilon {} differs from solver epsilon {}",
                state.epsilon, self.epsilon
            )));
        }
        Ok(())
    }

    /// Exact flow of the linear part over `tau`; also applies the field dealiasing mask.
    pub fn linear(&self, state: &mut SingularState, tau: f64) {
        let fft = &self.fft;
        let (bx, by, e) = (&mut state.bx, &mut state.by, &mut state.e);
        rayon::scope(|s| {
            s.spawn(|_| fft.forward(bx));
            s.spawn(|_| fft.forward(by));
            s.spawn(|_| fft.forward(e));
        });
        let i = Complex64::i();
        for p in 0..self.grid.len() {
            if !self.keep[p] {
                bx[p] = Complex64::default();
                by[p] = Complex64::default();
                e[p] = Complex64::default();
                continue;
            }
            let (a, b) = (self.a[p], self.b[p]);
            let r2 = a * a + b * b;
            if r2 == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let (sn, cs) = (r * tau).sin_cos();
            let (u0, u1, u2) = (bx[p], by[p], e[p]);
            // S u and S^2 u for S = [[0,0,-b],[0,0,a],[-b,a,0]].
            let s0 = -b * u2;
            let s1 = a * u2;
            let s2 = -b * u0 + a * u1;
            let q0 = -b * s2;
            let q1 = a * s2;
            let q2 = -b * s0 + a * s1;
            let c1 = (cs - 1.0) / r2;
            let c2 = i * (sn / r);
            bx[p] = u0 + q0 * c1 + s0 * c2;
            by[p] = u1 + q1 * c1 + s1 * c2;
            e[p] = u2 + q2 * c1 + s2 * c2;
        }
        rayon::scope(|s| {
            s.spawn(|_| fft.inverse(bx));
            s.spawn(|_| fft.inverse(by));
            s.spawn(|_| fft.inverse(e));
        });
        for f in [bx, by, e] {
            f.iter_mut().for_each(|z| z.im = 0.0);
        }
        let n = self.sys.n_levels();
        let w = self.sys.omega();
        let g = self.sys.gamma();
        let mut decay = vec![Complex64::new(1.0, 0.0); n * n];
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    decay[m * n + k] = Complex64::new(-g * tau / self.epsilon, -(w[m] - w[k]) * tau / self.epsilon).exp();
                }
            }
        }
        state.rho.par_chunks_mut(n * n).for_each(|pt| {
            for (z, f) in pt.iter_mut().zip(&decay) {
                *z *= f;
            }
        });
    }

    /// Pointwise coupling flow over `tau`, followed by dealiasing of rho.
    pub fn coupling(&self, state: &mut SingularState, tau: f64) {
        let n = self.sys.n_levels();
        let omega = self.sys.omega();
        let gamma = self.sys.gamma();
        let dipole: Vec<(usize, usize, Complex64)> = (0..n * n)
            .filter(|&j| self.gz[j].norm() != 0.0)
            .map(|j| (j / n, j % n, self.gz[j]))
            .collect();
        let ctx = PointCtx {
            n,
            trace_weights: dipole
                .iter()
                .filter(|(m, k, _)| m != k)
                .map(|&(m, k, g)| (k * n + m, g * Complex64::new(omega[k] - omega[m], -gamma)))
                .collect(),
            dipole,
            pauli: self.sys.pauli().transpose().iter().copied().collect(),
            inv_sqrt_eps: 1.0 / self.epsilon.sqrt(),
            sqrt_eps: self.epsilon.sqrt(),
        };
        let scheme = self.scheme;
        const CHUNK: usize = 256;
        state
            .e
            .par_chunks_mut(CHUNK)
            .zip(state.rho.par_chunks_mut(n * n * CHUNK))
            .for_each(|(es, rhos)| {
                let mut scratch = Scratch::new(n);
                for (e, rho) in es.iter_mut().zip(rhos.chunks_exact_mut(n * n)) {
                    let mut ev = e.re;
                    match scheme {
                        CouplingScheme::Rk4 => ctx.rk4(&mut ev, rho, tau, &mut scratch),
                        CouplingScheme::Midpoint => ctx.midpoint(&mut ev, rho, tau, &mut scratch),
                    }
                    *e = Complex64::new(ev, 0.0);
                }
            });
        self.dealias_rho(state);
    }

    fn dealias_rho(&self, state: &mut SingularState) {
        let n = self.sys.n_levels();
        let entries: Vec<(usize, Vec<Complex64>)> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let mut f = state.rho_entry(k / n, k % n);
                self.fft.forward(&mut f);
                for (z, &keep) in f.iter_mut().zip(&self.keep) {
                    if !keep {
                        *z = Complex64::default();
                    }
                }
                self.fft.inverse(&mut f);
                (k, f)
            })
            .collect();
        for (k, f) in entries {
            state.set_rho_entry(k / n, k % n, &f);
        }
    }

    /// One Strang step `L(dt/2) N(dt) L(dt/2)`.
    pub fn step(&self, state: &mut SingularState, dt: f64) -> Result<()> {
        self.check_state(state)?;
        self.check_dt(dt)?;
        self.linear(state, 0.5 * dt);
        self.coupling(state, dt);
        self.linear(state, 0.5 * dt);
        state.time += dt;
        if !state.is_finite() {
            return Err(Error::NonFinite {
                what: "stiff state".into(),
                t: state.time,
            });
        }
        Ok(())
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        let max = self.dt_max();
        if !dt.is_finite() || dt.abs() > max * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, max });
        }
        Ok(())
    }

    /// Advance to `t_final` with at most `dt` per step (the last steps are shortened
    /// uniformly so that `t_final` is hit exactly). The observer sees the state every
    /// `stride` steps and at the end.
    pub fn run(
        &self,
        state: &mut SingularState,
        t_final: f64,
        dt: f64,
        stride: usize,
        mut observer: impl FnMut(&SingularState),
    ) -> Result<Vec<Observation>> {
        self.check_state(state)?;
        if !(t_final > state.time) {
            return Err(Error::Invalid(format!(
                "final time {t_final} must exceed current time {}",
                state.time
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        let span = t_final - state.time;
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        self.check_dt(h)?;
        let stride = stride.max(1);
        let t0 = state.time;
        let mut series = Vec::new();
        // Adjacent half steps of the linear flow are fused between observations.
        self.linear(state, 0.5 * h);
        for s in 1..=steps {
            self.coupling(state, h);
            let observe = s % stride == 0 || s == steps;
            if observe {
                self.linear(state, 0.5 * h);
                state.time = t0 + s as f64 * h;
                if !state.is_finite() {
                    return Err(Error::NonFinite {
                        what: "stiff state".into(),
                        t: state.time,
                    });
                }
                series.push(self.observe(state));
                observer(state);
                if s < steps {
                    self.linear(state, 0.5 * h);
                }
            } else {
                self.linear(state, h);
            }
        }
        state.time = t_final;
        Ok(series)
    }

    pub fn observe(&self, state: &SingularState) -> Observation {
        Observation {
            t: state.time,
            sup_norm_e: crate::grid::sup_norm(&state.e),
            l2_energy: state.em_energy(),
            trace_rho: state.mean_trace(),
            herm_defect: state.hermitian_defect(),
            coh_norm: state.coherence_norm(),
            div_defect: self.divergence_defect(state),
        }
    }

    /// RMS of `(d_x + (k/eps) d_theta) Bx + eps^{-1/2} d_y By`.
    pub fn divergence_defect(&self, state: &SingularState) -> f64 {
        let mut bx = state.bx.clone();
        let mut by = state.by.clone();
        self.fft.forward(&mut bx);
        self.fft.forward(&mut by);
        let s: f64 = (0..bx.len())
            .map(|p| (bx[p] * self.a[p] + by[p] * self.b[p]).norm_sqr())
            .sum();
        s.sqrt() / self.grid.len() as f64
    }
}

/// Whether coherences may be present at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Prepared,
    Unprepared,
}

/// Sample the profile data at `t = 0` on `grid` and add the perturbation `delta`.
pub fn initialize(
    profiles: &ProfileSet,
    delta: Option<&SingularState>,
    epsilon: f64,
    grid: &Grid,
    mode: DataMode,
) -> Result<SingularState> {
    let i = profiles.frame_index(0.0)?;
    if mode == DataMode::Prepared {
        let leading_coh = profiles.frames[i]
            .keys()
            .any(|k| k.j == 0 && matches!(k.comp, Component::Rho(m, n) if m != n));
        if leading_coh || delta.is_some_and(|d| d.coherence_norm() > 0.0) {
            return Err(Error::PreparedCoherence);
        }
    }
    let mut state = assemble_on_grid(profiles, epsilon, i, grid, 2, Sample::Value)?;
    if let Some(d) = delta {
        if d.grid != *grid || d.n_levels != state.n_levels {
            return Err(Error::GridMismatch("perturbation lives on a different grid".into()));
        }
        for (dst, src) in [
            (&mut state.bx, &d.bx),
            (&mut state.by, &d.by),
            (&mut state.e, &d.e),
            (&mut state.rho, &d.rho),
        ] {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }
    state.time = 0.0;
    Ok(state)
}

/// Initial data `sum_beta u_beta(x, y) e^{i beta . theta_0}` sampled on the singular grid,
/// with coherences included as given (no lifting).
pub fn sample_initial_data(init: &InitialData, grid: &Grid, n_levels: usize, epsilon: f64) -> Result<SingularState> {
    let mut st = SingularState::zeros(grid, n_levels, epsilon);
    let theta_shape = grid.shape()[2..].to_vec();
    let nq: usize = theta_shape.iter().product();
    let np = grid.shape()[0] * grid.shape()[1];
    let phases = |beta: &[i64]| -> Result<Vec<Complex64>> {
        if beta.len() != theta_shape.len() {
            return Err(Error::GridMismatch(format!("harmonic {beta:?} does not match the phase axes")));
        }
        let mut out = vec![Complex64::default(); nq];
        for_each_index(&theta_shape, |q, idx| {
            let ph: f64 = idx
                .iter()
                .zip(beta)
                .zip(&theta_shape)
                .map(|((&i, &b), &n)| 2.0 * std::f64::consts::PI * (i as i64 * b) as f64 / n as f64)
                .sum();
            out[q] = Complex64::from_polar(1.0, ph);
        });
        Ok(out)
    };
    let check = |f: &[Complex64]| {
        if f.len() != np {
            Err(Error::GridMismatch(format!("data has {} points, transverse grid has {np}", f.len())))
        } else {
            Ok(())
        }
    };
    let add = |target: &mut Vec<Complex64>, stride: usize, offset: usize, f: &[Complex64], ph: &[Complex64]| {
        for p in 0..np {
            for (q, w) in ph.iter().enumerate() {
                target[(p * nq + q) * stride + offset] += f[p] * w;
            }
        }
    };
    for (beta, u) in &init.fields {
        let ph = phases(beta)?;
        for (slot, f) in u.iter().enumerate() {
            if f.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            check(f)?;
            match slot {
                BX => add(&mut st.bx, 1, 0, f, &ph),
                BY => add(&mut st.by, 1, 0, f, &ph),
                EZ => add(&mut st.e, 1, 0, f, &ph),
                _ => return Err(Error::Invalid(format!("component {slot} is not carried by the TM system"))),
            }
        }
    }
    let nn = n_levels * n_levels;
    for (beta, pops) in &init.populations {
        let ph = phases(beta)?;
        for (j, f) in pops.iter().enumerate() {
            check(f)?;
            add(&mut st.rho, nn, j * n_levels + j, f, &ph);
        }
    }
    for ((m, n, beta), f) in &init.coherences {
        check(f)?;
        let ph = phases(beta)?;
        add(&mut st.rho, nn, m * n_levels + n, f, &ph);
    }
    Ok(st)
}

/// Checks the singular grid layout against the lattice dimension.
pub fn check_singular_grid(grid: &Grid, lat: &PhaseLattice) -> Result<()> {
    if grid.ndim() != 2 + lat.d() {
        return Err(Error::GridMismatch(format!(
            "singular grid needs {} axes, got {}",
            2 + lat.d(),
            grid.ndim()
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    if grid.lengths()[2..].iter().any(|l| (l - two_pi).abs() > 1e-12) {
        return Err(Error::GridMismatch("phase axes must have period 2 pi".into()));
    }
    Ok(())
}

/// Singular grid `[nx, ny, n_theta; d]` with phase axes of period `2 pi`.
pub fn singular_grid(nx: usize, ny: usize, n_theta: usize, lx: f64, ly: f64, d: usize) -> Result<Grid> {
    let mut shape = vec![nx, ny];
    let mut lengths = vec![lx, ly];
    for _ in 0..d {
        shape.push(n_theta);
        lengths.push(2.0 * std::f64::consts::PI);
    }
    Grid::new(shape, lengths)
}

struct PointCtx {
    n: usize,
    /// Nonzero dipole entries `(m, n, g)`.
    dipole: Vec<(usize, usize, Complex64)>,
    /// `(flat index of C(k,m), g(m,k) (omega(k) - omega(m) - i gamma))` for `m != k`.
    trace_weights: Vec<(usize, Complex64)>,
    /// Row-major rate matrix.
    pauli: Vec<f64>,
    inv_sqrt_eps: f64,
    sqrt_eps: f64,
}

struct Scratch {
    k: [Vec<Complex64>; 4],
    ke: [f64; 4],
    buf: Vec<Complex64>,
    pops: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = vec![Complex64::default(); n * n];
        Self {
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            ke: [0.0; 4],
            buf: z,
            pops: vec![0.0; n],
        }
    }
}

impl PointCtx {
    /// Right-hand side of the pointwise coupling system for `(E, rho)`.
    fn rhs(&self, e: f64, rho: &[Complex64], pops: &mut [f64], drho: &mut [Complex64]) -> f64 {
        let n = self.n;
        let w = &self.pauli;
        // Tr(g Omega_gamma C) = sum_{m != k} g(m,k) (omega(k) - omega(m) - i gamma) C(k,m).
        let tr: Complex64 = self.trace_weights.iter().map(|&(j, c)| c * rho[j]).sum();
        // Gain-loss term, written into `pops`.
        for a in 0..n {
            let na = rho[a * n + a].re;
            let mut v = 0.0;
            for b in 0..n {
                v += w[b * n + a] * rho[b * n + b].re - w[a * n + b] * na;
            }
            pops[a] = v;
        }
        drho.iter_mut().for_each(|z| *z = Complex64::default());
        let mut tr_w = Complex64::default();
        for &(a, b, g) in &self.dipole {
            if a == b {
                tr_w += g * pops[a];
            }
            // [g, rho] gains g(a,b) rho(b,k) in row a and loses rho(m,a) g(a,b) in column b.
            for k in 0..n {
                drho[a * n + k] += g * rho[b * n + k];
                drho[k * n + b] -= rho[k * n + a] * g;
            }
        }
        let coef = Complex64::new(0.0, e * self.inv_sqrt_eps);
        for m in 0..n {
            for k in 0..n {
                drho[m * n + k] *= coef;
            }
            drho[m * n + m] += pops[m];
        }
        -tr.im * self.inv_sqrt_eps - self.sqrt_eps * tr_w.re
    }

    fn rk4(&self, e: &mut f64, rho: &mut [Complex64], tau: f64, s: &mut Scratch) {
        let weights = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            let mut es = *e;
            if stage == 0 {
                s.buf.copy_from_slice(rho);
            } else {
                es += weights[stage] * tau * s.ke[stage - 1];
                for j in 0..rho.len() {
                    s.buf[j] = rho[j] + s.k[stage - 1][j] * (weights[stage] * tau);
                }
            }
            s.ke[stage] = self.rhs(es, &s.buf, &mut s.pops, &mut s.k[stage]);
        }
        *e += tau / 6.0 * (s.ke[0] + 2.0 * s.ke[1] + 2.0 * s.ke[2] + s.ke[3]);
        for j in 0..rho.len() {
            rho[j] += (s.k[0][j] + s.k[1][j] * 2.0 + s.k[2][j] * 2.0 + s.k[3][j]) * (tau / 6.0);
        }
    }

    fn midpoint(&self, e: &mut f64, rho: &mut [Complex64], tau: f64, s: &mut Scratch) {
        let e1 = self.rhs(*e, rho, &mut s.pops, &mut s.k[0]);
        for j in 0..rho.len() {
            s.buf[j] = rho[j] + s.k[0][j] * (0.5 * tau);
        }
        let e2 = self.rhs(*e + 0.5 * tau * e1, &s.buf, &mut s.pops, &mut s.k[1]);
        *e += tau * e2;
        for j in 0..rho.len() {
            rho[j] += s.k[1][j] * tau;
        }
    }
}
