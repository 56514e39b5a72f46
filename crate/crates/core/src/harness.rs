//! Residuals of the approximate solution, stiff-versus-asymptotic convergence studies,
//! log-log slope fits, coherence decay fits and the averaging diagnostic.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{for_each_index, Grid};
use crate::profile_builder::{
    assemble_on_grid, build_corrector1_tm, build_corrector2_tm, evolve_leading, lift_initial_data, InitialData,
    ProfileSet, Sample,
};
use crate::quantum::LevelSystem;
use crate::reduced_model::ReducedModel;
use crate::spectral::{birkhoff_average_with, field6_norm, Branch, Field6, PhaseLattice};
use crate::stiff_solver::{check_singular_grid, initialize, DataMode, SingularState, StiffSolver};

/// Residual norms at one stored time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualSample {
    pub t: f64,
    pub sup: f64,
    pub l2: f64,
}

/// Transverse part of a singular grid.
pub fn transverse_grid(grid: &Grid) -> Result<Grid> {
    if grid.ndim() < 3 {
        return Err(Error::GridMismatch(format!("singular grid needs at least 3 axes, got {}", grid.ndim())));
    }
    Grid::new(grid.shape()[..2].to_vec(), grid.lengths()[..2].to_vec())
}

/// Scaled TM operator minus the nonlinearity, applied to a sampled state and its time derivative.
fn tm_residual(sys: &LevelSystem, lat: &PhaseLattice, u: &SingularState, ut: &SingularState) -> (f64, f64) {
    let eps = u.epsilon;
    let fft = crate::grid::Fft::new(&u.grid);
    let ks = lat.k().to_vec();
    let i = Complex64::i();
    let dx = |f: &[Complex64]| {
        fft.apply_symbol(f, |k| {
            let fast: f64 = ks.iter().enumerate().map(|(j, kj)| kj * k[2 + j]).sum();
            i * (k[0] + fast / eps)
        })
    };
    let dy = |f: &[Complex64]| fft.apply_symbol(f, |k| i * k[1] / eps.sqrt());
    let n = sys.n_levels();
    let g = sys.dipole_component(2);
    let omega = sys.omega();
    let gamma = sys.gamma();
    let w = sys.pauli();
    let (dx_e, dy_e, dx_by, dy_bx) = (dx(&u.e), dy(&u.e), dx(&u.by), dy(&u.bx));
    let (isq, sq) = (1.0 / eps.sqrt(), eps.sqrt());
    let mut sup = 0.0_f64;
    let mut sum = 0.0;
    let mut drho = vec![Complex64::default(); n * n];
    for p in 0..u.grid.len() {
        let rho = &u.rho[p * n * n..(p + 1) * n * n];
        let e = u.e[p];
        let mut tr = Complex64::default();
        for m in 0..n {
            for k in 0..n {
                if m != k {
                    tr += g[(m, k)] * Complex64::new(omega[k] - omega[m], -gamma) * rho[k * n + m];
                }
            }
        }
        let sharp: Vec<Complex64> = (0..n)
            .map(|a| (0..n).map(|b| rho[b * n + b] * w[(b, a)] - rho[a * n + a] * w[(a, b)]).sum())
            .collect();
        let tr_w: Complex64 = (0..n).map(|a| g[(a, a)] * sharp[a]).sum();
        let src = i * tr * isq - tr_w * sq;
        for m in 0..n {
            for k in 0..n {
                let mut c = Complex64::default();
                for j in 0..n {
                    c += g[(m, j)] * rho[j * n + k] - rho[m * n + j] * g[(j, k)];
                }
                let mut v = i * e * isq * c;
                if m == k {
                    v += sharp[m];
                } else {
                    v -= i / eps * Complex64::new(omega[m] - omega[k], -gamma) * rho[m * n + k];
                }
                drho[m * n + k] = ut.rho[p * n * n + m * n + k] - v;
            }
        }
        let r = [
            ut.bx[p] + dy_e[p],
            ut.by[p] - dx_e[p],
            ut.e[p] - dx_by[p] + dy_bx[p] - src,
        ];
        let mut local = 0.0;
        for z in r.iter().chain(drho.iter()) {
            sup = sup.max(z.norm());
            local += z.norm_sqr();
        }
        sum += local;
    }
    (sup, (sum / u.grid.len() as f64).sqrt())
}

/// Residual of `sum_{j <= max_order} sqrt(eps)^j U^j` at every stored frame.
pub fn residual_norms(
    profiles: &ProfileSet,
    epsilon: f64,
    grid: &Grid,
    max_order: u8,
) -> Result<Vec<ResidualSample>> {
    check_singular_grid(grid, &profiles.lat)?;
    (0..profiles.times.len())
        .into_par_iter()
        .map(|i| {
            let u = assemble_on_grid(profiles, epsilon, i, grid, max_order, Sample::Value)?;
            let ut = assemble_on_grid(profiles, epsilon, i, grid, max_order, Sample::TimeDerivative)?;
            let (sup, l2) = tm_residual(&profiles.sys, &profiles.lat, &u, &ut);
            Ok(ResidualSample {
                t: profiles.times[i],
                sup,
                l2,
            })
        })
        .collect()
}

/// Least-squares line through `(ln x, ln y)` with a 95% interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid("fit needs as many ordinates as abscissae".into()));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewPoints(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Invalid("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("fit abscissae must not all coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low: slope - t * se,
        ci_high: slope + t * se,
    })
}

/// Seeded perturbation: smooth random real fields and a trace-free population part,
/// each scaled to sup norm `amplitude`. Coherences are left at zero.
pub fn perturbation_field(grid: &Grid, n_levels: usize, seed: u64, amplitude: f64) -> SingularState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = grid.shape().to_vec();
    let ndim = shape.len();
    // Low harmonics: |m| <= 2 on the transverse axes, |m| <= 1 on the phase axes.
    let mut modes: Vec<Vec<i64>> = vec![vec![]];
    for axis in 0..ndim {
        let r: i64 = if axis < 2 { 2 } else { 1 };
        modes = modes
            .into_iter()
            .flat_map(|m| (-r..=r).map(move |v| [m.clone(), vec![v]].concat()))
            .collect();
    }
    let smooth = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
        let coeffs: Vec<(f64, f64)> = modes.iter().map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut f = vec![Complex64::default(); grid.len()];
        let mut x = vec![0.0; ndim];
        for_each_index(&shape, |flat, idx| {
            for a in 0..ndim {
                x[a] = idx[a] as f64 / shape[a] as f64;
            }
            let mut v = 0.0;
            for (m, (c, s)) in modes.iter().zip(&coeffs) {
                let ph: f64 = m.iter().zip(&x).map(|(&mi, xi)| 2.0 * std::f64::consts::PI * mi as f64 * xi).sum();
                v += c * ph.cos() + s * ph.sin();
            }
            f[flat] = Complex64::new(v, 0.0);
        });
        f
    };
    let scale = |f: &mut Vec<Complex64>| {
        let s = crate::grid::sup_norm(f);
        if s > 0.0 {
            f.iter_mut().for_each(|z| *z *= amplitude / s);
        }
    };
    let mut st = SingularState::zeros(grid, n_levels, 1.0);
    for f in [&mut st.bx, &mut st.by, &mut st.e] {
        *f = smooth(&mut rng);
        scale(f);
    }
    if n_levels > 1 {
        let mut pops: Vec<Vec<Complex64>> = (0..n_levels).map(|_| smooth(&mut rng)).collect();
        for p in 0..grid.len() {
            let mean = pops.iter().map(|f| f[p]).sum::<Complex64>() / n_levels as f64;
            pops.iter_mut().for_each(|f| f[p] -= mean);
        }
        let s = pops.iter().map(|f| crate::grid::sup_norm(f)).fold(0.0_f64, f64::max);
        for (j, f) in pops.iter_mut().enumerate() {
            if s > 0.0 {
                f.iter_mut().for_each(|z| *z *= amplitude / s);
            }
            st.set_rho_entry(j, j, f);
        }
    }
    st
}

/// Everything a convergence study needs.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub sys: LevelSystem,
    pub lat: PhaseLattice,
    /// Singular grid `(x, y, theta_0)`.
    pub grid: Grid,
    pub init: InitialData,
    pub epsilons: Vec<f64>,
    pub t_star: f64,
    pub n_frames: usize,
    /// Step of the leading-order integrator.
    pub reduced_dt: f64,
    /// Stiff step as a multiple of epsilon (capped by the CFL bound).
    pub dt_factor: f64,
    pub seed: u64,
    /// `delta = sqrt(eps) * perturbation_amplitude * field`.
    pub perturbation_amplitude: f64,
}

impl ConvergenceSetup {
    pub fn frame_times(&self) -> Vec<f64> {
        let n = self.n_frames.max(2);
        (0..n).map(|i| self.t_star * i as f64 / (n - 1) as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.epsilons.len() < 3 {
            return Err(Error::TooFewPoints(self.epsilons.len()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) || self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("epsilons must be positive and strictly decreasing".into()));
        }
        if !(self.t_star > 0.0) {
            return Err(Error::Invalid(format!("t_star must be positive, got {}", self.t_star)));
        }
        check_singular_grid(&self.grid, &self.lat)
    }
}

/// Lift, evolve and correct the profiles of a TM prepared setup.
pub fn build_tm_profiles(setup: &ConvergenceSetup) -> Result<ProfileSet> {
    let tgrid = transverse_grid(&setup.grid)?;
    let lifted = lift_initial_data(&setup.sys, &setup.lat, &tgrid, &setup.init)?;
    let model = ReducedModel::new(&setup.sys, &setup.lat, &tgrid)?;
    let leading = evolve_leading(&model, &lifted, &setup.frame_times(), setup.reduced_dt)?;
    build_corrector2_tm(&build_corrector1_tm(&leading)?)
}

/// Stiff step used for a given epsilon.
pub fn stiff_dt(solver: &StiffSolver, dt_factor: f64) -> f64 {
    (dt_factor * solver.epsilon()).min(solver.dt_max())
}

/// Sup over the stored frames of `|U - U_app|` for one epsilon, starting from `U_app(0) + delta`.
pub fn stiff_error(profiles: &ProfileSet, setup: &ConvergenceSetup, epsilon: f64) -> Result<f64> {
    let solver = StiffSolver::new(&setup.sys, &setup.lat, &setup.grid, epsilon)?;
    let mut delta = perturbation_field(&setup.grid, setup.sys.n_levels(), setup.seed, setup.perturbation_amplitude * epsilon.sqrt());
    delta.epsilon = epsilon;
    let mut state = initialize(profiles, Some(&delta), epsilon, &setup.grid, DataMode::Prepared)?;
    let dt = stiff_dt(&solver, setup.dt_factor);
    let mut worst = 0.0_f64;
    for (i, &t) in profiles.times.iter().enumerate() {
        if i > 0 {
            solver.run(&mut state, t, dt, usize::MAX, |_| {})?;
        }
        let app = assemble_on_grid(profiles, epsilon, i, &setup.grid, 2, Sample::Value)?;
        worst = worst.max(state.max_abs_diff(&app));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub error_norms: Vec<f64>,
    pub residual_fit: Option<SlopeFit>,
    pub error_fit: Option<SlopeFit>,
    /// Wall-clock seconds per epsilon; kept out of the serialized report so that
    /// reports are reproducible byte for byte.
    #[serde(skip)]
    pub runtimes: Vec<f64>,
    /// Per-epsilon failure diagnostic; failed runs are excluded from the fits.
    pub failures: Vec<Option<String>>,
}

impl ConvergenceReport {
    pub const CSV_HEADER: [&'static str; 4] = ["epsilon", "residual_sup", "error_sup", "failed"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        (0..self.epsilons.len())
            .map(|i| {
                vec![
                    format!("{:e}", self.epsilons[i]),
                    format!("{:e}", self.residual_norms[i]),
                    self.error_norms.get(i).map_or_else(String::new, |v| format!("{v:e}")),
                    self.failures[i].clone().unwrap_or_default(),
                ]
            })
            .collect()
    }
}

/// What a convergence study computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    ResidualOnly,
    Full,
}

fn fit_ok(eps: &[f64], vals: &[f64], failures: &[Option<String>]) -> Option<SlopeFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(vals)
        .zip(failures)
        .filter(|((_, v), f)| f.is_none() && **v > 0.0)
        .map(|((e, v), _)| (*e, *v))
        .unzip();
    fit_loglog(&x, &y).ok()
}

/// Residual (and optionally stiff error) sup norms over `[0, t_star]` for every epsilon.
pub fn convergence_study(setup: &ConvergenceSetup, study: Study) -> Result<ConvergenceReport> {
    setup.validate()?;
    let profiles = build_tm_profiles(setup)?;
    let rows: Vec<(f64, Option<f64>, f64, Option<String>)> = setup
        .epsilons
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let residual = residual_norms(&profiles, eps, &setup.grid, 2)
                .map(|r| r.iter().fold(0.0_f64, |a, s| a.max(s.sup)));
            let residual = match residual {
                Ok(r) => r,
                Err(e) => return (f64::NAN, None, 0.0, Some(e.to_string())),
            };
            let (error, failure) = match study {
                Study::ResidualOnly => (None, None),
                Study::Full => match stiff_error(&profiles, setup, eps) {
                    Ok(v) => (Some(v), None),
                    Err(e) => (Some(f64::NAN), Some(e.to_string())),
                },
            };
            (residual, error, start.elapsed().as_secs_f64(), failure)
        })
        .collect();
    let residual_norms: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let error_norms: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    let runtimes = rows.iter().map(|r| r.2).collect();
    let failures: Vec<Option<String>> = rows.into_iter().map(|r| r.3).collect();
    let residual_fit = fit_ok(&setup.epsilons, &residual_norms, &failures);
    let error_fit = if study == Study::Full {
        fit_ok(&setup.epsilons, &error_norms, &failures)
    } else {
        None
    };
    Ok(ConvergenceReport {
        epsilons: setup.epsilons.clone(),
        residual_norms,
        error_norms,
        residual_fit,
        error_fit,
        runtimes,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub samples: usize,
}

/// Fit `log |C(t)|` over the window `[0, 5 eps / gamma]`; `series` holds `(t, |C(t)|)`.
pub fn decay_fit(series: &[(f64, f64)], sys: &LevelSystem, epsilon: f64) -> Result<DecayFit> {
    if series.iter().all(|(_, c)| *c == 0.0) {
        return Err(Error::NoSignal("coherence norm vanishes identically".into()));
    }
    let window = 5.0 * epsilon / sys.gamma();
    let t0 = series.first().map_or(0.0, |s| s.0);
    let (ts, ls): (Vec<f64>, Vec<f64>) = series
        .iter()
        .take_while(|(_, c)| *c > f64::MIN_POSITIVE)
        .filter(|(t, _)| *t - t0 <= window * (1.0 + 1e-12))
        .map(|(t, c)| (*t, c.ln()))
        .unzip();
    if ts.len() < 3 {
        return Err(Error::TooFewPoints(ts.len()));
    }
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let ml = ls.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let stl: f64 = ts.iter().zip(&ls).map(|(t, l)| (t - mt) * (l - ml)).sum();
    let rate = stl / stt;
    let expected = -sys.gamma() / epsilon;
    Ok(DecayFit {
        rate,
        expected,
        relative_error: ((rate - expected) / expected).abs(),
        samples: ts.len(),
    })
}

/// `(S, |G^S u|)` for each window `S`; `sample(j)` is the field at `T + j * step`.
pub fn sublinearity_diagnostic(
    branch: Branch,
    grid: &Grid,
    step: f64,
    windows: &[f64],
    sample: impl Fn(usize) -> Field6,
) -> Result<Vec<(f64, f64)>> {
    windows
        .iter()
        .map(|&s| Ok((s, field6_norm(&birkhoff_average_with(branch, grid, step, s, &sample)?))))
        .collect()
}
