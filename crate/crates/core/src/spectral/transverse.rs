//! Transverse symbol `eta Ay + zeta Az`, its eigenprojectors, the exact semigroup and
//! finite-window averages along its bicharacteristics.

use nalgebra::Vector6;
use num_complex::Complex64;

use super::maxwell::{ay, az, Mat6};
use crate::error::{Error, Result};
use crate::grid::{for_each_index, Fft, Grid};

/// Six components on a transverse `(y, z)` grid, one flat buffer each.
pub type Field6 = [Vec<Complex64>; 6];

pub fn zero_field6(grid: &Grid) -> Field6 {
    std::array::from_fn(|_| grid.zeros())
}

pub fn m2_symbol(eta: f64, zeta: f64) -> Mat6 {
    ay() * eta + az() * zeta
}

/// Eigenvalue/projector pairs in the order `(0, +|xi|, -|xi|)`.
pub fn m2_spectral(eta: f64, zeta: f64) -> Result<[(f64, Mat6); 3]> {
    let r = eta.hypot(zeta);
    if r == 0.0 {
        return Err(Error::Invalid("transverse symbol needs a nonzero frequency".into()));
    }
    let xi = [0.0, eta / r, zeta / r];
    let perp = [0.0, -zeta / r, eta / r];
    let ex = [1.0, 0.0, 0.0];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let pair = |b: [f64; 3], e: [f64; 3]| {
        Vector6::from_column_slice(&[b[0], b[1], b[2], e[0], e[1], e[2]])
    };
    let mut p0 = Mat6::zeros();
    for v in [pair(xi, [0.0; 3]), pair([0.0; 3], xi)] {
        p0 += v * v.transpose();
    }
    let mut pp = Mat6::zeros();
    let mut pm = Mat6::zeros();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for e in [ex, perp] {
        let c = cross(xi, e);
        let vp = pair(c, e) * s;
        let vm = pair(c.map(|x| -x), e) * s;
        pp += vp * vp.transpose();
        pm += vm * vm.transpose();
    }
    Ok([(0.0, p0), (r, pp), (-r, pm)])
}

/// Eigenvalue branch of the transverse symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Zero,
    Plus,
    Minus,
}

impl Branch {
    pub fn lambda(self, eta: f64, zeta: f64) -> f64 {
        match self {
            Branch::Zero => 0.0,
            Branch::Plus => eta.hypot(zeta),
            Branch::Minus => -eta.hypot(zeta),
        }
    }
}

fn check_grid(grid: &Grid) -> Result<()> {
    if grid.ndim() != 2 {
        return Err(Error::GridMismatch(format!(
            "transverse fields live on a 2-axis grid, got {}",
            grid.ndim()
        )));
    }
    Ok(())
}

/// `exp(-dT M2(0, d_y, d_z)) u`, applied exactly per Fourier mode.
pub fn semigroup_m2(grid: &Grid, u: &Field6, dt: f64) -> Result<Field6> {
    check_grid(grid)?;
    let fft = Fft::new(grid);
    let mut hat = u.clone();
    for c in hat.iter_mut() {
        fft.forward(c);
    }
    let ky = grid.wavenumbers(0);
    let kz = grid.wavenumbers(1);
    let mut result = Ok(());
    for_each_index(grid.shape(), |flat, idx| {
        let (eta, zeta) = (ky[idx[0]], kz[idx[1]]);
        if eta == 0.0 && zeta == 0.0 {
            return;
        }
        let pairs = match m2_spectral(eta, zeta) {
            Ok(p) => p,
            Err(e) => {
                result = Err(e);
                return;
            }
        };
        let v = Vector6::from_fn(|c, _| hat[c][flat]);
        let mut out = Vector6::<Complex64>::zeros();
        for (lambda, p) in pairs {
            let phase = Complex64::from_polar(1.0, -lambda * dt);
            out += p.map(|x| Complex64::new(x, 0.0)) * v * phase;
        }
        for c in 0..6 {
            hat[c][flat] = out[c];
        }
    });
    result?;
    for c in hat.iter_mut() {
        fft.inverse(c);
    }
    Ok(hat)
}

/// Finite-window average along the bicharacteristics of `branch`:
/// `(1/S) int_0^S exp(i s lambda(D)) u(T + s) ds` by the trapezoid rule,
/// with `sample(j)` the field at `T + j * step`.
pub fn birkhoff_average_with(
    branch: Branch,
    grid: &Grid,
    step: f64,
    window: f64,
    mut sample: impl FnMut(usize) -> Field6,
) -> Result<Field6> {
    check_grid(grid)?;
    let ns = (window / step + 1e-9).floor() as usize;
    if !(step > 0.0) || ns < 2 {
        return Err(Error::ShortWindow { s: window, step });
    }
    let fft = Fft::new(grid);
    let ky = grid.wavenumbers(0);
    let kz = grid.wavenumbers(1);
    let lambda: Vec<f64> = {
        let mut l = vec![0.0; grid.len()];
        for_each_index(grid.shape(), |flat, idx| {
            l[flat] = branch.lambda(ky[idx[0]], kz[idx[1]]);
        });
        l
    };
    let mut acc = zero_field6(grid);
    for j in 0..=ns {
        let weight = if j == 0 || j == ns { 0.5 } else { 1.0 };
        let s = j as f64 * step;
        let mut u = sample(j);
        for (c, comp) in u.iter_mut().enumerate() {
            if comp.len() != grid.len() {
                return Err(Error::GridMismatch(format!("sample {j} component {c} has wrong size")));
            }
            fft.forward(comp);
            for (flat, z) in comp.iter().enumerate() {
                acc[c][flat] += z * Complex64::from_polar(weight, s * lambda[flat]);
            }
        }
    }
    let norm = 1.0 / (ns as f64);
    for comp in acc.iter_mut() {
        comp.iter_mut().for_each(|z| *z *= norm);
        fft.inverse(comp);
    }
    Ok(acc)
}

/// [`birkhoff_average_with`] over stored samples; `samples[0]` is the field at `T`.
pub fn birkhoff_average(
    branch: Branch,
    grid: &Grid,
    step: f64,
    samples: &[Field6],
    window: f64,
) -> Result<Field6> {
    let ns = (window / step + 1e-9).floor() as usize;
    if ns >= samples.len() {
        return Err(Error::Invalid(format!(
            "window {window} needs {} samples, got {}",
            ns + 1,
            samples.len()
        )));
    }
    birkhoff_average_with(branch, grid, step, window, |j| samples[j].clone())
}

/// Root-mean-square norm over grid points and components.
pub fn field6_norm(u: &Field6) -> f64 {
    let n = u[0].len().max(1) as f64;
    (u.iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr()).sum::<f64>() / n).sqrt()
}
