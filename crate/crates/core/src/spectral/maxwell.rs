//! Maxwell symbol on `R^6 = (Bx, By, Bz, Ex, Ey, Ez)`: kernels, projectors, pseudo-inverses.

use nalgebra::{Matrix6, Vector6};
use num_complex::Complex64;

use super::{classify_mode, Mode, ModeClass, PhaseLattice};
use crate::error::{Error, Result};

pub type Mat6 = Matrix6<f64>;
pub type CMat6 = Matrix6<Complex64>;

/// Component slots of a field 6-vector.
pub const BX: usize = 0;
pub const BY: usize = 1;
pub const BZ: usize = 2;
pub const EX: usize = 3;
pub const EY: usize = 4;
pub const EZ: usize = 5;

/// Matrix of `u -> (e x E, -e x B)` for the unit vector `e` along `axis`.
pub fn curl_matrix(axis: usize) -> Mat6 {
    // With (i, j, l) cyclic and e = e_i: e x v = v_j e_l - v_l e_j.
    let (j, l) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let mut m = Mat6::zeros();
    for (row0, col0, sign) in [(0, 3, 1.0), (3, 0, -1.0)] {
        m[(row0 + l, col0 + j)] += sign;
        m[(row0 + j, col0 + l)] -= sign;
    }
    m
}

pub fn ax() -> Mat6 {
    curl_matrix(0)
}

pub fn ay() -> Mat6 {
    curl_matrix(1)
}

pub fn az() -> Mat6 {
    curl_matrix(2)
}

fn outer_sum(vs: &[Vector6<f64>]) -> Mat6 {
    vs.iter().fold(Mat6::zeros(), |acc, v| acc + v * v.transpose())
}

fn unit(entries: [(usize, f64); 2]) -> Vector6<f64> {
    let mut v = Vector6::zeros();
    for (i, x) in entries {
        v[i] = x;
    }
    v / 2.0_f64.sqrt()
}

/// Eigenprojector of `ax()` for eigenvalue `+1` (`By = -Ez`, `Bz = Ey`).
pub fn pi_plus() -> Mat6 {
    outer_sum(&[unit([(BY, 1.0), (EZ, -1.0)]), unit([(BZ, 1.0), (EY, 1.0)])])
}

/// Eigenprojector of `ax()` for eigenvalue `-1` (`By = Ez`, `Bz = -Ey`).
pub fn pi_minus() -> Mat6 {
    outer_sum(&[unit([(BY, 1.0), (EZ, 1.0)]), unit([(BZ, 1.0), (EY, -1.0)])])
}

/// Kernel projector of `ax()`: the longitudinal components.
pub fn pi_zero() -> Mat6 {
    let mut m = Mat6::zeros();
    m[(BX, BX)] = 1.0;
    m[(EX, EX)] = 1.0;
    m
}

/// Orthogonal projector onto the kernel of the phase symbol at `mode`.
pub fn pi_projector(lat: &PhaseLattice, mode: &Mode) -> Mat6 {
    match classify_mode(lat, mode) {
        ModeClass::Mean => Mat6::identity(),
        ModeClass::CPlus => pi_plus(),
        ModeClass::CMinus => pi_minus(),
        ModeClass::CZero => pi_zero(),
        ModeClass::NonCharacteristic => Mat6::zeros(),
    }
}

/// Phase symbol `-i(k.alpha1) I + i(k.alpha0) Ax`.
pub fn m1_symbol(lat: &PhaseLattice, mode: &Mode) -> CMat6 {
    let s1 = lat.dot(&mode.alpha1);
    let s0 = lat.dot(&mode.alpha0);
    let i = Complex64::i();
    CMat6::identity() * (-i * s1) + ax().map(|x| Complex64::new(x, 0.0)) * (i * s0)
}

/// Inverse of the phase symbol on the range of `1 - pi`, zero on the kernel.
pub fn m1_pseudo_inverse(lat: &PhaseLattice, mode: &Mode) -> CMat6 {
    let class = classify_mode(lat, mode);
    let s1 = lat.dot(&mode.alpha1);
    let s0 = lat.dot(&mode.alpha0);
    let parts = [
        (1.0, pi_plus(), class == ModeClass::CPlus),
        (-1.0, pi_minus(), class == ModeClass::CMinus),
        (0.0, pi_zero(), class == ModeClass::CZero),
    ];
    let mut out = CMat6::zeros();
    if class == ModeClass::Mean {
        return out;
    }
    for (lambda, p, in_kernel) in parts {
        if in_kernel {
            continue;
        }
        let denom = Complex64::new(0.0, -s1 + s0 * lambda);
        out += p.map(|x| Complex64::new(x, 0.0)) / denom;
    }
    out
}

fn class_error(mode: &Mode, class: ModeClass, expected: &'static str) -> Error {
    Error::ModeClass {
        mode: mode.to_string(),
        class: class.label().into(),
        expected,
    }
}

/// `+1`, `-1`, `0` on the three characteristic classes.
pub fn group_velocity(lat: &PhaseLattice, mode: &Mode) -> Result<f64> {
    match classify_mode(lat, mode) {
        ModeClass::CPlus => Ok(1.0),
        ModeClass::CMinus => Ok(-1.0),
        ModeClass::CZero => Ok(0.0),
        c => Err(class_error(mode, c, "a characteristic non-mean harmonic")),
    }
}

/// Transverse dispersion coefficient `+-1/(2 k.alpha0)` on the wave classes, zero on `CZero`.
pub fn diffraction_coeff(lat: &PhaseLattice, mode: &Mode) -> Result<f64> {
    let s0 = lat.dot(&mode.alpha0);
    match classify_mode(lat, mode) {
        ModeClass::CPlus => Ok(1.0 / (2.0 * s0)),
        ModeClass::CMinus => Ok(-1.0 / (2.0 * s0)),
        ModeClass::CZero => Ok(0.0),
        c => Err(class_error(mode, c, "a characteristic non-mean harmonic")),
    }
}
