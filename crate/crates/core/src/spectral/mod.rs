//! Phase-lattice combinatorics: mode classes, resonances and small divisors.

mod maxwell;
mod transverse;

pub use maxwell::*;
pub use transverse::*;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::LevelSystem;

/// Phase harmonic `(alpha0, alpha1)`; `alpha0` pairs with `k x`, `alpha1` with `-k t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub alpha0: Vec<i64>,
    pub alpha1: Vec<i64>,
}

impl Mode {
    pub fn new(alpha0: Vec<i64>, alpha1: Vec<i64>) -> Self {
        assert_eq!(alpha0.len(), alpha1.len(), "harmonic halves differ in length");
        Self { alpha0, alpha1 }
    }

    pub fn zero(d: usize) -> Self {
        Self::new(vec![0; d], vec![0; d])
    }

    /// Single-phase shorthand.
    pub fn d1(alpha0: i64, alpha1: i64) -> Self {
        Self::new(vec![alpha0], vec![alpha1])
    }

    pub fn d(&self) -> usize {
        self.alpha0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.alpha0.iter().chain(&self.alpha1).all(|&a| a == 0)
    }

    pub fn neg(&self) -> Self {
        Self::new(
            self.alpha0.iter().map(|a| -a).collect(),
            self.alpha1.iter().map(|a| -a).collect(),
        )
    }

    pub fn add(&self, other: &Mode) -> Self {
        Self::new(
            self.alpha0.iter().zip(&other.alpha0).map(|(a, b)| a + b).collect(),
            self.alpha1.iter().zip(&other.alpha1).map(|(a, b)| a + b).collect(),
        )
    }

    /// Sup norm over both halves.
    pub fn radius(&self) -> i64 {
        self.alpha0
            .iter()
            .chain(&self.alpha1)
            .map(|a| a.abs())
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|{})", join(&self.alpha0), join(&self.alpha1))
    }
}

pub(crate) fn join(v: &[i64]) -> String {
    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")
}

/// Harmonic together with its decay index `kappa` (factor `exp(-kappa gamma t / eps)`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub mode: Mode,
    pub kappa: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeClass {
    Mean,
    CPlus,
    CMinus,
    CZero,
    NonCharacteristic,
}

impl ModeClass {
    pub fn label(self) -> &'static str {
        match self {
            ModeClass::Mean => "mean",
            ModeClass::CPlus => "c_plus",
            ModeClass::CMinus => "c_minus",
            ModeClass::CZero => "c_zero",
            ModeClass::NonCharacteristic => "non_characteristic",
        }
    }

    pub fn is_wave(self) -> bool {
        matches!(self, ModeClass::CPlus | ModeClass::CMinus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLattice {
    d: usize,
    k: Vec<f64>,
    a: f64,
    c_dioph: f64,
    a_max: i64,
}

impl PhaseLattice {
    /// Validates positivity and the Diophantine margin over `0 < |beta| <= 2 a_max`.
    pub fn new(k: Vec<f64>, a: f64, c_dioph: f64, a_max: i64) -> Result<Self> {
        let d = k.len();
        if d == 0 {
            return Err(Error::Lattice("need at least one phase".into()));
        }
        if k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Lattice(format!("wave vector {k:?} must be strictly positive")));
        }
        if a_max < 1 {
            return Err(Error::Lattice(format!("truncation radius {a_max} must be at least 1")));
        }
        if !(a >= 0.0) || !(c_dioph >= 0.0) {
            return Err(Error::Lattice("Diophantine exponent and constant must be nonnegative".into()));
        }
        let lat = Self {
            d,
            k,
            a,
            c_dioph,
            a_max,
        };
        if let Some((beta, margin)) = lat.diophantine_violation() {
            return Err(Error::Lattice(format!(
                "|beta.k| = {margin:.3e} below c|beta|^-a at beta = {beta:?}"
            )));
        }
        Ok(lat)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn exponent(&self) -> f64 {
        self.a
    }

    pub fn c_dioph(&self) -> f64 {
        self.c_dioph
    }

    pub fn a_max(&self) -> i64 {
        self.a_max
    }

    pub fn dot(&self, beta: &[i64]) -> f64 {
        self.k.iter().zip(beta).map(|(k, b)| k * *b as f64).sum()
    }

    /// Lower bound `c |beta|^-a` that small divisors must respect.
    pub fn divisor_floor(&self, beta: &[i64]) -> f64 {
        let r = beta.iter().map(|b| b.abs()).max().unwrap_or(0);
        if r == 0 {
            return 0.0;
        }
        self.c_dioph * (r as f64).powf(-self.a)
    }

    fn diophantine_violation(&self) -> Option<(Vec<i64>, f64)> {
        integer_box(self.d, 2 * self.a_max)
            .into_iter()
            .filter(|b| b.iter().any(|&x| x != 0))
            .map(|b| {
                let m = self.dot(&b).abs();
                (b, m)
            })
            .find(|(b, m)| *m < self.divisor_floor(b))
    }

    /// Every harmonic with `|alpha0|, |alpha1| <= a_max`.
    pub fn modes(&self) -> Vec<Mode> {
        let side = integer_box(self.d, self.a_max);
        let mut out = Vec::with_capacity(side.len() * side.len());
        for a0 in &side {
            for a1 in &side {
                out.push(Mode::new(a0.clone(), a1.clone()));
            }
        }
        out
    }

    pub fn contains(&self, mode: &Mode) -> bool {
        mode.d() == self.d && mode.radius() <= self.a_max
    }
}

/// All integer vectors in `[-r, r]^d`, lexicographic.
pub fn integer_box(d: usize, r: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (2 * r as usize + 1));
        for v in &out {
            for x in -r..=r {
                let mut w = v.clone();
                w.push(x);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

pub fn classify_mode(_lat: &PhaseLattice, mode: &Mode) -> ModeClass {
    let a0_zero = mode.alpha0.iter().all(|&a| a == 0);
    let a1_zero = mode.alpha1.iter().all(|&a| a == 0);
    if a0_zero && a1_zero {
        ModeClass::Mean
    } else if a0_zero {
        ModeClass::NonCharacteristic
    } else if a1_zero {
        ModeClass::CZero
    } else if mode.alpha1 == mode.alpha0 {
        ModeClass::CPlus
    } else if mode.alpha1.iter().zip(&mode.alpha0).all(|(a, b)| *a == -b) {
        ModeClass::CMinus
    } else {
        ModeClass::NonCharacteristic
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resonance {
    pub m: usize,
    pub n: usize,
    pub alpha1: Vec<i64>,
}

/// Default resonance tolerance `1e-9 max|omega|`.
pub fn default_resonance_tol(sys: &LevelSystem) -> f64 {
    1e-9 * sys.max_abs_omega().max(f64::MIN_POSITIVE)
}

/// The unique `alpha1` with `|k.alpha1 - omega(m,n)| <= tol`, if any.
pub fn resonant_harmonic(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    m: usize,
    n: usize,
    tol: f64,
) -> Result<Option<Vec<i64>>> {
    let w = crate::quantum::omega_diff(sys, m, n)?;
    let mut found: Option<Vec<i64>> = None;
    for beta in integer_box(lat.d, lat.a_max) {
        if (lat.dot(&beta) - w).abs() <= tol {
            if let Some(first) = &found {
                return Err(Error::AmbiguousResonance {
                    m,
                    n,
                    first: first.clone(),
                    second: beta,
                });
            }
            found = Some(beta);
        }
    }
    Ok(found)
}

/// Every resonant triple, diagonal pairs included.
pub fn resonant_set(sys: &LevelSystem, lat: &PhaseLattice, tol: Option<f64>) -> Result<Vec<Resonance>> {
    let tol = tol.unwrap_or_else(|| default_resonance_tol(sys));
    let nl = sys.n_levels();
    let mut out = Vec::new();
    for m in 0..nl {
        for n in 0..nl {
            if let Some(alpha1) = resonant_harmonic(sys, lat, m, n, tol)? {
                out.push(Resonance { m, n, alpha1 });
            }
        }
    }
    Ok(out)
}

/// `1 / (i(omega(m,n) - k.alpha1) + gamma(1 - kappa))`.
pub fn mode_inverse_omega_gamma(
    sys: &LevelSystem,
    lat: &PhaseLattice,
    m: usize,
    n: usize,
    alpha1: &[i64],
    kappa: u32,
) -> Result<Complex64> {
    let detuning = crate::quantum::omega_diff(sys, m, n)? - lat.dot(alpha1);
    if kappa == 1 && detuning.abs() <= default_resonance_tol(sys) {
        return Err(Error::ResonantDivision {
            m,
            n,
            alpha1: alpha1.to_vec(),
        });
    }
    let denom = Complex64::new(sys.gamma() * (1.0 - kappa as f64), detuning);
    Ok(denom.inv())
}
