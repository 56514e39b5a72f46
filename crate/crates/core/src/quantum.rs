//! Level system data and the Bloch-side algebra.
//!
//! Level indices are zero-based throughout the crate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance for the detailed-balance check on a fully specified `W`.
pub const PAULI_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSystem {
    omega: Vec<f64>,
    dipole: Vec<[Complex64; 3]>,
    pauli: DMatrix<f64>,
    gamma: f64,
    temperature: f64,
}

impl LevelSystem {
    /// `dipole` is row-major `N x N`; `pauli[(n, k)]` is the transition rate from `n` to `k`.
    pub fn new(
        omega: Vec<f64>,
        dipole: Vec<[Complex64; 3]>,
        pauli: DMatrix<f64>,
        gamma: f64,
        temperature: f64,
    ) -> Result<Self> {
        let violations = validate(&omega, &dipole, &pauli, gamma, temperature);
        if !violations.is_empty() {
            return Err(Error::LevelSystem(violations));
        }
        Ok(Self {
            omega,
            dipole,
            pauli,
            gamma,
            temperature,
        })
    }

    /// TM species: only the z-component of the dipole is populated from `gz` (row-major).
    pub fn tm(
        omega: Vec<f64>,
        gz: &[Complex64],
        pauli: DMatrix<f64>,
        gamma: f64,
        temperature: f64,
    ) -> Result<Self> {
        let dipole = gz.iter().map(|&g| [Complex64::default(), Complex64::default(), g]).collect();
        Self::new(omega, dipole, pauli, gamma, temperature)
    }

    pub fn n_levels(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn pauli(&self) -> &DMatrix<f64> {
        &self.pauli
    }

    pub fn dipole(&self, m: usize, n: usize) -> [Complex64; 3] {
        self.dipole[m * self.n_levels() + n]
    }

    /// One Cartesian component of the dipole matrix.
    pub fn dipole_component(&self, c: usize) -> DMatrix<Complex64> {
        let n = self.n_levels();
        DMatrix::from_fn(n, n, |i, j| self.dipole(i, j)[c])
    }

    pub fn max_abs_omega(&self) -> f64 {
        self.omega.iter().fold(0.0_f64, |acc, w| acc.max(w.abs()))
    }

    /// Copy with a different coupling matrix; used for decoupled reference runs.
    pub fn with_dipole(&self, dipole: Vec<[Complex64; 3]>) -> Result<Self> {
        Self::new(
            self.omega.clone(),
            dipole,
            self.pauli.clone(),
            self.gamma,
            self.temperature,
        )
    }

    pub fn with_pauli(&self, pauli: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.omega.clone(),
            self.dipole.clone(),
            pauli,
            self.gamma,
            self.temperature,
        )
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.omega.clone(),
            self.dipole.clone(),
            self.pauli.clone(),
            gamma,
            self.temperature,
        )
    }
}

/// Complete an upper triangle of rates `W(n,k)`, `n < k`, by detailed balance at `temperature`.
pub fn pauli_from_upper(omega: &[f64], upper: &DMatrix<f64>, temperature: f64) -> DMatrix<f64> {
    let n = omega.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i < j {
            upper[(i, j)]
        } else if i > j {
            upper[(j, i)] * ((omega[i] - omega[j]) / temperature).exp()
        } else {
            0.0
        }
    })
}

/// All violations of the level-system invariants, each prefixed by the offending field.
pub fn validate(
    omega: &[f64],
    dipole: &[[Complex64; 3]],
    pauli: &DMatrix<f64>,
    gamma: f64,
    temperature: f64,
) -> Vec<String> {
    let mut out = Vec::new();
    let n = omega.len();
    if n < 2 {
        out.push(format!("omega: need at least 2 levels, got {n}"));
    }
    if omega.iter().any(|w| !w.is_finite()) {
        out.push("omega: non-finite energy".into());
    }
    if omega.first().is_some_and(|&w| w < 0.0) {
        out.push("omega: energies must be nonnegative".into());
    }
    if omega.windows(2).any(|w| w[0] > w[1]) {
        out.push("omega: energies must be sorted ascending".into());
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        out.push(format!("gamma: must be nonnegative, got {gamma}"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        out.push(format!("temperature: must be positive, got {temperature}"));
    }
    if dipole.len() != n * n {
        out.push(format!("dipole: expected {} entries, got {}", n * n, dipole.len()));
    } else {
        for m in 0..n {
            for k in m..n {
                let a = dipole[m * n + k];
                let b = dipole[k * n + m];
                if (0..3).any(|c| (a[c] - b[c].conj()).norm() > 1e-12) {
                    out.push(format!("dipole: entry ({m},{k}) is not Hermitian"));
                }
            }
        }
    }
    if pauli.nrows() != n || pauli.ncols() != n {
        out.push(format!("pauli: expected {n}x{n} matrix"));
        return out;
    }
    for i in 0..n {
        if pauli[(i, i)] != 0.0 {
            out.push(format!("pauli: diagonal entry ({i},{i}) must be zero"));
        }
        for j in 0..n {
            if !(pauli[(i, j)] >= 0.0) || !pauli[(i, j)].is_finite() {
                out.push(format!("pauli: entry ({i},{j}) must be finite and nonnegative"));
            }
        }
    }
    if temperature > 0.0 && omega.len() == n {
        for i in 0..n {
            for j in (i + 1)..n {
                let expected = pauli[(j, i)] * ((omega[i] - omega[j]) / temperature).exp();
                let scale = pauli[(i, j)].abs().max(expected.abs());
                if (pauli[(i, j)] - expected).abs() > PAULI_REL_TOL * scale {
                    out.push(format!(
                        "pauli: pair ({i},{j}) violates detailed balance: W({i},{j}) = {}, expected {}",
                        pauli[(i, j)],
                        expected
                    ));
                }
            }
        }
    }
    out
}

/// Hermitian `N x N` state; diagonal = populations, off-diagonal = coherences.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub DMatrix<Complex64>);

impl DensityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(d[i], 0.0)
            } else {
                Complex64::default()
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Largest entry of `rho - rho^dagger`.
    pub fn hermitian_defect(&self) -> f64 {
        let a = &self.0;
        let mut worst = 0.0_f64;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }
}

pub fn omega_diff(sys: &LevelSystem, m: usize, n: usize) -> Result<f64> {
    let len = sys.n_levels();
    for index in [m, n] {
        if index >= len {
            return Err(Error::LevelIndex { index, n: len });
        }
    }
    Ok(sys.omega[m] - sys.omega[n])
}

pub fn split_diag_offdiag(rho: &DensityMatrix) -> (DensityMatrix, DensityMatrix) {
    let n = rho.dim();
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { rho.0[(i, j)] } else { Complex64::default() });
    let od = &rho.0 - &d;
    (DensityMatrix(d), DensityMatrix(od))
}

/// Gain-loss operator of the rate matrix acting on the diagonal of `rho_d`.
pub fn pauli_sharp(sys: &LevelSystem, rho_d: &DensityMatrix) -> DensityMatrix {
    let pops = rho_d.populations();
    DensityMatrix::from_diagonal(&pauli_sharp_vec(sys.pauli(), &pops))
}

/// Vector form of the gain-loss sum, shared by the solvers.
pub fn pauli_sharp_vec(w: &DMatrix<f64>, pops: &[f64]) -> Vec<f64> {
    let n = pops.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|k| w[(k, i)] * pops[k] - w[(i, k)] * pops[i])
                .sum()
        })
        .collect()
}

pub fn relaxation_q(sys: &LevelSystem, rho: &DensityMatrix) -> DensityMatrix {
    let (d, od) = split_diag_offdiag(rho);
    let sharp = pauli_sharp(sys, &d);
    DensityMatrix(sharp.0 - od.0 * Complex64::new(sys.gamma, 0.0))
}

/// Entrywise `(omega(n,p) - i gamma) C(n,p)`.
pub fn omega_gamma_apply(sys: &LevelSystem, c: &DensityMatrix) -> DensityMatrix {
    let n = c.dim();
    let w = &sys.omega;
    DensityMatrix(DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(w[i] - w[j], -sys.gamma) * c.0[(i, j)]
    }))
}

/// Matrix with entries `E . Gamma(m,n)`, no conjugation on `E`.
pub fn dipole_couple(sys: &LevelSystem, e: [Complex64; 3]) -> DensityMatrix {
    let n = sys.n_levels();
    DensityMatrix(DMatrix::from_fn(n, n, |i, j| {
        let g = sys.dipole(i, j);
        e[0] * g[0] + e[1] * g[1] + e[2] * g[2]
    }))
}

pub fn gibbs_state(sys: &LevelSystem) -> DensityMatrix {
    let w0 = sys.omega.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = sys
        .omega
        .iter()
        .map(|w| (-(w - w0) / sys.temperature).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.iter().map(|w| w / z).collect();
    DensityMatrix::from_diagonal(&p)
}

pub fn gibbs_populations(sys: &LevelSystem) -> Vec<f64> {
    gibbs_state(sys).populations()
}

pub fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b - b * a
}

/// Free Hamiltonian `diag(omega)`.
pub fn hamiltonian(sys: &LevelSystem) -> DMatrix<Complex64> {
    let n = sys.n_levels();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(sys.omega[i], 0.0)
        } else {
            Complex64::default()
        }
    })
}
