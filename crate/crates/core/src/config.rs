//! JSON run configuration. Parsing collects every violation with its field path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{for_each_index, Grid};
use crate::harness::ConvergenceSetup;
use crate::profile_builder::InitialData;
use crate::quantum::{gibbs_populations, pauli_from_upper, validate, LevelSystem};
use crate::spectral::{Field6, PhaseLattice, BX, BY, BZ, EX, EY, EZ};
use crate::stiff_solver::singular_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleEntry {
    pub m: usize,
    pub n: usize,
    /// `[re, im]` per axis; TM systems use `z` only. The `(n, m)` entry is the conjugate.
    #[serde(default)]
    pub x: Option<[f64; 2]>,
    #[serde(default)]
    pub y: Option<[f64; 2]>,
    #[serde(default)]
    pub z: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSystemConfig {
    pub n: usize,
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub temperature: f64,
    /// Strict upper triangle; the lower triangle follows from detailed balance.
    #[serde(default)]
    pub pauli_upper: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pauli: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub dipole: Vec<DipoleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub d: usize,
    pub k: Vec<f64>,
    pub a: f64,
    pub c_dioph: f64,
    pub a_max: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub ntheta: Vec<usize>,
    pub lx: f64,
    pub ly: f64,
    /// Third transverse axis, used by the 3D reduced model only.
    #[serde(default)]
    pub nz: Option<usize>,
    #[serde(default)]
    pub lz: Option<f64>,
}

fn default_c_cfl() -> f64 {
    crate::stiff_solver::DEFAULT_C_CFL
}

fn default_stride() -> usize {
    10
}

fn default_frames() -> usize {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Stiff step as a multiple of epsilon, capped by the CFL bound.
    pub dt_factor: f64,
    #[serde(default = "default_c_cfl")]
    pub c_cfl: f64,
    pub t_star: f64,
    #[serde(default = "default_stride")]
    pub observer_stride: usize,
    pub reduced_dt: f64,
    #[serde(default = "default_frames")]
    pub n_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    TmPrepared,
    TmUnprepared,
    Reduced3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Gaussian {
        /// Defaults to the middle of the domain.
        #[serde(default)]
        center: Option<Vec<f64>>,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// CSV with columns `re,im`, one row per grid point in row-major `(x, y)` order.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldData {
    pub beta: Vec<i64>,
    /// Component name (`Bx` .. `Ez`) to envelope. Nonzero `beta` also installs the
    /// complex conjugate at `-beta`, so physical fields stay real.
    pub components: BTreeMap<String, Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceData {
    pub m: usize,
    pub n: usize,
    pub beta: Vec<i64>,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Populations {
    Named(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataConfig {
    #[serde(default)]
    pub fields: Vec<FieldData>,
    /// `"gibbs"` or explicit uniform populations.
    pub populations: Populations,
    #[serde(default)]
    pub coherences: Vec<CoherenceData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Sup norm of the field before the `sqrt(eps)` scaling.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub residual_slope: Option<[f64; 2]>,
    #[serde(default)]
    pub error_slope: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub level_system: LevelSystemConfig,
    pub lattice: LatticeConfig,
    pub grids: GridConfig,
    pub solver: SolverConfig,
    pub mode: RunMode,
    pub epsilons: Vec<f64>,
    pub initial_data: InitialDataConfig,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const COMPONENTS: [(&str, usize); 6] = [("Bx", BX), ("By", BY), ("Bz", BZ), ("Ex", EX), ("Ey", EY), ("Ez", EZ)];

/// Read, deserialize and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("schema: {e}")]))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

fn matrix(rows: &[Vec<f64>], n: usize, path: &str, errs: &mut Vec<String>) -> Option<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        errs.push(format!("{path}: expected a {n}x{n} matrix"));
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("schema: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn is_tm(&self) -> bool {
        self.mode != RunMode::Reduced3d
    }

    /// Every violation, each tagged with its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let ls = &self.level_system;
        if ls.omega.len() != ls.n {
            errs.push(format!("level_system.omega: expected {} entries, got {}", ls.n, ls.omega.len()));
        }
        let pauli = self.pauli_matrix(&mut errs);
        match self.dipoles(&mut errs) {
            Some(dip) if ls.omega.len() == ls.n => {
                let w = pauli.unwrap_or_else(|| DMatrix::zeros(ls.n, ls.n));
                for v in validate(&ls.omega, &dip, &w, ls.gamma, ls.temperature) {
                    errs.push(format!("level_system.{v}"));
                }
            }
            _ => {}
        }
        let lat = &self.lattice;
        if lat.k.len() != lat.d {
            errs.push(format!("lattice.k: expected {} entries, got {}", lat.d, lat.k.len()));
        } else if let Err(e) = self.phase_lattice() {
            errs.push(format!("lattice: {e}"));
        }
        let g = &self.grids;
        for (name, v) in [("nx", g.nx), ("ny", g.ny)] {
            if v < 2 || !v.is_power_of_two() {
                errs.push(format!("grids.{name}: {v} is not a power of two"));
            }
        }
        if g.ntheta.len() != lat.d {
            errs.push(format!("grids.ntheta: expected {} entries, got {}", lat.d, g.ntheta.len()));
        }
        for (i, &v) in g.ntheta.iter().enumerate() {
            if v < 2 || !v.is_power_of_two() {
                errs.push(format!("grids.ntheta[{i}]: {v} is not a power of two"));
            }
        }
        for (name, v) in [("lx", g.lx), ("ly", g.ly)] {
            if !(v > 0.0) {
                errs.push(format!("grids.{name}: must be positive"));
            }
        }
        if self.mode == RunMode::Reduced3d {
            match (g.nz, g.lz) {
                (Some(nz), Some(lz)) => {
                    if nz < 2 || !nz.is_power_of_two() {
                        errs.push(format!("grids.nz: {nz} is not a power of two"));
                    }
                    if !(lz > 0.0) {
                        errs.push("grids.lz: must be positive".into());
                    }
                }
                _ => errs.push("grids.nz: the 3D reduced model needs nz and lz".into()),
            }
        }
        let s = &self.solver;
        for (name, v) in [("dt_factor", s.dt_factor), ("c_cfl", s.c_cfl), ("t_star", s.t_star), ("reduced_dt", s.reduced_dt)] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("solver.{name}: must be positive"));
            }
        }
        if s.n_frames < 2 {
            errs.push("solver.n_frames: need at least 2".into());
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            errs.push("epsilons: need positive values".into());
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            errs.push("epsilons: must be strictly decreasing".into());
        }
        let id = &self.initial_data;
        for (i, f) in id.fields.iter().enumerate() {
            if f.beta.len() != lat.d {
                errs.push(format!("initial_data.fields[{i}].beta: expected {} entries", lat.d));
            }
            for (name, env) in &f.components {
                match COMPONENTS.iter().find(|(c, _)| c == name) {
                    None => errs.push(format!("initial_data.fields[{i}].components.{name}: unknown component")),
                    Some((_, slot)) if self.is_tm() && ![BX, BY, EZ].contains(slot) => {
                        errs.push(format!("initial_data.fields[{i}].components.{name}: not a TM component"))
                    }
                    _ => {}
                }
                check_envelope(env, &format!("initial_data.fields[{i}].components.{name}"), &mut errs);
            }
        }
        match &id.populations {
            Populations::Named(s) if s != "gibbs" => {
                errs.push(format!("initial_data.populations: unknown preset {s:?}"))
            }
            Populations::Values(v) if v.len() != ls.n => {
                errs.push(format!("initial_data.populations: expected {} values", ls.n))
            }
            _ => {}
        }
        for (i, c) in id.coherences.iter().enumerate() {
            if c.m >= ls.n || c.n >= ls.n || c.m == c.n {
                errs.push(format!("initial_data.coherences[{i}]: ({}, {}) is not an off-diagonal entry", c.m, c.n));
            }
            if c.beta.len() != lat.d {
                errs.push(format!("initial_data.coherences[{i}].beta: expected {} entries", lat.d));
            }
            if self.mode == RunMode::TmPrepared {
                errs.push(format!("initial_data.coherences[{i}]: prepared mode forbids initial coherences"));
            }
            check_envelope(&c.envelope, &format!("initial_data.coherences[{i}].envelope"), &mut errs);
        }
        if let Some(p) = &self.perturbation {
            if !(p.amplitude >= 0.0) {
                errs.push("perturbation.amplitude: must be nonnegative".into());
            }
        }
        if let Some(t) = &self.thresholds {
            for (name, r) in [("residual_slope", t.residual_slope), ("error_slope", t.error_slope)] {
                if let Some([lo, hi]) = r {
                    if !(lo <= hi) {
                        errs.push(format!("thresholds.{name}: lower bound exceeds upper bound"));
                    }
                }
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn pauli_matrix(&self, errs: &mut Vec<String>) -> Option<DMatrix<f64>> {
        let ls = &self.level_system;
        match (&ls.pauli, &ls.pauli_upper) {
            (Some(_), Some(_)) => {
                errs.push("level_system.pauli: give either pauli or pauli_upper, not both".into());
                None
            }
            (Some(full), None) => matrix(full, ls.n, "level_system.pauli", errs),
            (None, Some(up)) => {
                let m = matrix(up, ls.n, "level_system.pauli_upper", errs)?;
                if ls.omega.len() != ls.n {
                    return None;
                }
                Some(pauli_from_upper(&ls.omega, &m, ls.temperature))
            }
            (None, None) => Some(DMatrix::zeros(ls.n, ls.n)),
        }
    }

    fn dipoles(&self, errs: &mut Vec<String>) -> Option<Vec<[Complex64; 3]>> {
        let ls = &self.level_system;
        let n = ls.n;
        let mut out = vec![[Complex64::default(); 3]; n * n];
        let mut ok = true;
        for (i, d) in ls.dipole.iter().enumerate() {
            if d.m >= n || d.n >= n {
                errs.push(format!("level_system.dipole[{i}]: level index out of range"));
                ok = false;
                continue;
            }
            if self.is_tm() && (d.x.is_some() || d.y.is_some()) {
                errs.push(format!("level_system.dipole[{i}]: TM dipoles have a z component only"));
            }
            for (c, v) in [d.x, d.y, d.z].into_iter().enumerate() {
                if let Some([re, im]) = v {
                    let z = Complex64::new(re, im);
                    out[d.m * n + d.n][c] = z;
                    if d.m != d.n {
                        out[d.n * n + d.m][c] = z.conj();
                    }
                }
            }
        }
        ok.then_some(out)
    }

    pub fn level_system(&self) -> Result<LevelSystem> {
        let mut errs = Vec::new();
        let pauli = self.pauli_matrix(&mut errs);
        let dip = self.dipoles(&mut errs);
        match (pauli, dip) {
            (Some(w), Some(d)) if errs.is_empty() => {
                let ls = &self.level_system;
                LevelSystem::new(ls.omega.clone(), d, w, ls.gamma, ls.temperature)
            }
            _ => Err(Error::Config(errs)),
        }
    }

    pub fn phase_lattice(&self) -> Result<PhaseLattice> {
        let l = &self.lattice;
        PhaseLattice::new(l.k.clone(), l.a, l.c_dioph, l.a_max)
    }

    pub fn singular_grid(&self) -> Result<Grid> {
        let g = &self.grids;
        if g.ntheta.len() == 1 {
            return singular_grid(g.nx, g.ny, g.ntheta[0], g.lx, g.ly, 1);
        }
        let mut shape = vec![g.nx, g.ny];
        shape.extend(&g.ntheta);
        let mut lengths = vec![g.lx, g.ly];
        lengths.extend(g.ntheta.iter().map(|_| 2.0 * std::f64::consts::PI));
        Grid::new(shape, lengths)
    }

    /// `(x, y)` grid, or `(x, y, z)` for the 3D reduced model.
    pub fn transverse_grid(&self) -> Result<Grid> {
        let g = &self.grids;
        match (self.mode, g.nz, g.lz) {
            (RunMode::Reduced3d, Some(nz), Some(lz)) => Grid::new(vec![g.nx, g.ny, nz], vec![g.lx, g.ly, lz]),
            (RunMode::Reduced3d, ..) => Err(Error::Config(vec!["grids.nz: the 3D reduced model needs nz and lz".into()])),
            _ => Grid::new(vec![g.nx, g.ny], vec![g.lx, g.ly]),
        }
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn populations(&self) -> Result<Vec<f64>> {
        match &self.initial_data.populations {
            Populations::Named(_) => Ok(gibbs_populations(&self.level_system()?)),
            Populations::Values(v) => Ok(v.clone()),
        }
    }

    fn envelope(&self, env: &Envelope, grid: &Grid) -> Result<Vec<Complex64>> {
        match env {
            Envelope::Gaussian {
                center,
                width,
                amplitude,
                phase,
            } => {
                let mid: Vec<f64> = grid.lengths().iter().map(|l| l / 2.0).collect();
                let c = center.clone().unwrap_or(mid);
                if c.len() != grid.ndim() {
                    return Err(Error::Config(vec![format!(
                        "envelope center needs {} coordinates",
                        grid.ndim()
                    )]));
                }
                let coords: Vec<Vec<f64>> = (0..grid.ndim()).map(|a| grid.coords(a)).collect();
                let amp = Complex64::from_polar(*amplitude, *phase);
                let mut out = grid.zeros();
                for_each_index(grid.shape(), |flat, idx| {
                    let r2: f64 = idx.iter().enumerate().map(|(a, &i)| (coords[a][i] - c[a]).powi(2)).sum();
                    out[flat] = amp * (-r2 / (2.0 * width * width)).exp();
                });
                Ok(out)
            }
            Envelope::File { path } => {
                let full = self.base_dir.join(path);
                let text = std::fs::read_to_string(&full)?;
                let mut out = Vec::with_capacity(grid.len());
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                        continue;
                    }
                    let parts: Vec<&str> = line.split(',').collect();
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Config(vec![format!("{}: line {}: {e}", full.display(), i + 1)]))
                    };
                    let re = parse(parts[0])?;
                    let im = parts.get(1).map_or(Ok(0.0), |s| parse(s))?;
                    out.push(Complex64::new(re, im));
                }
                if out.len() != grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "{} holds {} values, grid has {}",
                        full.display(),
                        out.len(),
                        grid.len()
                    )));
                }
                Ok(out)
            }
        }
    }

    /// Initial data on the transverse grid, with conjugate partners installed.
    pub fn initial_data(&self, grid: &Grid) -> Result<InitialData> {
        let mut init = InitialData::default();
        let zero = || -> Field6 { std::array::from_fn(|_| grid.zeros()) };
        for f in &self.initial_data.fields {
            let neg: Vec<i64> = f.beta.iter().map(|b| -b).collect();
            let self_conj = f.beta == neg;
            for (name, env) in &f.components {
                let slot = COMPONENTS.iter().find(|(c, _)| c == name).map(|c| c.1).ok_or_else(|| {
                    Error::Config(vec![format!("initial_data.fields: unknown component {name}")])
                })?;
                let v = self.envelope(env, grid)?;
                let dst = &mut init.fields.entry(f.beta.clone()).or_insert_with(zero)[slot];
                dst.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                if !self_conj {
                    let dst = &mut init.fields.entry(neg.clone()).or_insert_with(zero)[slot];
                    dst.iter_mut().zip(&v).for_each(|(a, b)| *a += b.conj());
                }
            }
        }
        let pops = self.populations()?;
        init.populations.insert(
            vec![0; self.lattice.d],
            pops.iter().map(|&p| vec![Complex64::new(p, 0.0); grid.len()]).collect(),
        );
        for c in &self.initial_data.coherences {
            let v = self.envelope(&c.envelope, grid)?;
            let neg: Vec<i64> = c.beta.iter().map(|b| -b).collect();
            let add = |init: &mut InitialData, key: (usize, usize, Vec<i64>), f: Vec<Complex64>| {
                let dst = init.coherences.entry(key).or_insert_with(|| grid.zeros());
                dst.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            };
            add(&mut init, (c.m, c.n, c.beta.clone()), v.clone());
            add(&mut init, (c.n, c.m, neg), v.iter().map(|z| z.conj()).collect());
        }
        Ok(init)
    }

    pub fn convergence_setup(&self) -> Result<ConvergenceSetup> {
        let tgrid = self.transverse_grid()?;
        Ok(ConvergenceSetup {
            sys: self.level_system()?,
            lat: self.phase_lattice()?,
            grid: self.singular_grid()?,
            init: self.initial_data(&tgrid)?,
            epsilons: self.epsilons.clone(),
            t_star: self.solver.t_star,
            n_frames: self.solver.n_frames,
            reduced_dt: self.solver.reduced_dt,
            dt_factor: self.solver.dt_factor,
            seed: self.seed,
            perturbation_amplitude: self.perturbation.as_ref().map_or(0.0, |p| p.amplitude),
        })
    }
}

fn check_envelope(env: &Envelope, path: &str, errs: &mut Vec<String>) {
    if let Envelope::Gaussian { width, amplitude, .. } = env {
        if !(*width > 0.0) {
            errs.push(format!("{path}.width: must be positive"));
        }
        if !amplitude.is_finite() {
            errs.push(format!("{path}.amplitude: must be finite"));
        }
    }
}
