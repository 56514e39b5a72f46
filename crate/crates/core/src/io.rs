//! CSV tables, JSON documents and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::profile_builder::{ProfileSet, SlotKey};
use crate::reduced_model::ReducedState;
use crate::stiff_solver::Observation;

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

/// Write a header row and data rows.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator,
    I::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation, so equal values give equal bytes.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_observations(path: &Path, series: &[Observation]) -> Result<()> {
    write_csv(path, &Observation::HEADER, series.iter().map(|o| o.row().map(num)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn grid_hash(grid: &Grid) -> String {
    sha256_hex(grid.describe().as_bytes())
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub grid_hashes: BTreeMap<String, String>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: &str, config_bytes: &[u8], seed: u64, threads: usize) -> Self {
        Self {
            subcommand: subcommand.into(),
            config_sha256: sha256_hex(config_bytes),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            grid_hashes: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn add_grid(&mut self, name: &str, grid: &Grid) {
        self.grid_hashes.insert(name.into(), grid_hash(grid));
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        self.files.sort();
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct ProfileManifest<'a> {
    lattice_k: &'a [f64],
    lattice_exponent: f64,
    lattice_c_dioph: f64,
    a_max: i64,
    transverse_grid: String,
    times: &'a [f64],
    provenance: Vec<ProvenanceRow>,
    frames: Vec<String>,
}

#[derive(Serialize)]
struct ProvenanceRow {
    j: u8,
    kappa: u32,
    family: crate::profile_builder::Family,
    provenance: crate::profile_builder::Provenance,
}

const COEFF_HEADER: [&str; 10] = ["j", "kappa", "alpha0", "alpha1", "component", "ix", "iy", "re", "im", "kind"];

fn join_ints(v: &[i64]) -> String {
    v.iter().map(i64::to_string).collect::<Vec<_>>().join(" ")
}

fn coeff_rows<'a>(
    frame: &'a BTreeMap<SlotKey, Vec<num_complex::Complex64>>,
    ny: usize,
    kind: &'a str,
) -> impl Iterator<Item = Vec<String>> + 'a {
    frame.iter().flat_map(move |(key, f)| {
        f.iter().enumerate().map(move |(p, z)| {
            vec![
                key.j.to_string(),
                key.kappa.to_string(),
                join_ints(&key.mode.alpha0),
                join_ints(&key.mode.alpha1),
                key.comp.label(),
                (p / ny).to_string(),
                (p % ny).to_string(),
                num(z.re),
                num(z.im),
                kind.to_string(),
            ]
        })
    })
}

/// One coefficient table per stored time plus a JSON manifest; returns the written file names.
pub fn write_profile_set(dir: &Path, profiles: &ProfileSet) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let ny = profiles.grid.shape()[1..].iter().product();
    let mut files = Vec::new();
    for (i, frame) in profiles.frames.iter().enumerate() {
        let name = format!("coeffs_{i:03}.csv");
        let rates = profiles.rates.get(i);
        let rows = coeff_rows(frame, ny, "value").chain(rates.into_iter().flat_map(|r| coeff_rows(r, ny, "rate")));
        write_csv(&dir.join(&name), &COEFF_HEADER, rows)?;
        files.push(name);
    }
    let manifest = ProfileManifest {
        lattice_k: profiles.lat.k(),
        lattice_exponent: profiles.lat.exponent(),
        lattice_c_dioph: profiles.lat.c_dioph(),
        a_max: profiles.lat.a_max(),
        transverse_grid: profiles.grid.describe(),
        times: &profiles.times,
        provenance: profiles
            .provenance
            .iter()
            .map(|(&(j, kappa, family), &provenance)| ProvenanceRow {
                j,
                kappa,
                family,
                provenance,
            })
            .collect(),
        frames: files.clone(),
    };
    write_json(&dir.join("profiles.json"), &manifest)?;
    files.push("profiles.json".into());
    Ok(files)
}

/// Fourier coefficients of the stored envelopes at one time: one CSV per
/// (quantity, component) with columns `alpha0, alpha1, k indices, re, im`.
pub fn write_reduced_snapshot(dir: &Path, index: usize, state: &ReducedState) -> Result<Vec<String>> {
    let grid = &state.grid;
    let fft = crate::grid::Fft::new(grid);
    let axes = ["kx_index", "ky_index", "kz_index"];
    let mut header = vec!["alpha0", "alpha1"];
    header.extend(&axes[..grid.ndim()]);
    header.extend(["re", "im"]);
    let mut files = Vec::new();
    let mut tables: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let mut push = |name: String, mode: &crate::spectral::Mode, field: &[num_complex::Complex64]| {
        if field.iter().all(|z| z.norm() == 0.0) {
            return;
        }
        let mut hat = field.to_vec();
        fft.forward(&mut hat);
        let rows = tables.entry(name).or_default();
        crate::grid::for_each_index(grid.shape(), |flat, idx| {
            let mut row = vec![join_ints(&mode.alpha0), join_ints(&mode.alpha1)];
            row.extend(idx.iter().enumerate().map(|(a, &i)| grid.mode_index(a, i).to_string()));
            row.push(num(hat[flat].re));
            row.push(num(hat[flat].im));
            rows.push(row);
        });
    };
    const AXES: [&str; 3] = ["x", "y", "z"];
    for (mode, e) in &state.e_modes {
        for (c, f) in e.iter().enumerate() {
            push(format!("E{}", AXES[c]), mode, f);
        }
    }
    for (mode, pops) in &state.pop_modes {
        for (j, f) in pops.iter().enumerate() {
            push(format!("N{j}"), mode, f);
        }
    }
    for (name, rows) in tables {
        let file = format!("snapshot_{index:03}_{name}.csv");
        write_csv(&dir.join(&file), &header, rows)?;
        files.push(file);
    }
    #[derive(Serialize)]
    struct Meta<'a> {
        t: f64,
        grid: String,
        tables: &'a [String],
    }
    let meta_name = format!("snapshot_{index:03}.json");
    write_json(
        &dir.join(&meta_name),
        &Meta {
            t: state.t,
            grid: grid.describe(),
            tables: &files,
        },
    )?;
    files.push(meta_name);
    Ok(files)
}
