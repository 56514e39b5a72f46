//! Command-line front end: argument parsing, thread pool, pipelines and exit codes.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_config, RunConfig, RunMode};
use crate::error::{Error, Result};
use crate::harness::{
    build_tm_profiles, convergence_study, fit_loglog, perturbation_field, residual_norms, stiff_dt, SlopeFit,
    Study,
};
use crate::io::{num, write_csv, write_json, write_observations, write_profile_set, write_reduced_snapshot, Manifest};
use crate::profile_builder::{evolve_leading, lift_initial_data};
use crate::reduced_model::ReducedModel;
use crate::spectral::{
    classify_mode, diffraction_coeff, group_velocity, resonant_set, ModeClass,
};
use crate::stiff_solver::{sample_initial_data, StiffSolver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PIPELINE: i32 = 1;
pub const EXIT_THRESHOLD: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "maxbloch", version, about = "Scaled Maxwell-Bloch pipelines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the stiff solver (TM) or the reduced model (3D) and write time series.
    Simulate(RunArgs),
    /// Build the profile hierarchy and write coefficient tables.
    Profile(RunArgs),
    /// Residual of the approximate solution for every epsilon.
    Residual(RunArgs),
    /// Residual and stiff-error convergence study with slope fits.
    Converge(RunArgs),
    /// Harmonic classes, small divisors and resonances of the lattice.
    SpectralInfo(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Profile(_) => "profile",
            Command::Residual(_) => "residual",
            Command::Converge(_) => "converge",
            Command::SpectralInfo(_) => "spectral-info",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Profile(a)
            | Command::Residual(a)
            | Command::Converge(a)
            | Command::SpectralInfo(a) => a,
        }
    }
}

/// Whether the run met its configured acceptance thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub violations: Vec<String>,
}

/// Parse arguments, run, and map the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) if outcome.violations.is_empty() => EXIT_OK,
        Ok(outcome) => {
            for v in &outcome.violations {
                eprintln!("threshold violated: {v}");
            }
            EXIT_THRESHOLD
        }
        Err(e) => {
            eprintln!("maxbloch {}: {e}", cli.command.name());
            EXIT_PIPELINE
        }
    }
}

/// Run one subcommand inside a thread pool of the requested size.
pub fn dispatch(command: &Command) -> Result<Outcome> {
    let args = command.args();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let bytes = std::fs::read(&args.config)?;
    let cfg = parse_config(&args.config)?;
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Invalid(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    let mut manifest = Manifest::new(command.name(), &bytes, cfg.seed, args.threads.max(1));
    let violations = pool.install(|| match command {
        Command::Simulate(_) => simulate(&cfg, &out_dir, &mut manifest).map(|_| Vec::new()),
        Command::Profile(_) => profile(&cfg, &out_dir, &mut manifest).map(|_| Vec::new()),
        Command::Residual(_) => residual(&cfg, &out_dir, &mut manifest).map(|_| Vec::new()),
        Command::Converge(_) => converge(&cfg, &out_dir, &mut manifest),
        Command::SpectralInfo(_) => spectral_info(&cfg, &out_dir, &mut manifest).map(|_| Vec::new()),
    })?;
    manifest.write(&out_dir)?;
    Ok(Outcome { out_dir, violations })
}

fn require_tm_prepared(cfg: &RunConfig, what: &str) -> Result<()> {
    if cfg.mode() != RunMode::TmPrepared {
        return Err(Error::Invalid(format!("{what} is available for tm_prepared runs only")));
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<()> {
    let sys = cfg.level_system()?;
    let lat = cfg.phase_lattice()?;
    let tgrid = cfg.transverse_grid()?;
    let init = cfg.initial_data(&tgrid)?;
    manifest.add_grid("transverse", &tgrid);
    if cfg.mode() == RunMode::Reduced3d {
        let model = ReducedModel::new(&sys, &lat, &tgrid)?;
        let lifted = lift_initial_data(&sys, &lat, &tgrid, &init)?;
        let times = frame_times(cfg);
        let evolved = evolve_leading(&model, &lifted, &times, cfg.solver.reduced_dt)?;
        for i in 0..evolved.times.len() {
            manifest.files.extend(write_reduced_snapshot(dir, i, &evolved.leading_state(i)?)?);
        }
        return Ok(());
    }
    let grid = cfg.singular_grid()?;
    manifest.add_grid("singular", &grid);
    #[derive(Serialize)]
    struct Summary {
        epsilon: f64,
        dt: f64,
        steps_file: String,
    }
    let mut summary = Vec::new();
    for (i, &eps) in cfg.epsilons.iter().enumerate() {
        let mut solver = StiffSolver::new(&sys, &lat, &grid, eps)?;
        solver.c_cfl = cfg.solver.c_cfl;
        let mut state = sample_initial_data(&init, &grid, sys.n_levels(), eps)?;
        if let Some(p) = &cfg.perturbation {
            let delta = perturbation_field(&grid, sys.n_levels(), cfg.seed, p.amplitude * eps.sqrt());
            for (dst, src) in [
                (&mut state.bx, &delta.bx),
                (&mut state.by, &delta.by),
                (&mut state.e, &delta.e),
                (&mut state.rho, &delta.rho),
            ] {
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let dt = stiff_dt(&solver, cfg.solver.dt_factor);
        let mut series = vec![solver.observe(&state)];
        series.extend(solver.run(&mut state, cfg.solver.t_star, dt, cfg.solver.observer_stride, |_| {})?);
        let name = format!("timeseries_eps{i}.csv");
        write_observations(&dir.join(&name), &series)?;
        manifest.files.push(name.clone());
        summary.push(Summary {
            epsilon: eps,
            dt,
            steps_file: name,
        });
    }
    write_json(&dir.join("simulate.json"), &summary)?;
    manifest.files.push("simulate.json".into());
    Ok(())
}

fn frame_times(cfg: &RunConfig) -> Vec<f64> {
    let n = cfg.solver.n_frames.max(2);
    (0..n).map(|i| cfg.solver.t_star * i as f64 / (n - 1) as f64).collect()
}

fn profile(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<()> {
    let sub = dir.join("profiles");
    let files = match cfg.mode() {
        RunMode::TmPrepared => {
            let setup = cfg.convergence_setup()?;
            manifest.add_grid("singular", &setup.grid);
            write_profile_set(&sub, &build_tm_profiles(&setup)?)?
        }
        RunMode::Reduced3d => {
            let sys = cfg.level_system()?;
            let lat = cfg.phase_lattice()?;
            let tgrid = cfg.transverse_grid()?;
            let model = ReducedModel::new(&sys, &lat, &tgrid)?;
            let lifted = lift_initial_data(&sys, &lat, &tgrid, &cfg.initial_data(&tgrid)?)?;
            write_profile_set(&sub, &evolve_leading(&model, &lifted, &frame_times(cfg), cfg.solver.reduced_dt)?)?
        }
        RunMode::TmUnprepared => {
            return Err(Error::Invalid("correctors are built for prepared data only".into()));
        }
    };
    manifest.add_grid("transverse", &cfg.transverse_grid()?);
    manifest.files.extend(files.into_iter().map(|f| format!("profiles/{f}")));
    Ok(())
}

#[derive(Serialize)]
struct ResidualSummary {
    epsilons: Vec<f64>,
    sup_over_time: Vec<f64>,
    fit: Option<SlopeFit>,
}

fn residual(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<()> {
    require_tm_prepared(cfg, "residual")?;
    let setup = cfg.convergence_setup()?;
    manifest.add_grid("singular", &setup.grid);
    let profiles = build_tm_profiles(&setup)?;
    let mut rows = Vec::new();
    let mut sups = Vec::new();
    for &eps in &setup.epsilons {
        let samples = residual_norms(&profiles, eps, &setup.grid, 2)?;
        sups.push(samples.iter().fold(0.0_f64, |a, s| a.max(s.sup)));
        rows.extend(samples.iter().map(|s| vec![num(eps), num(s.t), num(s.sup), num(s.l2)]));
    }
    write_csv(&dir.join("residual.csv"), &["epsilon", "t", "sup", "l2"], rows)?;
    let fit = fit_loglog(&setup.epsilons, &sups).ok();
    write_json(
        &dir.join("residual.json"),
        &ResidualSummary {
            epsilons: setup.epsilons.clone(),
            sup_over_time: sups,
            fit,
        },
    )?;
    manifest.files.extend(["residual.csv".into(), "residual.json".into()]);
    Ok(())
}

fn converge(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<Vec<String>> {
    require_tm_prepared(cfg, "converge")?;
    let setup = cfg.convergence_setup()?;
    manifest.add_grid("singular", &setup.grid);
    let report = convergence_study(&setup, Study::Full)?;
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("report.csv"), &crate::harness::ConvergenceReport::CSV_HEADER, report.csv_rows())?;
    #[derive(Serialize)]
    struct Timing {
        epsilon: f64,
        seconds: f64,
    }
    let timings: Vec<Timing> = report
        .epsilons
        .iter()
        .zip(&report.runtimes)
        .map(|(&epsilon, &seconds)| Timing { epsilon, seconds })
        .collect();
    // Wall-clock times are the one non-reproducible output and live apart from the report.
    write_json(&dir.join("timings.json"), &timings)?;
    manifest.files.extend(["report.json".into(), "report.csv".into(), "timings.json".into()]);
    let mut violations = Vec::new();
    for (i, f) in report.failures.iter().enumerate() {
        if let Some(msg) = f {
            violations.push(format!("epsilon {} failed: {msg}", report.epsilons[i]));
        }
    }
    if let Some(t) = &cfg.thresholds {
        for (name, range, fit) in [
            ("residual_slope", t.residual_slope, report.residual_fit),
            ("error_slope", t.error_slope, report.error_fit),
        ] {
            let Some([lo, hi]) = range else { continue };
            match fit {
                Some(f) if f.slope >= lo && f.slope <= hi => {}
                Some(f) => violations.push(format!("{name} {:.4} outside [{lo}, {hi}]", f.slope)),
                None => violations.push(format!("{name}: no fit available")),
            }
        }
    }
    Ok(violations)
}

fn spectral_info(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<()> {
    let sys = cfg.level_system()?;
    let lat = cfg.phase_lattice()?;
    let join = |v: &[i64]| v.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
    let mut rows = Vec::new();
    for mode in lat.modes() {
        let class = classify_mode(&lat, &mode);
        let wave = class != ModeClass::Mean && class != ModeClass::NonCharacteristic;
        rows.push(vec![
            join(&mode.alpha0),
            join(&mode.alpha1),
            class.label().to_string(),
            num(lat.dot(&mode.alpha0)),
            num(lat.dot(&mode.alpha1)),
            num(lat.divisor_floor(&mode.alpha1)),
            if wave { num(group_velocity(&lat, &mode)?) } else { String::new() },
            if wave { num(diffraction_coeff(&lat, &mode)?) } else { String::new() },
        ]);
    }
    write_csv(
        &dir.join("modes.csv"),
        &["alpha0", "alpha1", "class", "k_dot_alpha0", "k_dot_alpha1", "divisor_floor", "group_velocity", "diffraction"],
        rows,
    )?;
    let res = resonant_set(&sys, &lat, None)?;
    write_csv(
        &dir.join("resonances.csv"),
        &["m", "n", "alpha1", "omega_mn"],
        res.iter().map(|r| {
            vec![
                r.m.to_string(),
                r.n.to_string(),
                join(&r.alpha1),
                num(sys.omega()[r.m] - sys.omega()[r.n]),
            ]
        }),
    )?;
    #[derive(Serialize)]
    struct Info<'a> {
        k: &'a [f64],
        exponent: f64,
        c_dioph: f64,
        a_max: i64,
        modes: usize,
        resonances: usize,
    }
    write_json(
        &dir.join("spectral_info.json"),
        &Info {
            k: lat.k(),
            exponent: lat.exponent(),
            c_dioph: lat.c_dioph(),
            a_max: lat.a_max(),
            modes: lat.modes().len(),
            resonances: res.len(),
        },
    )?;
    manifest.files.extend(["modes.csv".into(), "resonances.csv".into(), "spectral_info.json".into()]);
    Ok(())
}
