//! The `qpeuler` command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 solver abort,
//! 4 tolerance breach (including an unconfirmed near-resonant `Ω`).

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{field_from_entries, ConfigError, Formulation, RunConfig};
use crate::diffeo::{invert, lift, QPDiffeo, TorusGrid};
use crate::error::QpError;
use crate::field::{NormParams, QPVectorField};
use crate::io::{export_grid, Snapshot};
use crate::lattice::{check_nonresonance, ModeSet, NonresonanceReport};
use crate::operators::leray_project;
use crate::presets;
use crate::solver::{
    integrate_lagrangian_with, integrate_with, rhs_eulerian, trajectories, EulerianState,
    LagrangianState, RecordedVelocity, SolverConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_TOLERANCE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "qpeuler", version, about = "Quasi-periodic incompressible Euler solver")]
struct Cli {
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a run configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proceed even if the mode box is near-resonant.
        #[arg(long)]
        allow_resonant: bool,
        /// Overrides `solver.dt`.
        #[arg(long)]
        dt: Option<f64>,
        /// Overrides `solver.t_end`.
        #[arg(long)]
        t_end: Option<f64>,
        /// Overrides `initial.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a snapshot on a rectangular window.
    ExportGrid {
        snapshot: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lo: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        hi: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        resolution: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert the diffeomorphism described by the `[diffeo]` section.
    InvertDiffeo {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_resonant: bool,
    },
    /// Report the separation of `Λ` over the mode box.
    CheckOmega {
        config: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn breach(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_TOLERANCE,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(format!("config error: {e}"))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::config(format!("{}: {e}", path.display()))
}

/// Exit code for an error raised while building inputs.
fn input_error(field: &str, e: QpError) -> CliError {
    CliError::config(format!("config error: {field}: {e}"))
}

/// Parses `args` (program name first), runs the verb and returns the exit
/// code. Messages go to stderr, reports to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::config(format!("thread pool: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qpeuler: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run {
            config,
            out,
            allow_resonant,
            dt,
            t_end,
            seed,
        } => run(&config, out, allow_resonant, dt, t_end, seed),
        Command::ExportGrid {
            snapshot,
            lo,
            hi,
            resolution,
            out,
        } => export(&snapshot, &lo, &hi, &resolution, &out),
        Command::InvertDiffeo {
            config,
            out,
            allow_resonant,
        } => invert_diffeo(&config, out, allow_resonant),
        Command::CheckOmega { config, tol } => check_omega(&config, tol),
    }
}

fn load(path: &Path) -> Result<(String, RunConfig), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let cfg = RunConfig::parse(&text)?;
    Ok((text, cfg))
}

fn report_json(r: &NonresonanceReport) -> serde_json::Value {
    json!({
        "ok": r.ok,
        "tol": r.tol,
        "closest_pair": r.worst_pair.as_ref().map(|(a, b, d)| json!({
            "m": a.0, "m_prime": b.0, "separation": d,
        })),
    })
}

fn check_omega(path: &Path, tol: Option<f64>) -> Result<i32, CliError> {
    let (_, cfg) = load(path)?;
    let ms = cfg.mode_set()?;
    let tol = tol.unwrap_or(cfg.tolerances().nonresonance);
    let report = check_nonresonance(&ms, tol);
    let out = json!({
        "mode_set": ms.summary(),
        "nonresonance": report_json(&report),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(if report.ok { EXIT_OK } else { EXIT_TOLERANCE })
}

fn resonance_gate(ms: &ModeSet, cfg: &RunConfig, allow: bool) -> Result<NonresonanceReport, CliError> {
    let report = check_nonresonance(ms, cfg.tolerances().nonresonance);
    if !report.ok && !(allow || cfg.allow_resonant) {
        let detail = report
            .worst_pair
            .as_ref()
            .map(|(a, b, d)| format!("Λ_{a} and Λ_{b} are {d:.3e} apart"))
            .unwrap_or_default();
        return Err(CliError::breach(format!(
            "mode box is near-resonant ({detail}, tol {:.1e}); pass --allow-resonant to proceed",
            report.tol
        )));
    }
    Ok(report)
}

fn initial_field(
    ms: &Arc<ModeSet>,
    cfg: &RunConfig,
    norm: &NormParams,
    seed: Option<u64>,
) -> Result<(QPVectorField, f64), CliError> {
    let init = cfg
        .initial
        .clone()
        .ok_or_else(|| CliError::config("config error: initial: section missing"))?;
    let amplitude = init.amplitude.unwrap_or(0.1);
    let raw = match (&init.preset, &init.modes) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("config error: initial: give either preset or modes"))
        }
        (None, None) => return Err(CliError::config("config error: initial: missing preset or modes")),
        (None, Some(entries)) => field_from_entries(ms, entries, "initial.modes")?,
        (Some(p), None) => {
            let built = match p.as_str() {
                "shear" => presets::shear(ms, amplitude),
                "taylor_green" => presets::taylor_green(ms, amplitude),
                "random_divfree" => presets::random_divfree(
                    ms,
                    seed.unwrap_or(init.seed),
                    init.sub_radius.unwrap_or(ms.radius()),
                    amplitude,
                    norm.s,
                ),
                "quasipattern" => presets::quasipattern(ms, amplitude),
                other => {
                    return Err(CliError::config(format!(
                        "config error: initial.preset: unknown preset {other:?}"
                    )))
                }
            };
            built.map_err(|e| input_error("initial.preset", e))?
        }
    };
    if !init.leray {
        return Ok((raw, 0.0));
    }
    let projected = leray_project(&raw).map_err(|e| input_error("initial", e))?;
    let delta = projected.sub(&raw).map_err(|e| input_error("initial", e))?.l2_norm();
    Ok((projected, delta))
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn create(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(dir.join("snapshots")).map_err(|e| io_error(&dir, e))?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn snapshot(&mut self, step: usize, t: f64, u: &QPVectorField, norm: NormParams) -> Result<(), CliError> {
        let snap = Snapshot {
            t,
            field: u.clone(),
            norm,
        };
        self.write_with(&format!("snapshots/step_{step:07}.txt"), |w| snap.write(w))
    }
}

fn run(
    path: &Path,
    out: Option<PathBuf>,
    allow_resonant: bool,
    dt: Option<f64>,
    t_end: Option<f64>,
    seed: Option<u64>,
) -> Result<i32, CliError> {
    let (text, cfg) = load(path)?;
    let ms = cfg.mode_set()?;
    let norm = cfg.norm_params(&ms)?;
    let tol = cfg.tolerances();
    let solver = cfg
        .solver
        .clone()
        .ok_or_else(|| CliError::config("config error: solver: section missing"))?;
    let dir = out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qpeuler-out"));
    let n = ms.space_dim();
    if let Some((i, s)) = cfg.output.trajectories.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(CliError::config(format!(
            "config error: output.trajectories[{i}]: has {} coordinates, expected n = {n}",
            s.len()
        )));
    }

    let report = resonance_gate(&ms, &cfg, allow_resonant)?;
    let (u0, leray_delta) = initial_field(&ms, &cfg, &norm, seed)?;

    let mut sc = SolverConfig::new(dt.unwrap_or(solver.dt), t_end.unwrap_or(solver.t_end), norm);
    sc.div_tol = tol.div_tol;
    sc.record_every = cfg.output.record_every.unwrap_or(1).max(1);
    sc.backend = solver.backend;
    sc.strict = solver.strict;
    sc.newton_tol = tol.newton_tol;
    sc.newton_max_iter = tol.newton_max_iter;
    if !(sc.dt > 0.0 && sc.dt.is_finite()) {
        return Err(CliError::config(format!("config error: solver.dt: must be positive, got {}", sc.dt)));
    }
    if !(sc.t_end >= 0.0 && sc.t_end.is_finite()) {
        return Err(CliError::config(format!(
            "config error: solver.t_end: must be nonnegative, got {}",
            sc.t_end
        )));
    }
    let steps = sc.steps();
    let snapshot_every = cfg.output.snapshot_every.unwrap_or(0);
    let wants_snapshot = |step: usize| step == 0 || step == steps || (snapshot_every > 0 && step % snapshot_every == 0);
    let grid = match solver.mode {
        Formulation::Eulerian => None,
        Formulation::Lagrangian => {
            let points = solver.grid.unwrap_or_else(|| TorusGrid::default_points(&ms));
            Some(
                TorusGrid::new(&ms, points)
                    .map_err(|e| input_error("solver.grid", e))?
                    .with_aliasing_threshold(tol.aliasing),
            )
        }
    };

    let mut art = Artifacts::create(dir)?;
    art.write_with("config.toml", |w| w.write_all(text.as_bytes()))?;

    let seeds = cfg.output.trajectories.clone();
    let mut paths: Vec<Vec<(f64, Vec<f64>)>> = seeds.iter().map(|s| vec![(0.0, s.clone())]).collect();
    let mut side_error: Option<CliError> = None;
    let mut last_step = 0usize;

    let (diagnostics, abort, t_final) = match &grid {
        None => {
            let backend = sc.backend.build(&ms).map_err(|e| input_error("solver.backend", e))?;
            let mut prev: Option<(f64, QPVectorField, QPVectorField)> = None;
            let outcome = integrate_with(EulerianState { t: 0.0, u: u0.clone() }, &sc, |step, s| {
                if side_error.is_some() {
                    return;
                }
                last_step = step;
                if wants_snapshot(step) {
                    if let Err(e) = art.snapshot(step, s.t, &s.u, norm) {
                        side_error = Some(e);
                        return;
                    }
                }
                if seeds.is_empty() {
                    return;
                }
                let mut advance = || -> crate::Result<QPVectorField> {
                    let rate = rhs_eulerian(&s.u, &backend)?;
                    if let Some((t_prev, u_prev, r_prev)) = &prev {
                        let h = s.t - t_prev;
                        let provider = RecordedVelocity::from_samples(
                            *t_prev,
                            h,
                            vec![u_prev.clone(), s.u.clone()],
                            vec![r_prev.clone(), rate.clone()],
                        )?;
                        let starts: Vec<Vec<f64>> = paths.iter().map(|p| p.last().expect("seeded").1.clone()).collect();
                        let seg = trajectories(&provider, &starts, *t_prev, h, s.t)?;
                        for (p, sp) in paths.iter_mut().zip(seg) {
                            p.push(sp.last().expect("nonempty").clone());
                        }
                    }
                    Ok(rate)
                };
                match advance() {
                    Ok(rate) => prev = Some((s.t, s.u.clone(), rate)),
                    Err(e) => side_error = Some(CliError { code: EXIT_ABORT, message: format!("trajectories: {e}") }),
                }
            });
            let outcome = outcome.map_err(|e| input_error("solver", e))?;
            (outcome.diagnostics, outcome.abort, outcome.state.t)
        }
        Some(grid) => {
            let outcome = integrate_lagrangian_with(LagrangianState::initial(u0.clone()), &sc, grid, |step, s, u| {
                if side_error.is_some() {
                    return;
                }
                last_step = step;
                if wants_snapshot(step) {
                    if let Err(e) = art.snapshot(step, s.t, u, norm) {
                        side_error = Some(e);
                        return;
                    }
                }
                if step > 0 {
                    for (p, x0) in paths.iter_mut().zip(&seeds) {
                        p.push((s.t, s.phi.apply(x0)));
                    }
                }
            });
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => crate::solver::Outcome {
                    state: LagrangianState::initial(u0.clone()),
                    diagnostics: Default::default(),
                    abort: Some(e),
                },
            };
            (outcome.diagnostics, outcome.abort, outcome.state.t)
        }
    };
    if let Some(e) = side_error {
        return Err(e);
    }

    art.write_with("diagnostics.csv", |w| diagnostics.write_csv(w))?;
    if !seeds.is_empty() {
        art.write_with("trajectories.csv", |w| {
            let coords: Vec<String> = (1..=n).map(|j| format!("x{j}")).collect();
            writeln!(w, "seed,t,{}", coords.join(","))?;
            for (i, p) in paths.iter().enumerate() {
                for (t, x) in p {
                    let xs: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(w, "{i},{t:.16e},{}", xs.join(","))?;
                }
            }
            Ok(())
        })?;
    }

    let (status, code, message) = match &abort {
        None => ("completed", EXIT_OK, None),
        Some(e) => ("aborted", EXIT_ABORT, Some(e.to_string())),
    };
    let mut files = art.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "tool": "qpeuler",
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": path.display().to_string(),
        "config_text": text,
        "config": cfg,
        "overrides": { "dt": dt, "t_end": t_end, "seed": seed, "allow_resonant": allow_resonant },
        "mode_set": ms.summary(),
        "nonresonance": report_json(&report),
        "norm": norm,
        "tolerances": tol,
        "solver": {
            "mode": solver.mode,
            "dt": sc.dt,
            "t_end": sc.t_end,
            "steps": steps,
            "backend": sc.backend,
            "strict": sc.strict,
            "grid": grid.as_ref().map(TorusGrid::points),
        },
        "initial": {
            "leray_delta": leray_delta,
            "energy": u0.energy(),
            "divergence_l2": u0.divergence().l2_norm(),
        },
        "outcome": {
            "status": status,
            "exit_code": code,
            "message": message,
            "t_final": t_final,
            "last_step": last_step,
            "max_div_norm": diagnostics.max_div_norm(),
            "max_relative_energy_drift": diagnostics.max_relative_energy_drift(),
            "max_momentum_drift": diagnostics.max_momentum_drift(),
        },
        "artifacts": files,
    });
    art.write_with("manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })?;
    if let Some(m) = message {
        eprintln!("qpeuler: run aborted: {m}");
    }
    Ok(code)
}

fn export(snapshot: &Path, lo: &[f64], hi: &[f64], resolution: &[usize], out: &Path) -> Result<i32, CliError> {
    let file = fs::File::open(snapshot).map_err(|e| io_error(snapshot, e))?;
    let snap = Snapshot::read(BufReader::new(file)).map_err(|e| CliError::config(format!("{}: {e}", snapshot.display())))?;
    let target = fs::File::create(out).map_err(|e| io_error(out, e))?;
    let mut w = BufWriter::new(target);
    let count = export_grid(&mut w, &snap.field, lo, hi, resolution).map_err(CliError::config)?;
    w.flush().map_err(|e| io_error(out, e))?;
    println!("{count} points written to {}", out.display());
    Ok(EXIT_OK)
}

/// Uniform coefficients on `|m|_∞ ≤ r`, mean removed, scaled so that
/// `max |Λ_m| · Σ |f̂_m| = amplitude` with the maximum over that sub-box.
fn random_displacement(ms: &Arc<ModeSet>, seed: u64, r: u32, amplitude: f64) -> crate::Result<QPVectorField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ms.space_dim();
    let entries: Vec<_> = ms
        .modes()
        .filter(|m| m.max_norm() <= r && m.max_norm() > 0)
        .map(|m| {
            let v: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            (m, v)
        })
        .collect();
    let lam = entries
        .iter()
        .filter_map(|(m, _)| ms.lambda_of(m))
        .map(|l| l.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let f = QPVectorField::from_modes(ms, entries)?;
    let size = lam * f.wiener_norm();
    Ok(if size > 0.0 { f.scale(amplitude / size) } else { f })
}

fn invert_diffeo(path: &Path, out: Option<PathBuf>, allow_resonant: bool) -> Result<i32, CliError> {
    let (text, cfg) = load(path)?;
    let ms = cfg.mode_set()?;
    let tol = cfg.tolerances();
    let spec = cfg
        .diffeo
        .clone()
        .ok_or_else(|| CliError::config("config error: diffeo: section missing"))?;
    let report = resonance_gate(&ms, &cfg, allow_resonant)?;
    let f = match (&spec.modes, spec.seed) {
        (Some(_), Some(_)) => return Err(CliError::config("config error: diffeo: give either modes or seed")),
        (Some(entries), None) => field_from_entries(&ms, entries, "diffeo.modes")?,
        (None, seed) => random_displacement(
            &ms,
            seed.unwrap_or(0),
            spec.sub_radius.unwrap_or(ms.radius()),
            spec.amplitude.unwrap_or(0.1),
        )
        .map_err(|e| input_error("diffeo", e))?,
    };
    let points = spec.grid.unwrap_or_else(|| TorusGrid::default_points(&ms));
    let grid = TorusGrid::new(&ms, points)
        .map_err(|e| input_error("diffeo.grid", e))?
        .with_aliasing_threshold(tol.aliasing);
    let phi = QPDiffeo::new(f, &grid).map_err(|e| CliError::breach(format!("diffeo: {e}")))?;
    let inv = invert(&phi, &grid, tol.newton_tol, tol.newton_max_iter).map_err(|e| CliError {
        code: EXIT_ABORT,
        message: format!("inversion failed: {e}"),
    })?;
    let ok = inv.round_trip_residual <= tol.round_trip;
    let summary = json!({
        "mode_set": ms.summary(),
        "nonresonance": report_json(&report),
        "grid": points,
        "margin": phi.margin(),
        "inverse_margin": inv.inverse.margin(),
        "round_trip_residual": inv.round_trip_residual,
        "round_trip_tol": tol.round_trip,
        "newton_residual": inv.newton_residual,
        "max_newton_iterations": inv.max_newton_iterations,
        "aliasing_residual": inv.aliasing_residual,
        "aliasing_warning": inv.aliasing_residual > grid.aliasing_threshold(),
        "ok": ok,
    });
    if let Some(dir) = out {
        let mut art = Artifacts::create(dir)?;
        art.write_with("config.toml", |w| w.write_all(text.as_bytes()))?;
        let norm = cfg.norm_params(&ms)?;
        let (p, q) = (phi.displacement().clone(), inv.inverse.displacement().clone());
        art.write_with("displacement.txt", |w| {
            Snapshot { t: 0.0, field: p, norm }.write(w)
        })?;
        art.write_with("inverse.txt", |w| {
            Snapshot { t: 0.0, field: q, norm }.write(w)
        })?;
        if let Some(name) = &spec.lift_dump {
            let samples = lift(&phi, &grid).map_err(|e| input_error("diffeo", e))?;
            art.write_with(name, |w| samples.write_samples(w))?;
        }
        art.write_with("report.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &summary)?;
            writeln!(w)
        })?;
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    if !ok {
        eprintln!(
            "qpeuler: round-trip residual {:.3e} exceeds {:.1e}",
            inv.round_trip_residual, tol.round_trip
        );
        return Ok(EXIT_TOLERANCE);
    }
    Ok(EXIT_OK)
}
