//! Command implementations behind the `polykin` binary: run a configured
//! simulation and emit machine-readable outputs, gate a short run on the
//! invariant suite, execute refinement sweeps, and check the equilibrium
//! fixed point.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 configuration error,
//! 3 solver non-convergence.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::confspace::{kramers_stress, StressForm};
use crate::diagnostics::{invariant_suite, InvariantTolerances};
use crate::solver::{level_sweep, RunResult, Simulation};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Environment variable overriding the output directory (the `--out` flag
/// takes precedence over it).
pub const OUT_DIR_ENV: &str = "POLYKIN_OUT";

const SCHEMA_VERSION: &str = "1";

/// Column names and descriptions of `series.csv`, also echoed to
/// `meta.json`.
const SERIES_COLUMNS: &[(&str, &str)] = &[
    ("time", "report time"),
    ("kinetic", "kinetic energy 1/2 int rho |v|^2"),
    ("entropy", "relative entropy k int M zeta(rho) F(psi)"),
    ("viscous_dissipation", "rate int mu(rho,varrho) |D(v)|^2"),
    ("x_dissipation", "rate 4k int M |grad_x sqrt(psi)|^2"),
    ("q_dissipation", "rate 4k int M A(grad_q sqrt(psi)):grad_q sqrt(psi)"),
    ("forcing_work", "rate int rho f . v"),
    ("residual", "energy budget residual, trapezoid-accumulated"),
    ("rho_min", "minimum density over the grid"),
    ("rho_max", "maximum density over the grid"),
    ("psi_min", "minimum configuration density over the tensor grid"),
    ("fluid_mass", "int rho"),
    ("pdf_mass", "weighted mass int M^m zeta(rho) psi"),
    ("lambda_max", "max over x of int M^m psi dq"),
    ("clamp_fraction", "fraction of tensor nodes clamped in sqrt terms"),
    ("cancellation_gap", "stress work vs drag drive cancellation defect"),
    ("picard_iterations", "Picard iterations of the step"),
    ("liouville_residual", "worst |det grad X - 1| over probe points"),
];

struct Resolved {
    config: RunConfig,
    out_dir: PathBuf,
}

fn resolve(
    config_path: &Path,
    out_override: Option<&Path>,
    cadence: Option<usize>,
    seed: Option<u64>,
) -> Result<Resolved, Error> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(c) = cadence {
        config.output.cadence = c.max(1);
    }
    if let Some(s) = seed {
        config.output.seed = s;
    }
    let out_dir = if let Some(p) = out_override {
        p.to_path_buf()
    } else if let Ok(env) = std::env::var(OUT_DIR_ENV) {
        PathBuf::from(env)
    } else {
        PathBuf::from(&config.output.directory)
    };
    Ok(Resolved { config, out_dir })
}

fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_series(path: &Path, result: &RunResult) -> Result<(), Error> {
    let mut file = std::fs::File::create(path)?;
    let header: Vec<&str> = SERIES_COLUMNS.iter().map(|(n, _)| *n).collect();
    writeln!(file, "{}", header.join(","))?;
    for r in &result.reports {
        let row = [
            format_f64(r.time),
            format_f64(r.kinetic),
            format_f64(r.entropy),
            format_f64(r.viscous_dissipation),
            format_f64(r.x_dissipation),
            format_f64(r.q_dissipation),
            format_f64(r.forcing_work),
            format_f64(r.residual),
            format_f64(r.rho_min),
            format_f64(r.rho_max),
            format_f64(r.psi_min),
            format_f64(r.fluid_mass),
            format_f64(r.pdf_mass),
            format_f64(r.lambda_max),
            format_f64(r.clamp_fraction),
            format_f64(r.cancellation_gap),
            r.picard_iterations.to_string(),
            format_f64(r.liouville_residual),
        ];
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_binary(path: &Path, data: &[f64]) -> Result<(), Error> {
    let mut bytes = Vec::with_capacity(8 * data.len());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn write_sidecar(
    path: &Path,
    time: f64,
    shape: &[usize],
    order: &str,
) -> Result<(), Error> {
    let sidecar = serde_json::json!({
        "dtype": "f64-le",
        "time": time,
        "shape": shape,
        "order": order,
    });
    std::fs::write(path, serde_json::to_string_pretty(&sidecar).expect("json"))?;
    Ok(())
}

fn write_snapshots(dir: &Path, sim: &Simulation, result: &RunResult) -> Result<(), Error> {
    let snap_dir = dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir)?;
    let grid = sim.grid();
    let n = grid.n;
    let gpts = grid.len();
    let quad = sim.quadrature();
    let xcache = sim.pdf_basis().xbasis.cache_on(grid);
    for (idx, snap) in result.snapshots.iter().enumerate() {
        let rho_path = snap_dir.join(format!("rho_{idx:04}.bin"));
        write_binary(&rho_path, &snap.rho)?;
        write_sidecar(
            &snap_dir.join(format!("rho_{idx:04}.json")),
            snap.time,
            &[n, n],
            "row-major over the x-grid (x0-major, then x1)",
        )?;

        let vvals = sim.velocity_basis().cache_on(grid).field(&snap.velocity, gpts);
        let mut flat = Vec::with_capacity(gpts * 2);
        for v in &vvals {
            flat.extend_from_slice(v);
        }
        write_binary(&snap_dir.join(format!("velocity_{idx:04}.bin")), &flat)?;
        write_sidecar(
            &snap_dir.join(format!("velocity_{idx:04}.json")),
            snap.time,
            &[n, n, 2],
            "row-major over the x-grid (x0-major, then x1), then component",
        )?;

        let psi = sim.pdf_basis().values_on(&xcache, quad, &snap.pdf, gpts);
        write_binary(&snap_dir.join(format!("pdf_{idx:04}.bin")), &psi)?;
        write_sidecar(
            &snap_dir.join(format!("pdf_{idx:04}.json")),
            snap.time,
            &[n, n, quad.len()],
            "row-major over the x-grid (x0-major, then x1), then configuration quadrature node",
        )?;
    }
    Ok(())
}

fn write_meta(
    dir: &Path,
    config: &RunConfig,
    warnings: &[String],
    build_seconds: f64,
    run_seconds: f64,
) -> Result<(), Error> {
    let columns: Vec<serde_json::Value> = SERIES_COLUMNS
        .iter()
        .map(|(n, d)| serde_json::json!({"name": n, "description": d}))
        .collect();
    let meta = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "generator": format!("polykin {}", env!("CARGO_PKG_VERSION")),
        "config": serde_json::to_value(config).expect("config serializes"),
        "series_columns": columns,
        "timings": {"build_seconds": build_seconds, "run_seconds": run_seconds},
        "warnings": warnings,
    });
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).expect("json"))?;
    Ok(())
}

fn classify(err: &Error) -> i32 {
    match err {
        Error::FixedPoint { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

/// `run`: advance the configured simulation and write `series.csv`,
/// `snapshots/` and `meta.json` into the output directory.
pub fn cmd_run(
    config_path: &Path,
    out_override: Option<&Path>,
    cadence: Option<usize>,
    seed: Option<u64>,
) -> i32 {
    match run_inner(config_path, out_override, cadence, seed) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn run_inner(
    config_path: &Path,
    out_override: Option<&Path>,
    cadence: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let resolved = resolve(config_path, out_override, cadence, seed)?;
    let t0 = std::time::Instant::now();
    let (setup, laws) = resolved.config.build()?;
    let sim = Simulation::new(setup, laws)?;
    let build_seconds = t0.elapsed().as_secs_f64();
    let t1 = std::time::Instant::now();
    let result = sim.run_with_cadence(resolved.config.output.cadence)?;
    let run_seconds = t1.elapsed().as_secs_f64();
    std::fs::create_dir_all(&resolved.out_dir)?;
    write_series(&resolved.out_dir.join("series.csv"), &result)?;
    write_snapshots(&resolved.out_dir, &sim, &result)?;
    write_meta(&resolved.out_dir, &resolved.config, &result.warnings, build_seconds, run_seconds)?;
    println!(
        "run complete: {} steps, {} snapshots, outputs in {}",
        result.reports.len() - 1,
        result.snapshots.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

/// `check`: run a short segment and gate on the invariant suite.
pub fn cmd_check(config_path: &Path, out_override: Option<&Path>) -> i32 {
    let resolved = match resolve(config_path, out_override, None, None) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let built = resolved.config.build().and_then(|(mut setup, laws)| {
        // short run: at most 20 steps
        setup.t_final = setup.t_final.min(20.0 * setup.dt);
        let steps = (setup.t_final / setup.dt).round().max(1.0);
        setup.t_final = steps * setup.dt;
        Simulation::new(setup, laws)
    });
    let sim = match built {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match sim.run() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return classify(&e);
        }
    };
    let report = invariant_suite(
        &result.reports,
        sim.laws(),
        sim.is_forced(),
        &InvariantTolerances::default(),
    );
    println!(
        "{:<36} {:>13} {:>13} {:>6}  location",
        "invariant", "worst", "tolerance", "pass"
    );
    for row in &report.rows {
        println!(
            "{:<36} {:>13.3e} {:>13.3e} {:>6}  {}{}",
            row.name,
            row.worst,
            row.tolerance,
            if row.pass { "ok" } else { "FAIL" },
            row.location,
            if row.informational { " (informational)" } else { "" },
        );
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}

/// `sweep`: execute the configured refinement ladders and write `sweep.csv`.
pub fn cmd_sweep(config_path: &Path, out_override: Option<&Path>) -> i32 {
    match sweep_inner(config_path, out_override) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn sweep_inner(config_path: &Path, out_override: Option<&Path>) -> Result<(), Error> {
    let resolved = resolve(config_path, out_override, None, None)?;
    let (setup, laws) = resolved.config.build()?;
    let rows = level_sweep(&setup, &laws, &resolved.config.sweep)?;
    std::fs::create_dir_all(&resolved.out_dir)?;
    let path = resolved.out_dir.join("sweep.csv");
    let mut file = std::fs::File::create(&path)?;
    writeln!(file, "axis,level_lo,level_hi,distance,ratio")?;
    for row in &rows {
        writeln!(
            file,
            "{},{},{},{},{}",
            row.axis,
            format_f64(row.level_lo),
            format_f64(row.level_hi),
            format_f64(row.distance),
            format_f64(row.ratio),
        )?;
        println!(
            "{:<16} {:>10.4} -> {:>10.4}  distance {:.6e}  ratio {:.3}",
            row.axis, row.level_lo, row.level_hi, row.distance, row.ratio
        );
    }
    println!("sweep table written to {}", path.display());
    Ok(())
}

/// `equilibrium`: run 100 steps from the configured state and require that
/// no coefficient moved by more than 1e-9 and that the stress stays below
/// 1e-9; a regression gate for the equilibrium fixed point.
pub fn cmd_equilibrium(config_path: &Path) -> i32 {
    match equilibrium_inner(config_path) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_INVARIANT,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    }
}

fn equilibrium_inner(config_path: &Path) -> Result<bool, Error> {
    let config = RunConfig::load(config_path)?;
    let (mut setup, laws) = config.build()?;
    setup.t_final = 100.0 * setup.dt;
    let sim = Simulation::new(setup, laws)?;
    let result = sim.run_with_cadence(100)?;
    let first = &result.snapshots[0];
    let last = result.snapshots.last().expect("at least the initial snapshot");
    let drift = (&last.velocity - &first.velocity)
        .amax()
        .max((&last.pdf - &first.pdf).amax());

    // stress at the final state
    let ctx = sim.diag_context();
    let gpts = sim.grid().len();
    let nq = sim.quadrature().len();
    let xcache = sim.pdf_basis().xbasis.cache_on(sim.grid());
    let psi = sim.pdf_basis().values_on(&xcache, sim.quadrature(), &last.pdf, gpts);
    let mut tau_max = 0.0f64;
    for g in 0..gpts {
        let zeta = sim.laws().zeta(last.rho[g]);
        let (tau, _) = kramers_stress(
            ctx.quad,
            ctx.maxwellian,
            ctx.cutoff,
            zeta,
            sim.laws().k_stress,
            &psi[g * nq..(g + 1) * nq],
            None,
            StressForm::Divergence,
        )?;
        tau_max = tau_max.max(tau.amax());
    }
    println!("equilibrium drift {drift:.3e}, stress magnitude {tau_max:.3e}");
    Ok(drift <= 1e-9 && tau_max <= 1e-9)
}
