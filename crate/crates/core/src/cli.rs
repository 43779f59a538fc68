//! Batch front end: argument parsing, mode dispatch and artifact output.
//!
//! Exit codes: 0 when every enabled check passes, 1 on I/O or numerical
//! failure, 2 on a rejected configuration, 3 when a solver or the coupled
//! iteration did not converge, 4 when a verification check failed.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::audit::{coarea_pair, energy_history, GapTable};
use crate::config::{Mode, RunConfig};
use crate::coupling::{self, check_no_touch, initial_speed, CoupledSolution};
use crate::eikonal::{solve_eikonal_banded, verify_theta_bounds};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::gradcheck;
use crate::io::{write_jsonl, write_records, ArtifactSink, Field, Manifest};
use crate::mechanics::{default_test_set, weak_residual};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Largest relative coarea gap accepted at the smallest mollifier width.
pub const COAREA_TOL: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "accrete", version, about = "Accretive growth coupled to finite-strain viscoelasticity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Seed for the initial perturbation and random checks.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed_override: Option<u64>,

    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Coupled growth run; writes θ, snapshots of y and step reports.
    Simulate,
    /// Front solve with the speed of y₀ and the θ bound checks.
    Eikonal,
    /// Coupled run plus the energy balance and, for ε = 0, the coarea check.
    EnergyAudit,
    /// Coupled runs over `eps_list` and their pairwise gaps.
    SharpLimit,
    /// Finite-difference checks of the constitutive derivatives.
    Gradcheck,
}

impl Command {
    pub fn mode(self) -> Mode {
        match self {
            Command::Simulate => Mode::Simulate,
            Command::Eikonal => Mode::Eikonal,
            Command::EnergyAudit => Mode::EnergyAudit,
            Command::SharpLimit => Mode::SharpLimit,
            Command::Gradcheck => Mode::Gradcheck,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Passed,
    NotConverged,
    CheckFailed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Passed => EXIT_OK,
            Status::NotConverged => EXIT_NOT_CONVERGED,
            Status::CheckFailed => EXIT_CHECK_FAILED,
        }
    }

    /// The worse of two outcomes; non-convergence dominates.
    fn and(self, other: Status) -> Status {
        match (self, other) {
            (Status::NotConverged, _) | (_, Status::NotConverged) => Status::NotConverged,
            (Status::CheckFailed, _) | (_, Status::CheckFailed) => Status::CheckFailed,
            _ => Status::Passed,
        }
    }

    fn check(ok: bool) -> Status {
        if ok {
            Status::Passed
        } else {
            Status::CheckFailed
        }
    }

    fn converged(ok: bool) -> Status {
        if ok {
            Status::Passed
        } else {
            Status::NotConverged
        }
    }
}

/// Result of one run: status, the manifest that was written and a short
/// human-readable summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub summary: Vec<String>,
}

/// Reads the configuration named on the command line and applies the
/// overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    config.mode = cli.command.mode();
    if let Some(dir) = &cli.out {
        config.output.dir = dir.clone();
    }
    if let Some(seed) = cli.seed_override {
        config.seed = seed;
    }
    Ok(config)
}

/// Parses `args`, runs, prints and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = load_config(&cli).and_then(|c| run(&c));
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                for line in &outcome.summary {
                    println!("{line}");
                }
            }
            outcome.status.code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            }
        }
    }
}

/// Validates `config`, executes its mode and writes every artifact plus the
/// manifest into `config.output.dir`.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let mut sink = ArtifactSink::new(&config.output.dir)?;
    let mut summary = vec![format!("mode: {}", config.mode.name())];
    let (status, results) = match config.mode {
        Mode::Simulate => run_simulate(config, &mut sink, &mut summary)?,
        Mode::Eikonal => run_eikonal(config, &mut sink, &mut summary)?,
        Mode::EnergyAudit => run_energy_audit(config, &mut sink, &mut summary)?,
        Mode::SharpLimit => run_sharp_limit(config, &mut sink, &mut summary)?,
        Mode::Gradcheck => run_gradcheck(config, &mut summary)?,
    };
    let manifest = Manifest {
        tool: "accrete".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode: config.mode.name().into(),
        config_hash: config.hash(),
        config: to_value(&config.identity()),
        passed: status == Status::Passed,
        results,
        files: sink.files.clone(),
    };
    let manifest_path = sink.write_manifest(&manifest)?;
    summary.push(format!("status: {}", status_word(status)));
    Ok(Outcome {
        status,
        manifest,
        manifest_path,
        summary,
    })
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Passed => "PASS",
        Status::NotConverged => "NOT CONVERGED",
        Status::CheckFailed => "CHECK FAILED",
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Writes θ fields, strided snapshots of y and the per-step and
/// per-iteration records of one coupled solution under `prefix`.
fn write_solution(sink: &mut ArtifactSink, config: &RunConfig, prefix: &str, sol: &CoupledSolution) -> Result<()> {
    let grid = sol.theta.grid().clone();
    let out = &config.output;
    sink.fields(
        &format!("{prefix}theta"),
        &grid,
        &[
            Field::scalar("theta", &sol.theta),
            Field::scalar("theta0", &sol.theta0),
            Field::scalar("theta_next", &sol.theta_next),
        ],
        out.csv,
        out.vtk,
    )?;
    let steps = sol.y.steps();
    for i in (0..=steps).filter(|i| i % out.stride == 0 || *i == steps) {
        sink.fields(
            &format!("{prefix}y_{i:04}"),
            &grid,
            &[Field::vector("y", sol.y.snapshot(i))],
            out.csv,
            out.vtk,
        )?;
    }
    let name = format!("{prefix}steps.jsonl");
    write_jsonl(&sink.path(&name), &sol.y.reports)?;
    sink.record(&name)?;
    let name = format!("{prefix}coupling.jsonl");
    write_jsonl(&sink.path(&name), &sol.history)?;
    sink.record(&name)?;
    Ok(())
}

fn solution_summary(sol: &CoupledSolution) -> Value {
    json!({
        "iterations": sol.iterations,
        "converged": sol.converged,
        "steps_converged": sol.y.all_converged(),
        "no_touch": sol.no_touch,
        "min_det": sol.y.min_det(),
        "bounds": to_value(&sol.bounds),
        "history": to_value(&sol.history),
        "contraction_note": "empirical stopping rule; the iteration is not proven to converge",
    })
}

fn solution_status(sol: &CoupledSolution, config: &RunConfig) -> Status {
    Status::converged(sol.converged && sol.y.all_converged())
        .and(Status::check(sol.bounds.is_clean() && sol.no_touch && sol.y.min_det() >= config.solver.det_floor))
}

fn describe(summary: &mut Vec<String>, sol: &CoupledSolution) {
    summary.push(format!(
        "coupled iterations: {} (converged: {}), last theta change: {:.3e}",
        sol.iterations,
        sol.converged,
        sol.history.last().map_or(0.0, |r| r.theta_change)
    ));
    summary.push(format!(
        "steps converged: {}, min det: {:.4}, theta bound violations: {}, no-touch: {}",
        sol.y.all_converged(),
        sol.y.min_det(),
        sol.bounds.violations(),
        sol.no_touch
    ));
}

fn run_simulate(config: &RunConfig, sink: &mut ArtifactSink, summary: &mut Vec<String>) -> Result<(Status, Value)> {
    let problem = config.problem()?;
    let sol = coupling::iterate(&problem, &config.coupling)?;
    write_solution(sink, config, "", &sol)?;
    describe(summary, &sol);
    let results = json!({
        "solution": solution_summary(&sol),
        "derived_constants": to_value(&config.material.derived_constants()),
    });
    Ok((solution_status(&sol, config), results))
}

fn run_eikonal(config: &RunConfig, sink: &mut ArtifactSink, summary: &mut Vec<String>) -> Result<(Status, Value)> {
    let problem = config.problem()?;
    let grid = problem.grid.clone();
    let speed = initial_speed(&problem.y0, &problem.params);
    let region = config.region();
    let bounds = problem.speed_bounds();
    let front = solve_eikonal_banded(&speed, &region, config.init_band, bounds)?;
    let report = verify_theta_bounds(&front, Some(&region), bounds)?;
    let mut fields = vec![Field::scalar("theta", &front.theta), Field::scalar("speed", &speed)];
    let (lo, hi) = (speed.min(), speed.max());
    let mut linf = None;
    if hi - lo <= 1e-15 * hi {
        // Uniform speed: θ is the distance to Ω₀ over the speed.
        let exact = ScalarField::from_fn(grid.clone(), |x| region.distance(&x) / hi);
        let err = ScalarField::new(
            grid.clone(),
            front.theta.values.iter().zip(&exact.values).map(|(a, b)| a - b).collect(),
        )?;
        let e = front.theta.max_abs_diff(&exact);
        summary.push(format!("uniform speed {hi}: L-inf error vs exact distance {e:.4e} ({:.3} h)", e / grid.h()));
        fields.push(Field::scalar("exact", &exact));
        fields.push(Field::scalar("error", &err));
        linf = Some(e);
    }
    sink.fields("theta", &grid, &fields, config.output.csv, config.output.vtk)?;
    let no_touch = check_no_touch(&front.theta, config.time.t_final, &grid);
    summary.push(format!(
        "theta bound violations: {} (checked {}, shocks {}), no-touch: {no_touch}",
        report.violations(),
        report.checked,
        report.shocks
    ));
    let results = json!({
        "linf_error": linf,
        "h": grid.h(),
        "bounds": to_value(&report),
        "no_touch": no_touch,
        "speed_range": [lo, hi],
    });
    Ok((Status::check(report.is_clean()), results))
}

fn run_energy_audit(config: &RunConfig, sink: &mut ArtifactSink, summary: &mut Vec<String>) -> Result<(Status, Value)> {
    let problem = config.problem()?;
    let sol = coupling::iterate(&problem, &config.coupling)?;
    write_solution(sink, config, "", &sol)?;
    describe(summary, &sol);
    let params = &problem.params;
    let m = config.audit.samples_per_step;
    let history = energy_history(&sol.y, &sol.theta, params, m)?;
    write_records(&sink.path("energy.csv"), &history)?;
    sink.record("energy.csv")?;
    let last = history.last().expect("history has the initial entry").clone();
    let scale = last.energy_initial.abs() + last.dissipation.abs() + last.phase_power.abs() + last.load_rate.abs();
    let finite = history.iter().all(|r| {
        [r.stored, r.hyper, r.load, r.dissipation, r.load_rate, r.phase_power, r.residual]
            .iter()
            .all(|v| v.is_finite())
    });
    let monotone = history.windows(2).all(|w| w[1].dissipation >= w[0].dissipation);
    let weak = weak_residual(&sol.y, &sol.theta, params, &default_test_set())?;
    summary.push(format!(
        "energy residual at T: {:.4e} (relative {:.3e}), dissipation {:.4e}, phase power {:.4e}",
        last.residual,
        last.residual.abs() / scale.max(f64::MIN_POSITIVE),
        last.dissipation,
        last.phase_power
    ));
    summary.push(format!("weak residual: {weak:.4e}"));
    let mut status = solution_status(&sol, config).and(Status::check(finite && monotone));
    let mut coarea = Value::Null;
    if params.eps == 0.0 {
        let h = problem.grid.h();
        let table = GapTable::new(&sol.y, params, m)?;
        let mut rows = Vec::new();
        for &d in &config.audit.deltas {
            let (surface, volume) = coarea_pair(&problem.grid, &sol.theta.values, &table, problem.t_final, d * h);
            let gap = if surface == volume { 0.0 } else { (surface - volume).abs() / surface.abs().max(volume.abs()) };
            summary.push(format!("coarea delta = {d} h: surface {surface:.6e}, volume {volume:.6e}, gap {gap:.3e}"));
            rows.push(json!({"delta": d * h, "surface": surface, "volume": volume, "gap": gap}));
        }
        let gaps: Vec<f64> = rows.iter().map(|r| r["gap"].as_f64().unwrap()).collect();
        let ok = gaps.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0) && gaps.last().map_or(true, |g| *g <= COAREA_TOL);
        status = status.and(Status::check(ok));
        coarea = json!({"rows": rows, "passed": ok});
    }
    let results = json!({
        "solution": solution_summary(&sol),
        "final": to_value(&last),
        "relative_residual": last.residual.abs() / scale.max(f64::MIN_POSITIVE),
        "dissipation_monotone": monotone,
        "weak_residual": weak,
        "coarea": coarea,
    });
    Ok((status, results))
}

fn run_sharp_limit(config: &RunConfig, sink: &mut ArtifactSink, summary: &mut Vec<String>) -> Result<(Status, Value)> {
    let problem = config.problem()?;
    let sweep = coupling::sharp_limit_sweep(&problem, &config.eps_list, &config.coupling)?;
    let mut status = Status::Passed;
    let mut levels = Vec::new();
    for (j, (eps, sol)) in sweep.eps.iter().zip(&sweep.solutions).enumerate() {
        write_solution(sink, config, &format!("eps{j}_"), sol)?;
        summary.push(format!(
            "eps = {eps}: iterations {}, converged {}, bound violations {}",
            sol.iterations,
            sol.converged,
            sol.bounds.violations()
        ));
        status = status.and(solution_status(sol, config));
        levels.push(json!({"eps": eps, "solution": solution_summary(sol)}));
    }
    for g in &sweep.gaps {
        summary.push(format!(
            "gap {} -> {}: theta {:.4e}, y {:.4e}",
            g.eps_from, g.eps_to, g.theta_gap, g.y_gap
        ));
    }
    let decreasing = sweep.theta_gaps_decrease();
    summary.push(format!("theta gaps decrease: {decreasing}"));
    status = status.and(Status::check(decreasing));
    let results = json!({
        "levels": levels,
        "gaps": to_value(&sweep.gaps),
        "theta_gaps_decrease": decreasing,
    });
    Ok((status, results))
}

fn run_gradcheck(config: &RunConfig, summary: &mut Vec<String>) -> Result<(Status, Value)> {
    let r = gradcheck::run(&config.material, &config.gradcheck, config.seed)?;
    summary.push(format!(
        "max relative error over {} states (step {:e}): dW/dF {:.3e}, dR/dFdot {:.3e}, DH {:.3e} (tol {:e})",
        r.samples, r.step, r.stored, r.viscous, r.hyper, r.tol
    ));
    summary.push(format!("growth rate Lipschitz estimate: {:.4}", r.growth_lipschitz));
    Ok((Status::check(r.passed()), to_value(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_combination() {
        use Status::*;
        assert_eq!(Passed.and(CheckFailed), CheckFailed);
        assert_eq!(CheckFailed.and(NotConverged), NotConverged);
        assert_eq!(Passed.and(Passed), Passed);
        assert_eq!(NotConverged.code(), EXIT_NOT_CONVERGED);
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["accrete", "eikonal", "--quiet", "--seed-override", "9", "--out", "x"]).unwrap();
        assert_eq!(cli.command, Command::Eikonal);
        assert!(cli.quiet);
        let c = load_config(&cli).unwrap();
        assert_eq!((c.seed, c.mode), (9, Mode::Eikonal));
        assert_eq!(c.output.dir, PathBuf::from("x"));
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(main_with_args(["accrete", "bogus"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["accrete", "gradcheck", "--config", "/nonexistent/x.toml"]), EXIT_FAILURE);
    }
}
