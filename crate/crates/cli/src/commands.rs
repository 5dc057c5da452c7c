//! One function per subcommand.  Each parses nothing itself: it receives a
//! validated config, runs the experiment, and writes its files into the
//! output directory.  File contents are assembled in memory first, so a
//! failed run never leaves a half-written table behind.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use nldisp_core::{
    assemble, certify_unimodal, principal_eigenvalue, scaling_experiment, solve_mean, steady,
    sweep_d, Error, MixingScenario, ScalingOptions, SweepOutcome,
};

use crate::config::{vec_to_point, BoundaryChoice, MethodChoice, ScenarioConfig};
use crate::output::{fmt_f64, line_plot, write_file, write_report, Csv, RunReport};
use crate::CliError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn report<'a>(
    command: &'static str,
    status: &'a str,
    cfg: &'a ScenarioConfig,
    started: Instant,
    results: serde_json::Value,
) -> RunReport<'a> {
    RunReport {
        version: VERSION,
        command,
        seed: 0,
        wall_time_s: started.elapsed().as_secs_f64(),
        status,
        config: cfg,
        results,
    }
}

pub fn cmd_solve(cfg: &ScenarioConfig, out: &Path, started: Instant) -> Result<(), CliError> {
    let grid = cfg.build_grid()?;
    let op = assemble(&grid, cfg.kernel(), cfg.boundary())?;
    let m = cfg.resource(&op)?;
    let d = cfg.single_d()?;
    let opts = cfg.solver_options();
    let solved = match cfg.solver.method {
        MethodChoice::AlgebraicFp => steady::solve_fixed_point(&op, d, &m, &opts),
        MethodChoice::MonotoneTime => steady::solve_monotone(&op, d, &m, &opts),
    };
    let state = match solved {
        Ok(state) => state,
        // Extinction still gets a report: the certified eigenvalue is the
        // answer a pipeline branches on, and exit code 3 flags it.
        Err(Error::NoPositiveSteadyState { mu0 }) => {
            let rep = report(
                "solve",
                "no_positive_steady_state",
                cfg,
                started,
                json!({ "mu0": mu0 }),
            );
            write_report(out, &rep)?;
            return Err(CliError::Core(Error::NoPositiveSteadyState { mu0 }));
        }
        Err(e) => return Err(e.into()),
    };

    let mut csv = Csv::new();
    let dim = grid.dim();
    if dim == 1 {
        csv.row(["x", "m", "theta"]);
    } else {
        csv.row(["x", "y", "m", "theta"]);
    }
    for i in 0..grid.node_count() {
        let p = grid.node(i);
        let mut row = vec![fmt_f64(p[0])];
        if dim == 2 {
            row.push(fmt_f64(p[1]));
        }
        row.push(fmt_f64(m.values()[i]));
        row.push(fmt_f64(state.theta.values()[i]));
        csv.row(row);
    }
    write_file(out, "theta.csv", &csv.finish())?;

    let total_population = state.theta.integrate();
    let total_resource = m.integrate();
    let rep = report(
        "solve",
        "ok",
        cfg,
        started,
        json!({
            "mu0": state.mu0,
            "residual": state.residual,
            "iterations": state.iterations,
            "total_population": total_population,
            "total_resource": total_resource,
            "ratio": total_population / total_resource,
        }),
    );
    write_report(out, &rep)
}

pub fn cmd_eig(cfg: &ScenarioConfig, out: &Path, started: Instant) -> Result<(), CliError> {
    let grid = cfg.build_grid()?;
    let op = assemble(&grid, cfg.kernel(), cfg.boundary())?;
    let m = cfg.resource(&op)?;
    let d = cfg.single_d()?;
    let eig = principal_eigenvalue(&op, d, &m, cfg.solver.tol, cfg.solver.max_iter)?;
    let rep = report(
        "eig",
        "ok",
        cfg,
        started,
        json!({
            "mu0": eig.mu0,
            "residual": eig.residual,
            "iterations": eig.iterations,
        }),
    );
    write_report(out, &rep)
}

pub fn cmd_sweep(cfg: &ScenarioConfig, out: &Path, started: Instant) -> Result<(), CliError> {
    let grid = cfg.build_grid()?;
    let op = assemble(&grid, cfg.kernel(), cfg.boundary())?;
    let m = cfg.resource(&op)?;
    let ds = cfg.sweep_ds()?;
    let outcomes = sweep_d(&op, &m, ds, &cfg.solver_options())?;
    let total_resource = m.integrate();

    let mut csv = Csv::new();
    csv.row(["d", "T", "resource", "ratio", "mu0", "residual", "iterations"]);
    let mut curve = Vec::with_capacity(outcomes.len());
    let mut failed = 0usize;
    for outcome in &outcomes {
        match outcome {
            SweepOutcome::Solved(r) => {
                csv.row([
                    fmt_f64(r.d),
                    fmt_f64(r.total_population),
                    fmt_f64(r.total_resource),
                    fmt_f64(r.ratio),
                    fmt_f64(r.mu0),
                    fmt_f64(r.residual),
                    r.iterations.to_string(),
                ]);
                curve.push((r.d, r.total_population));
            }
            SweepOutcome::Failed { d, error } => {
                failed += 1;
                // Keep the schema: unknown numbers print as nan, and an
                // extinction failure still reports its certified mu0 bound.
                let mu0 = match error {
                    Error::NoPositiveSteadyState { mu0 } => *mu0,
                    _ => f64::NAN,
                };
                csv.row([
                    fmt_f64(*d),
                    "nan".into(),
                    fmt_f64(total_resource),
                    "nan".into(),
                    fmt_f64(mu0),
                    "nan".into(),
                    "0".into(),
                ]);
            }
        }
    }
    write_file(out, "sweep.csv", &csv.finish())?;
    write_file(
        out,
        "sweep.svg",
        &line_plot(&curve, true, false, "d (log)", "total population T(d)"),
    )?;

    let rep = report(
        "sweep",
        "ok",
        cfg,
        started,
        json!({
            "records": outcomes.len(),
            "solved": outcomes.len() - failed,
            "failed": failed,
            "total_resource": total_resource,
        }),
    );
    write_report(out, &rep)
}

pub fn cmd_scaling(cfg: &ScenarioConfig, out: &Path, started: Instant) -> Result<(), CliError> {
    let block = cfg.scaling.as_ref().ok_or_else(|| {
        CliError::Config("this command needs a \"scaling\" block".into())
    })?;
    if cfg.boundary != BoundaryChoice::Neumann {
        return Err(CliError::Config(
            "the concentration experiment is mass-conserving; set boundary to \"neumann\"".into(),
        ));
    }
    let ds = cfg.sweep_ds()?;
    let opts = ScalingOptions {
        solver: cfg.solver_options(),
        base_counts: block.base_counts,
        ball_nodes: block.ball_nodes,
        ..ScalingOptions::default()
    };
    let result = scaling_experiment(
        &cfg.domain()?,
        cfg.kernel(),
        vec_to_point(&block.x0)?,
        block.alpha,
        ds,
        &opts,
    )?;

    let mut csv = Csv::new();
    csv.row(["d", "eps", "T", "T_over_sqrt_d"]);
    let mut curve = Vec::with_capacity(result.d_values.len());
    for ((d, eps), t) in result
        .d_values
        .iter()
        .zip(&result.eps_values)
        .zip(&result.t_values)
    {
        csv.row([
            fmt_f64(*d),
            fmt_f64(*eps),
            fmt_f64(*t),
            fmt_f64(t / d.sqrt()),
        ]);
        curve.push((*d, *t));
    }
    csv.row([
        "fit".to_string(),
        fmt_f64(result.slope),
        fmt_f64(result.slope_stderr),
        fmt_f64(result.upper_envelope),
    ]);
    write_file(out, "scaling.csv", &csv.finish())?;
    write_file(
        out,
        "scaling.svg",
        &line_plot(&curve, true, true, "d (log)", "T(d) (log)"),
    )?;

    let rep = report(
        "scaling",
        "ok",
        cfg,
        started,
        json!({
            "alpha": result.alpha,
            "slope": result.slope,
            "slope_stderr": result.slope_stderr,
            "upper_envelope": result.upper_envelope,
        }),
    );
    write_report(out, &rep)
}

pub fn cmd_mixing(cfg: &ScenarioConfig, out: &Path, started: Instant) -> Result<(), CliError> {
    let grid = cfg.build_grid()?;
    let op = assemble(&grid, cfg.kernel(), cfg.boundary())?;
    let m = cfg.resource(&op)?;
    let scenario = MixingScenario::new(m)?;
    let d_grid = cfg
        .d_grid
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs \"d_grid\"".into()))?;
    // Certification first: it validates the grid before any per-d work.
    let cert = certify_unimodal(&scenario, d_grid, cfg.unimodal_tol)?;
    let states = d_grid
        .par_iter()
        .map(|&d| solve_mean(&scenario, d, None))
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = Csv::new();
    csv.row(["d", "sbar", "sbar_prime"]);
    let mut curve = Vec::with_capacity(states.len());
    for st in &states {
        csv.row([fmt_f64(st.d), fmt_f64(st.sbar), fmt_f64(st.sbar_prime)]);
        curve.push((st.d, st.sbar));
    }
    csv.row([
        "unimodal".to_string(),
        cert.unimodal.to_string(),
        cert.transitions.len().to_string(),
    ]);
    csv.row([
        "argmax".to_string(),
        fmt_f64(cert.argmax_d),
        fmt_f64(cert.max_sbar),
    ]);
    let (lo, hi) = cert.l_bracket.unwrap_or((f64::NAN, f64::NAN));
    csv.row(["L_bracket".to_string(), fmt_f64(lo), fmt_f64(hi)]);
    write_file(out, "mixing.csv", &csv.finish())?;
    write_file(
        out,
        "mixing.svg",
        &line_plot(&curve, true, false, "d (log)", "mean density"),
    )?;

    let rep = report(
        "mixing",
        "ok",
        cfg,
        started,
        json!({
            "unimodal": cert.unimodal,
            "argmax_d": cert.argmax_d,
            "max_sbar": cert.max_sbar,
            "transitions": cert.transitions.len(),
            "l_bracket": cert.l_bracket.map(|(a, b)| vec![a, b]),
            "outer_violations": cert.outer_violations.len(),
            "ratio": scenario.ratio(),
            "golden_condition": scenario.golden_condition(),
        }),
    );
    write_report(out, &rep)
}
