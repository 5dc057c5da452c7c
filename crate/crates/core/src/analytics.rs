//! Population functionals across the dispersal rate.
//!
//! The central object is the total population T(d) = integral of theta_{d,m}
//! and its ratio against the total resource.  This module builds the
//! standard resource profiles (including the concentrated profile whose
//! height grows like 1/eps on a ball of radius eps^{1/n}), sweeps d, checks
//! the exact population-excess identity
//!
//! ```text
//! integral(theta) - integral(m)
//!     = (d/2) double-integral k(x,y) (theta(x)-theta(y))^2
//!                              / (theta(x) theta(y))
//! ```
//!
//! which in the no-flux discretization holds in exact quadrature, and runs
//! the concentrated-resource scaling experiment in which T(d) grows like
//! sqrt(d) when eps d stays at a constant alpha < 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{build_grid, check_strictly_increasing, Domain, Grading, GridFunction};
use crate::operator::{
    assemble_with_cap, check_dispersal_rate, check_same_grid_op, unit_ball_volume, BoundaryMode,
    Kernel, NonlocalOperator,
};
use crate::spectral::{dense_spectrum_oracle, mu0_bracket, DENSE_ORACLE_CAP};
use crate::steady::{solve_fixed_point, SolverOptions, SteadyState};

/// One point of a T(d) sweep.
#[derive(Clone, Debug)]
pub struct SweepRecord {
    pub d: f64,
    /// T(d), the integral of the steady state.
    pub total_population: f64,
    /// Integral of the resource.
    pub total_resource: f64,
    /// total_population / total_resource.
    pub ratio: f64,
    /// Principal eigenvalue: exact dense value when the operator stores its
    /// matrix and fits the oracle cap, otherwise the midpoint of a
    /// Collatz-Wielandt bracket (see `mu0_uncertainty`).
    pub mu0: f64,
    /// Half-width of the mu0 bracket; zero for the dense route.
    pub mu0_uncertainty: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Sweep point outcome: a solved record, or the error that d produced.
/// Failures ride along instead of aborting the sweep, so one subcritical
/// point cannot cost the rest of the curve.
#[derive(Debug)]
pub enum SweepOutcome {
    Solved(SweepRecord),
    Failed { d: f64, error: Error },
}

/// Resource profiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResourceSpec {
    /// m = value everywhere.  Degenerate on purpose: useful only for
    /// trivial checks, since every population statement below is about
    /// heterogeneous resources.
    Constant { value: f64 },
    /// base + amplitude sin(2 pi frequency (x - x_lo) / L) along axis 0.
    Sine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// low for x < split, high for x >= split along axis 0.
    TwoPatch { low: f64, high: f64, split: f64 },
    /// Height a(x0)/eps on the ball |x - x0| < eps^(1/n), zero outside.
    MEpsilon { x0: [f64; 2], eps: f64 },
}

/// Materializes a resource on the operator's grid.  The concentrated
/// profile reads the removal rate at x0 from the operator, which is why the
/// operator and not just the grid is required.
pub fn build_resource(spec: &ResourceSpec, op: &NonlocalOperator) -> Result<GridFunction> {
    let grid = op.grid();
    match *spec {
        ResourceSpec::Constant { value } => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Domain(format!(
                    "constant resource must be nonnegative, got {value}"
                )));
            }
            Ok(GridFunction::constant(grid, value))
        }
        ResourceSpec::Sine {
            base,
            amplitude,
            frequency,
        } => {
            if !(base.is_finite() && amplitude.is_finite() && frequency.is_finite()) {
                return Err(Error::Domain("sine resource parameters must be finite".into()));
            }
            if amplitude < 0.0 || base < amplitude {
                return Err(Error::Domain(format!(
                    "sine resource dips below zero: base {base}, amplitude {amplitude}"
                )));
            }
            if frequency <= 0.0 {
                return Err(Error::Domain(format!(
                    "sine frequency must be positive, got {frequency}"
                )));
            }
            let (lo, hi) = grid.domain().bounds()[0];
            let scale = 2.0 * std::f64::consts::PI * frequency / (hi - lo);
            GridFunction::from_fn(grid, |p| base + amplitude * (scale * (p[0] - lo)).sin())
        }
        ResourceSpec::TwoPatch { low, high, split } => {
            if !(low.is_finite() && high.is_finite() && low >= 0.0 && high >= 0.0) {
                return Err(Error::Domain(format!(
                    "patch levels must be nonnegative, got {low} and {high}"
                )));
            }
            if low == high {
                return Err(Error::Domain(
                    "two-patch resource needs distinct levels; use a constant profile instead"
                        .into(),
                ));
            }
            let (lo, hi) = grid.domain().bounds()[0];
            if !(split > lo && split < hi) {
                return Err(Error::Domain(format!(
                    "patch split {split} must lie inside ({lo}, {hi})"
                )));
            }
            GridFunction::from_fn(grid, |p| if p[0] < split { low } else { high })
        }
        ResourceSpec::MEpsilon { x0, eps } => build_m_epsilon(op, x0, eps),
    }
}

/// Concentrated resource: height a(x0)/eps on the ball of radius eps^(1/n)
/// around x0, zero outside, so the total resource is the ball volume times
/// the height: omega_n a(x0), independent of eps.
///
/// a(x0) is the no-flux removal rate at the grid node nearest x0, which is
/// the consistent discrete reading of the continuum coefficient.
pub fn build_m_epsilon(op: &NonlocalOperator, x0: [f64; 2], eps: f64) -> Result<GridFunction> {
    if op.mode() != BoundaryMode::Neumann {
        return Err(Error::Domain(
            "the concentrated resource is defined through the no-flux removal rate; \
             assemble the operator in no-flux mode"
                .into(),
        ));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Domain(format!(
            "concentration eps must be positive, got {eps}"
        )));
    }
    let grid = op.grid();
    let dim = grid.dim();
    let radius = match dim {
        1 => eps,
        _ => eps.sqrt(),
    };
    for ax in 0..dim {
        let (lo, hi) = grid.domain().bounds()[ax];
        if !(x0[ax] - radius > lo && x0[ax] + radius < hi) {
            return Err(Error::Domain(format!(
                "resource ball of radius {radius} around ({}, {}) leaves the domain on axis {ax}",
                x0[0], x0[1]
            )));
        }
    }
    // The ball must be resolved: at least 8 node coordinates per axis
    // strictly inside it, otherwise the quadrature of the indicator is
    // meaningless.
    for (ax, &center) in x0.iter().enumerate().take(dim) {
        let coords = grid.axis_coords(ax);
        let inside = coords
            .iter()
            .filter(|&&c| (c - center).abs() < radius)
            .count();
        if inside < 8 {
            let (lo, hi) = grid.domain().bounds()[ax];
            let needed = (4.0 * (hi - lo) / radius).ceil() as usize;
            return Err(Error::Resolution(format!(
                "only {inside} nodes span the resource ball on axis {ax}; \
                 a uniform count of about {needed} (or grading near the ball) is required"
            )));
        }
    }
    let center = grid.index_of_nearest(x0);
    let a0 = op.removal()[center];
    let height = a0 / eps;
    let m = GridFunction::from_fn(grid, |p| {
        let dx = p[0] - x0[0];
        let dy = p[1] - x0[1];
        if dx * dx + dy * dy < radius * radius {
            height
        } else {
            0.0
        }
    })?;
    let target = unit_ball_volume(dim) * a0;
    let mass = m.integrate();
    if (mass - target).abs() > 0.05 * target {
        return Err(Error::Resolution(format!(
            "discrete resource mass {mass:.6e} is more than 5% away from {target:.6e}; \
             refine the grid near the ball"
        )));
    }
    Ok(m)
}

/// Both sides of the population-excess identity: lhs = integral(theta) -
/// integral(m), rhs = the symmetric kernel double sum.  Exact (up to
/// quadrature rounding) in the no-flux mode, where dispersal moves mass
/// without destroying it; with a hostile exterior the lhs additionally
/// carries the boundary loss and the two sides are not expected to match.
pub fn population_identity_gap(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
    theta: &GridFunction,
) -> Result<(f64, f64)> {
    check_dispersal_rate(d)?;
    check_same_grid_op(op, m)?;
    check_same_grid_op(op, theta)?;
    if theta.min_value() <= 0.0 {
        return Err(Error::Domain(format!(
            "identity needs a strictly positive density, min is {}",
            theta.min_value()
        )));
    }
    let lhs = theta.integrate() - m.integrate();
    let t = theta.values();
    let rhs = 0.5
        * d
        * op.weighted_kernel_sum(|i, j| {
            let diff = t[i] - t[j];
            diff * diff / (t[i] * t[j])
        });
    Ok((lhs, rhs))
}

/// Derivative of the total population at d = 0:
///
/// ```text
/// T'(0) = (1/2) double-integral k(x,y) (m(x)-m(y))^2 / (m(x) m(y))
/// ```
///
/// Strictly positive for heterogeneous m: concentrating at zero dispersal,
/// the population equals the resource, and the first bit of dispersal always
/// grows the total.
pub fn tprime_at_zero(op: &NonlocalOperator, m: &GridFunction) -> Result<f64> {
    check_same_grid_op(op, m)?;
    if m.min_value() <= 0.0 {
        return Err(Error::Domain(format!(
            "the zero-dispersal derivative needs min m > 0, got {}",
            m.min_value()
        )));
    }
    let mv = m.values();
    Ok(0.5
        * op.weighted_kernel_sum(|i, j| {
            let diff = mv[i] - mv[j];
            diff * diff / (mv[i] * mv[j])
        }))
}

/// Iteration budget for the mu0 bracket on operators the dense oracle
/// cannot reach.
const SWEEP_MU0_ITERS: usize = 200_000;

/// Solves the steady state at every d, in input order, failures embedded.
pub fn sweep_d(
    op: &NonlocalOperator,
    m: &GridFunction,
    d_values: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SweepOutcome>> {
    let states = sweep_states(op, m, d_values, opts)?;
    let total_resource = m.integrate();
    if total_resource <= 0.0 {
        return Err(Error::Domain(format!(
            "total resource must be positive, integrates to {total_resource}"
        )));
    }
    let records = states
        .into_par_iter()
        .map(|(d, outcome)| match outcome {
            Ok(state) => {
                let (mu0, mu0_uncertainty) = sweep_mu0(op, d, m)?;
                let total_population = state.theta.integrate();
                Ok(SweepOutcome::Solved(SweepRecord {
                    d,
                    total_population,
                    total_resource,
                    ratio: total_population / total_resource,
                    mu0,
                    mu0_uncertainty,
                    residual: state.residual,
                    iterations: state.iterations,
                }))
            }
            Err(error) => Ok(SweepOutcome::Failed { d, error }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(records)
}

/// The sweep's solves with full states, for callers that need the densities
/// themselves (identity checks, limit profiles) and not just the totals.
pub fn sweep_states(
    op: &NonlocalOperator,
    m: &GridFunction,
    d_values: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, Result<SteadyState>)>> {
    check_same_grid_op(op, m)?;
    if d_values.is_empty() {
        return Err(Error::Domain("sweep needs at least one d value".into()));
    }
    check_strictly_increasing("d values", d_values)?;
    for &d in d_values {
        check_dispersal_rate(d)?;
    }
    Ok(d_values
        .par_iter()
        .map(|&d| (d, solve_fixed_point(op, d, m, opts)))
        .collect())
}

/// mu0 for a sweep record: the dense symmetric eigendecomposition where the
/// operator allows it, otherwise a Collatz-Wielandt bracket midpoint with
/// the half-width reported as the uncertainty.
fn sweep_mu0(op: &NonlocalOperator, d: f64, m: &GridFunction) -> Result<(f64, f64)> {
    if op.is_dense() && op.node_count() <= DENSE_ORACLE_CAP {
        let top = *dense_spectrum_oracle(op, d, m)?
            .last()
            .expect("spectrum of a nonempty grid is nonempty");
        Ok((top, 0.0))
    } else {
        let (lo, hi) = mu0_bracket(op, d, m, 1e-8, SWEEP_MU0_ITERS)?;
        Ok((0.5 * (lo + hi), 0.5 * (hi - lo)))
    }
}

/// Scaling-experiment controls.
#[derive(Clone, Debug)]
pub struct ScalingOptions {
    pub solver: SolverOptions,
    /// Uniform axis count before grading.
    pub base_counts: usize,
    /// Grading aims for at least this many axis nodes across the ball.
    pub ball_nodes: usize,
    /// Dense-storage cap for the per-d operators; the default of 0 forces
    /// matrix-free application, which is what keeps large graded runs fast.
    pub dense_cap: usize,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            solver: SolverOptions::default(),
            base_counts: 2000,
            ball_nodes: 64,
            dense_cap: 0,
        }
    }
}

/// Result of the concentrated-resource scaling run.
#[derive(Clone, Debug)]
pub struct ScalingResult {
    pub alpha: f64,
    pub d_values: Vec<f64>,
    pub eps_values: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Least-squares slope of log T against log d.
    pub slope: f64,
    pub slope_stderr: f64,
    /// max T / sqrt(d) over the sweep.
    pub upper_envelope: f64,
}

/// Runs the coupled concentration experiment: for each d the resource is
/// the concentrated profile with eps = alpha/d (or d^-2 as the alpha = 0
/// surrogate), on a grid graded around the ball, no-flux mode.  The sqrt(d)
/// growth law under test couples eps to d, which is why eps is not a free
/// parameter.
pub fn scaling_experiment(
    domain: &Domain,
    kernel: Kernel,
    x0: [f64; 2],
    alpha: f64,
    d_values: &[f64],
    opts: &ScalingOptions,
) -> Result<ScalingResult> {
    if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if d_values.len() < 2 {
        return Err(Error::Domain(
            "scaling slope needs at least two d values".into(),
        ));
    }
    check_strictly_increasing("d values", d_values)?;
    for &d in d_values {
        check_dispersal_rate(d)?;
    }
    if opts.base_counts == 0 || opts.ball_nodes == 0 {
        return Err(Error::Domain(
            "base_counts and ball_nodes must be positive".into(),
        ));
    }
    let points: Vec<(f64, f64)> = d_values
        .par_iter()
        .map(|&d| -> Result<(f64, f64)> {
            let eps = if alpha > 0.0 { alpha / d } else { d.powi(-2) };
            let t = scaling_point(domain, kernel, x0, d, eps, opts)
                .map_err(|e| annotate_d(d, e))?;
            Ok((eps, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let eps_values: Vec<f64> = points.iter().map(|p| p.0).collect();
    let t_values: Vec<f64> = points.iter().map(|p| p.1).collect();
    for (&d, &t) in d_values.iter().zip(&t_values) {
        if t <= 0.0 {
            return Err(Error::Internal(format!(
                "total population {t} at d = {d} is not positive"
            )));
        }
    }
    let xs: Vec<f64> = d_values.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = t_values.iter().map(|t| t.ln()).collect();
    let (slope, slope_stderr) = least_squares_slope(&xs, &ys);
    let upper_envelope = d_values
        .iter()
        .zip(&t_values)
        .map(|(d, t)| t / d.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingResult {
        alpha,
        d_values: d_values.to_vec(),
        eps_values,
        t_values,
        slope,
        slope_stderr,
        upper_envelope,
    })
}

fn scaling_point(
    domain: &Domain,
    kernel: Kernel,
    x0: [f64; 2],
    d: f64,
    eps: f64,
    opts: &ScalingOptions,
) -> Result<f64> {
    let dim = domain.dim();
    let radius = match dim {
        1 => eps,
        _ => eps.sqrt(),
    };
    let mut region = Vec::with_capacity(dim);
    let mut counts = Vec::with_capacity(dim);
    let mut factor: u32 = 1;
    for (ax, (&center, &(lo, hi))) in x0.iter().zip(domain.bounds()).enumerate() {
        if !(center - radius > lo && center + radius < hi) {
            return Err(Error::Domain(format!(
                "resource ball of radius {radius} is not interior on axis {ax}"
            )));
        }
        region.push((center - radius, center + radius));
        counts.push(opts.base_counts);
        let h0 = (hi - lo) / opts.base_counts as f64;
        let needed = (opts.ball_nodes as f64 * h0 / (2.0 * radius)).ceil();
        if needed > u32::MAX as f64 {
            return Err(Error::Resolution(format!(
                "grading factor {needed:.0} to resolve radius {radius} is out of range"
            )));
        }
        factor = factor.max((needed as u32).max(1));
    }
    let grading = Grading { region, factor };
    let grid = build_grid(domain, &counts, Some(&grading))?;
    let op = assemble_with_cap(&grid, kernel, BoundaryMode::Neumann, opts.dense_cap)?;
    let m = build_m_epsilon(&op, x0, eps)?;
    let state = solve_fixed_point(&op, d, &m, &opts.solver)?;
    Ok(state.theta.integrate())
}

fn annotate_d(d: f64, e: Error) -> Error {
    match e {
        Error::Resolution(msg) => Error::Resolution(format!("at d = {d}: {msg}")),
        Error::Domain(msg) => Error::Domain(format!("at d = {d}: {msg}")),
        other => other,
    }
}

/// n logarithmically spaced values from lo to hi inclusive, strictly
/// increasing.  The workhorse grid for d sweeps.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!(
            "log spacing needs 0 < lo < hi, got {lo} and {hi}"
        )));
    }
    if n < 2 {
        return Err(Error::Domain("log spacing needs at least two points".into()));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..n)
        .map(|k| (llo + (lhi - llo) * k as f64 / (n - 1) as f64).exp())
        .collect();
    // Pin the endpoints; interior points are strictly increasing because ln
    // is strictly monotone and the exponents are.
    out[0] = lo;
    out[n - 1] = hi;
    Ok(out)
}

/// Ordinary least squares slope and its standard error; stderr is zero when
/// there are too few points for a meaningful one.
fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    if xs.len() <= 2 {
        return (slope, 0.0);
    }
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    (slope, stderr)
}
