//! Perfect-mixing limit: the kernel is replaced by uniform redistribution,
//! so the steady state couples to the environment only through its own
//! spatial mean s = mean(theta):
//!
//! ```text
//! d (s - theta(x)) + theta(x) (m(x) - theta(x)) = 0
//! ```
//!
//! Given s, theta is the positive root of a pointwise quadratic,
//!
//! ```text
//! theta = (m - d)/2 + sqrt((m - d)^2 + 4 d s) / 2
//! ```
//!
//! and the square root collapses two ways,
//!
//! ```text
//! sqrt((m - d)^2 + 4 d s) = 2 theta - m + d = theta + d s / theta
//! ```
//!
//! which this module verifies at every node it touches.  The mean itself is
//! then a one-dimensional fixed point, solved by bisection.  Everything
//! here is cheap enough to run hundreds of dispersal rates, which is what
//! the unimodality certificate does: the total population rises, peaks
//! once, and falls, with the peak's location trapped between the extremes
//! of the resource.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_strictly_increasing, GridFunction};
use crate::operator::check_dispersal_rate;

/// Resources whose extreme ratio stays below this bound get the sharpest
/// form of the unimodality statement; (1 + sqrt 5) / 2.
pub fn golden_ratio_bound() -> f64 {
    0.5 * (1.0 + 5f64.sqrt())
}

/// A strictly positive resource prepared for the mixing model.
#[derive(Clone, Debug)]
pub struct MixingScenario {
    m: GridFunction,
    ratio: f64,
}

impl MixingScenario {
    /// Wraps a resource; it must be strictly positive, since the model
    /// divides by the density and the density floor is min m.
    pub fn new(m: GridFunction) -> Result<Self> {
        let lo = m.min_value();
        if lo <= 0.0 {
            return Err(Error::Domain(format!(
                "mixing model needs min m > 0, got {lo}"
            )));
        }
        let ratio = m.max_value() / lo;
        Ok(MixingScenario { m, ratio })
    }

    pub fn m(&self) -> &GridFunction {
        &self.m
    }

    /// sup m / inf m.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// True when the extreme ratio is below the golden bound, the regime
    /// with the strongest unimodality guarantee.
    pub fn golden_condition(&self) -> bool {
        self.ratio < golden_ratio_bound()
    }
}

/// Pointwise positive root of theta^2 - (m - d) theta - d s = 0, the
/// density profile consistent with a prescribed mean s.
///
/// Uses the cancellation-free branch of the quadratic formula and then
/// checks both collapses of the square root to 1e-12 (relative to the root
/// magnitude) at every node; a violation is an internal error, not a domain
/// one, because it can only come from this function's own arithmetic.
pub fn theta_given_mean(m: &GridFunction, d: f64, s: f64) -> Result<GridFunction> {
    check_dispersal_rate(d)?;
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Domain(format!(
            "prescribed mean must be nonnegative, got {s}"
        )));
    }
    let ds4 = 4.0 * d * s;
    let mut theta = Vec::with_capacity(m.len());
    for &mi in m.values() {
        let q = mi - d;
        let root = (q * q + ds4).sqrt();
        let t = if q >= 0.0 {
            0.5 * (q + root)
        } else {
            // (q + root)/2 rationalized; exact zero when s = 0.
            2.0 * d * s / (root - q)
        };
        let scale = root.max(1.0);
        if (2.0 * t - q - root).abs() > 1e-12 * scale {
            return Err(Error::Internal(format!(
                "root identity 2 theta - m + d failed at m = {mi}, d = {d}, s = {s}"
            )));
        }
        if t > 0.0 && (t + d * s / t - root).abs() > 1e-12 * scale {
            return Err(Error::Internal(format!(
                "root identity theta + d s / theta failed at m = {mi}, d = {d}, s = {s}"
            )));
        }
        theta.push(t);
    }
    GridFunction::from_values(m.grid(), theta)
}

/// A solved mixing state at one dispersal rate.
#[derive(Clone, Debug)]
pub struct MixingState {
    pub d: f64,
    /// Self-consistent mean: mean(theta) agrees with it to the solve
    /// tolerance.
    pub sbar: f64,
    pub theta: GridFunction,
    /// d(sbar)/dd at this d.
    pub sbar_prime: f64,
}

const MEAN_BISECTION_CAP: usize = 200;

/// Solves mean(theta(. , s)) = s for s in (0, sup m] by bisection and
/// returns the full state.  `tol` bounds |mean(theta) - sbar|; the default
/// is 1e-12 sup m.
pub fn solve_mean(scenario: &MixingScenario, d: f64, tol: Option<f64>) -> Result<MixingState> {
    check_dispersal_rate(d)?;
    let m = &scenario.m;
    let sup = m.max_value();
    let tol = match tol {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => {
            return Err(Error::Domain(format!(
                "mean tolerance must be positive, got {t}"
            )))
        }
        None => 1e-12 * sup,
    };
    let excess = |s: f64| -> Result<f64> { Ok(theta_given_mean(m, d, s)?.mean() - s) };
    // Bracket sanity.  F(0) >= 0 because the profile at s = 0 is max(m-d, 0);
    // F(sup) <= 0 because every root at s = sup lies at or below sup.  Both
    // hold exactly in real arithmetic (a constant resource makes F(sup)
    // exactly zero), so only root-evaluation rounding is forgiven.
    let slack = 1e-13 * (1.0 + sup + d);
    let f_lo = excess(0.0)?;
    let f_hi = excess(sup)?;
    if f_lo < -slack || f_hi > slack {
        return Err(Error::Internal(format!(
            "mean bracket signs are wrong: F(0) = {f_lo}, F(sup m) = {f_hi}"
        )));
    }
    // Invariant: F(lo) >= 0, F(hi) <= 0.  The trivial root at s = 0 (for
    // d >= sup m) does not attract the iteration because F is positive
    // immediately to its right, which pulls lo off zero.
    let (mut lo, mut hi) = (0.0, sup);
    let mut sbar = None;
    let mut iterations = 0;
    let mut last = (0.5 * sup, f64::INFINITY);
    for k in 1..=MEAN_BISECTION_CAP {
        iterations = k;
        let mid = 0.5 * (lo + hi);
        let f = excess(mid)?;
        last = (mid, f);
        if f.abs() <= tol {
            sbar = Some(mid);
            break;
        }
        if f >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sbar = match sbar {
        Some(s) => s,
        None => {
            let theta = theta_given_mean(m, d, last.0)?;
            return Err(Error::IterationLimit {
                what: "mixing mean bisection",
                iterations,
                residual: last.1.abs(),
                best: Box::new(theta),
            });
        }
    };
    let theta = theta_given_mean(m, d, sbar)?;
    // The root construction makes the full equation hold node by node
    // regardless of how accurate sbar is; measure it anyway.
    let resid = equation_residual(m, d, sbar, &theta);
    if resid > 1e-10 * (d * sup).max(1.0) {
        return Err(Error::Internal(format!(
            "mixing equation residual {resid} at d = {d}"
        )));
    }
    let sbar_prime = sbar_prime_of(d, sbar, &theta)?;
    Ok(MixingState {
        d,
        sbar,
        theta,
        sbar_prime,
    })
}

/// Largest node residual of d (sbar - theta) + theta (m - theta).
pub fn equation_residual(m: &GridFunction, d: f64, sbar: f64, theta: &GridFunction) -> f64 {
    m.values()
        .iter()
        .zip(theta.values())
        .map(|(&mi, &t)| (d * (sbar - t) + t * (mi - t)).abs())
        .fold(0.0, f64::max)
}

/// Derivative of the self-consistent mean with respect to d, from
/// differentiating the pointwise quadratic:
///
/// ```text
/// sbar' = integral (sbar - theta) / (2 theta - m + d)
///         / integral (2 theta - m) / (2 theta - m + d)
/// ```
///
/// The shared denominator is evaluated as theta + d sbar / theta, the form
/// the root identity guarantees positive.
pub fn sbar_prime(_scenario: &MixingScenario, state: &MixingState) -> Result<f64> {
    sbar_prime_of(state.d, state.sbar, &state.theta)
}

fn sbar_prime_of(d: f64, sbar: f64, theta: &GridFunction) -> Result<f64> {
    let grid = theta.grid();
    let w = grid.weights();
    let volume = grid.domain().volume();
    let mut num = 0.0;
    let mut shrink = 0.0;
    for (i, &t) in theta.values().iter().enumerate() {
        if t <= 0.0 {
            return Err(Error::Domain(format!(
                "derivative needs a positive profile, theta = {t} at node {i}"
            )));
        }
        let g = t + d * sbar / t;
        num += w[i] * (sbar - t) / g;
        shrink += w[i] * d / g;
    }
    // Denominator in the form 1 - (1/|Omega|) integral d / (theta + d sbar
    // / theta); positive by the contraction property of the mean map.
    let den = volume - shrink;
    if den <= 0.0 {
        return Err(Error::Internal(format!(
            "mean-map denominator {den} is not positive at d = {d}"
        )));
    }
    Ok(num / den)
}

/// One compressed sign change of the population curve.
#[derive(Clone, Copy, Debug)]
pub struct SignChange {
    /// d at the left end of the difference where the new sign appears.
    pub d_lo: f64,
    /// d at the right end of that difference.
    pub d_hi: f64,
    pub from: i8,
    pub to: i8,
}

/// Outcome of the unimodality certification.
#[derive(Clone, Debug)]
pub struct UnimodalReport {
    /// True when the curve rises, peaks at most once, and never rises
    /// again, up to the neutral band.
    pub unimodal: bool,
    /// d of the largest sampled mean.
    pub argmax_d: f64,
    pub max_sbar: f64,
    /// Grid interval certified to contain the turning point, when there is
    /// exactly one; analytically it must lie inside (inf m, sup m).
    pub l_bracket: Option<(f64, f64)>,
    /// All compressed sign changes, for diagnosing non-unimodal curves.
    pub transitions: Vec<SignChange>,
    /// d values where the curve moves against the guaranteed outer
    /// monotonicity (rising for small d, falling for d beyond sup m).
    pub outer_violations: Vec<f64>,
}

/// Certifies the shape of d -> sbar(d) over a dense log grid.
///
/// The grid must have at least 200 strictly increasing points and span
/// [inf m / 4, 4 sup m], wide enough to see both guaranteed outer regimes.
/// Differences smaller than `tol` (default 1e-11 sup m) are treated as
/// neutral.  A non-unimodal curve is reported, never an error: the report
/// carries every sign change so the caller can see what happened.
pub fn certify_unimodal(
    scenario: &MixingScenario,
    d_grid: &[f64],
    tol: Option<f64>,
) -> Result<UnimodalReport> {
    let m = &scenario.m;
    let (inf, sup) = (m.min_value(), m.max_value());
    let tol = match tol {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => {
            return Err(Error::Domain(format!(
                "neutral band must be positive, got {t}"
            )))
        }
        None => 1e-11 * sup,
    };
    if d_grid.len() < 200 {
        return Err(Error::Domain(format!(
            "certification needs at least 200 d values, got {}",
            d_grid.len()
        )));
    }
    check_strictly_increasing("d grid", d_grid)?;
    for &d in d_grid {
        check_dispersal_rate(d)?;
    }
    if d_grid[0] > 0.25 * inf * (1.0 + 1e-9) || d_grid[d_grid.len() - 1] < 4.0 * sup * (1.0 - 1e-9)
    {
        return Err(Error::Domain(format!(
            "d grid [{}, {}] must span [inf m / 4, 4 sup m] = [{}, {}]",
            d_grid[0],
            d_grid[d_grid.len() - 1],
            0.25 * inf,
            4.0 * sup
        )));
    }
    let sbars: Vec<f64> = d_grid
        .par_iter()
        .map(|&d| solve_mean(scenario, d, None).map(|st| st.sbar))
        .collect::<Result<Vec<_>>>()?;

    // Sign of each difference, with the neutral band.
    let signs: Vec<i8> = sbars
        .windows(2)
        .map(|p| {
            let delta = p[1] - p[0];
            if delta > tol {
                1
            } else if delta < -tol {
                -1
            } else {
                0
            }
        })
        .collect();

    let mut transitions = Vec::new();
    let mut prev: Option<i8> = None;
    for (k, &s) in signs.iter().enumerate() {
        if s == 0 {
            continue;
        }
        if let Some(ps) = prev {
            if ps != s {
                transitions.push(SignChange {
                    d_lo: d_grid[k],
                    d_hi: d_grid[k + 1],
                    from: ps,
                    to: s,
                });
            }
        }
        prev = Some(s);
    }
    let unimodal = transitions
        .iter()
        .all(|t| t.from == 1 && t.to == -1)
        && transitions.len() <= 1;

    let kmax = sbars
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty")
        .0;

    // Bracket for the turning point: the curve still rises on the last
    // positive difference and already falls on the first negative one, so
    // the switch lies between that rise's left end and that fall's right
    // end.
    let l_bracket = if unimodal && transitions.len() == 1 {
        let last_pos = signs.iter().rposition(|&s| s == 1);
        let first_neg = signs.iter().position(|&s| s == -1);
        match (last_pos, first_neg) {
            (Some(p), Some(q)) => Some((d_grid[p], d_grid[q + 1])),
            _ => None,
        }
    } else {
        None
    };

    // Guaranteed outer monotonicity: rising while d stays below the
    // midpoint of mean m and inf m, falling once d exceeds sup m.
    let rise_below = 0.5 * (m.mean() + inf);
    let mut outer_violations = Vec::new();
    for (k, &s) in signs.iter().enumerate() {
        if d_grid[k + 1] <= rise_below && s < 0 {
            outer_violations.push(d_grid[k]);
        }
        if d_grid[k] >= sup && s > 0 {
            outer_violations.push(d_grid[k]);
        }
    }

    Ok(UnimodalReport {
        unimodal,
        argmax_d: d_grid[kmax],
        max_sbar: sbars[kmax],
        l_bracket,
        transitions,
        outer_violations,
    })
}
