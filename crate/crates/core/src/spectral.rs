//! Principal eigenvalue of d L + m.
//!
//! The sign of mu0, the largest eigenvalue of the self-adjoint operator
//! A = d L + diag(m) on the weighted grid space, decides whether a positive
//! steady state exists.  Three routes are provided:
//!
//! * [`principal_eigenvalue`]: shifted power iteration, the production path;
//! * [`existence_gate`]: Collatz-Wielandt bounds that certify mu0 > threshold
//!   or mu0 <= threshold without resolving mu0 itself, usually in a handful
//!   of iterations even where the spectral gap is too small for the power
//!   iteration to converge quickly;
//! * [`dense_spectrum_oracle`]: full symmetric eigendecomposition, the
//!   independent cross-check for tests and small parameter sweeps.
//!
//! All three work in the symmetrized coordinates y = sqrt(w) u, in which
//! B = W^{1/2} (d K~ - d diag(a) + diag(m)) W^{-1/2}, with K~ij = Kij wj and
//! W = diag(w), is genuinely symmetric; eigenvalues are similarity-invariant,
//! so B shares the operator's spectrum.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::{check_dispersal_rate, check_same_grid_op, NonlocalOperator};

/// Node cap for the dense eigendecomposition oracle.
pub const DENSE_ORACLE_CAP: usize = 2048;

/// Converged principal eigenpair.
#[derive(Clone, Debug)]
pub struct EigenResult {
    pub mu0: f64,
    /// Normalized in the weighted 2-norm; first nonzero entry positive.
    pub eigenvector: GridFunction,
    pub iterations: usize,
    /// ||A psi - mu0 psi|| in the weighted 2-norm, psi normalized.
    pub residual: f64,
}

/// Outcome of the existence test for a positive steady state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Existence {
    /// mu0 > threshold, certified by a Collatz-Wielandt lower bound.
    Positive { mu0_lower: f64 },
    /// mu0 <= threshold, certified by an upper bound; or the bracket pinched
    /// onto the threshold itself, which is reported as not-positive so the
    /// borderline case never claims a steady state it cannot deliver.
    NotPositive { mu0_upper: f64 },
}

/// Largest eigenvalue of d L + diag(m) by power iteration on the shifted
/// operator B + cI with c = d max(a) + sup|m|.  The shift makes the iteration
/// matrix entrywise nonnegative, so the largest eigenvalue is also the
/// largest in modulus and the iteration converges monotonically in angle.
/// Convergence requires both the eigenvalue increment and the residual to
/// drop to `tol`, which guards against false convergence near clustered
/// eigenvalues.
pub fn principal_eigenvalue(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
    tol: f64,
    max_iter: usize,
) -> Result<EigenResult> {
    check_dispersal_rate(d)?;
    check_same_grid_op(op, m)?;
    check_tolerance(tol)?;
    if max_iter == 0 {
        return Err(Error::Domain("max_iter must be at least 1".into()));
    }
    let grid = op.grid();
    let n = grid.node_count();
    let w = grid.weights();
    let c = d * op.max_removal() + m.sup_norm();

    let mut psi = vec![1.0; n];
    normalize_weighted(&mut psi, w)?;
    let mut apsi = vec![0.0; n];
    let mut mu_prev = f64::INFINITY;
    let mut residual = f64::INFINITY;

    for iter in 1..=max_iter {
        op.apply_into(&psi, &mut apsi);
        for i in 0..n {
            apsi[i] = d * apsi[i] + m.values()[i] * psi[i];
        }
        // psi has unit weighted norm, so the Rayleigh quotient is a plain
        // weighted inner product; it is quadratically accurate in the angle
        // error, which is what makes the increment test meaningful.
        let mu: f64 = (0..n).map(|i| w[i] * psi[i] * apsi[i]).sum();
        residual = (0..n)
            .map(|i| {
                let r = apsi[i] - mu * psi[i];
                w[i] * r * r
            })
            .sum::<f64>()
            .sqrt();
        if (mu - mu_prev).abs() <= tol && residual <= tol {
            sign_fix(&mut psi);
            return Ok(EigenResult {
                mu0: mu,
                eigenvector: GridFunction::from_values(grid, psi)?,
                iterations: iter,
                residual,
            });
        }
        mu_prev = mu;
        for i in 0..n {
            psi[i] = apsi[i] + c * psi[i];
        }
        normalize_weighted(&mut psi, w)?;
    }
    sign_fix(&mut psi);
    Err(Error::IterationLimit {
        what: "principal eigenvalue power iteration",
        iterations: max_iter,
        residual,
        best: Box::new(GridFunction::from_values(grid, psi)?),
    })
}

/// Decides whether mu0 > threshold without resolving mu0.
///
/// For the entrywise-nonnegative shifted matrix C = B + cI and any positive
/// vector y, the Collatz-Wielandt ratios bound the spectral radius:
/// min_i (Cy)_i/y_i <= rho(C) <= max_i (Cy)_i/y_i, and the shift cancels
/// from both sides, bracketing mu0 directly.  The bracket tightens as y
/// approaches the principal eigenvector, and the running intersection over
/// iterations is itself a valid bracket.  The gate returns as soon as the
/// bracket clears the threshold on either side, which for well-signed
/// problems happens orders of magnitude sooner than eigenvalue convergence.
pub fn existence_gate(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
    threshold: f64,
    max_iter: usize,
) -> Result<Existence> {
    if !threshold.is_finite() {
        return Err(Error::Domain(format!(
            "existence threshold must be finite, got {threshold}"
        )));
    }
    // Positive must clear the threshold by the pinch margin, so that
    // rounding in the ratios can never certify a marginal eigenvalue; ties
    // and near-ties all land on the not-positive side.
    let pinch = 1e-14f64.max(1e-6 * threshold.abs());
    let (state, _) = collatz_wielandt(op, d, m, max_iter, |lo, hi| {
        lo > threshold + pinch || hi <= threshold || hi - lo <= pinch
    })?;
    if state.lo > threshold + pinch {
        return Ok(Existence::Positive { mu0_lower: state.lo });
    }
    if state.hi <= threshold {
        return Ok(Existence::NotPositive { mu0_upper: state.hi });
    }
    if state.hi - state.lo <= pinch {
        // The bracket sits on the threshold at its resolution limit; a
        // steady state this marginal is numerically indistinguishable from
        // extinction, so refuse it.
        return Ok(Existence::NotPositive { mu0_upper: state.hi });
    }
    Err(Error::IterationLimit {
        what: "existence gate",
        iterations: state.iterations,
        residual: state.hi - state.lo,
        best: Box::new(state.into_function(op)?),
    })
}

/// Best-effort Collatz-Wielandt bracket around mu0, tightened until its
/// width drops to `target_width` scaled by the eigenvalue magnitude, or the
/// iteration budget runs out.  Never fails on exhaustion: the returned
/// bracket is valid at any width.
pub(crate) fn mu0_bracket(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
    target_width: f64,
    max_iter: usize,
) -> Result<(f64, f64)> {
    if !(target_width.is_finite() && target_width > 0.0) {
        return Err(Error::Domain(format!(
            "bracket width target must be positive, got {target_width}"
        )));
    }
    let (state, _) = collatz_wielandt(op, d, m, max_iter, |lo, hi| {
        hi - lo <= target_width * hi.abs().max(lo.abs()).max(1.0)
    })?;
    Ok((state.lo, state.hi))
}

struct CwState {
    lo: f64,
    hi: f64,
    iterations: usize,
    y: Vec<f64>,
    sqw: Vec<f64>,
}

impl CwState {
    fn into_function(self, op: &NonlocalOperator) -> Result<GridFunction> {
        let u: Vec<f64> = self
            .y
            .iter()
            .zip(&self.sqw)
            .map(|(yi, si)| yi / si)
            .collect();
        GridFunction::from_values(op.grid(), u)
    }
}

/// Runs the shifted nonnegative iteration, intersecting Collatz-Wielandt
/// brackets until `done(lo, hi)` is satisfied or `max_iter` is exhausted.
fn collatz_wielandt(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
    max_iter: usize,
    mut done: impl FnMut(f64, f64) -> bool,
) -> Result<(CwState, usize)> {
    check_dispersal_rate(d)?;
    check_same_grid_op(op, m)?;
    let grid = op.grid();
    let n = grid.node_count();
    let w = grid.weights();
    let sqw: Vec<f64> = w.iter().map(|wi| wi.sqrt()).collect();
    let c = d * op.max_removal() + m.sup_norm();

    let mut y = sqw.clone();
    let mut u = vec![0.0; n];
    let mut au = vec![0.0; n];
    let mut lo_best = f64::NEG_INFINITY;
    let mut hi_best = f64::INFINITY;
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        for i in 0..n {
            u[i] = y[i] / sqw[i];
        }
        op.apply_into(&u, &mut au);
        for i in 0..n {
            au[i] = d * au[i] + m.values()[i] * u[i];
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            // (By)_i / y_i = (Au)_i / u_i: the unsymmetrized form avoids a
            // round trip through sqrt(w) and is exact for constant modes.
            // A component that has decayed to zero carries no ratio
            // information; skipping it only loosens this iteration's bound.
            if u[i] > 0.0 {
                let r = au[i] / u[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        lo_best = lo_best.max(lo);
        hi_best = hi_best.min(hi);
        if done(lo_best, hi_best) {
            break;
        }
        let mut scale = 0.0f64;
        for i in 0..n {
            y[i] = sqw[i] * au[i] + c * y[i];
            scale = scale.max(y[i].abs());
        }
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::Internal(format!(
                "nonnegative iteration collapsed at step {iter} (scale {scale})"
            )));
        }
        for yi in y.iter_mut() {
            *yi /= scale;
        }
    }
    Ok((
        CwState {
            lo: lo_best,
            hi: hi_best,
            iterations,
            y,
            sqw,
        },
        iterations,
    ))
}

/// Full spectrum of the symmetrized matrix B, ascending.  The slow oracle:
/// independent of the power iteration in both algorithm and code path.
pub fn dense_spectrum_oracle(
    op: &NonlocalOperator,
    d: f64,
    m: &GridFunction,
) -> Result<Vec<f64>> {
    check_dispersal_rate(d)?;
    check_same_grid_op(op, m)?;
    let n = op.node_count();
    if n > DENSE_ORACLE_CAP {
        return Err(Error::Domain(format!(
            "dense spectrum oracle is capped at {DENSE_ORACLE_CAP} nodes, got {n}"
        )));
    }
    if !op.is_dense() {
        return Err(Error::Domain(
            "dense spectrum oracle requires dense kernel storage".into(),
        ));
    }
    let w = op.grid().weights();
    let sqw: Vec<f64> = w.iter().map(|wi| wi.sqrt()).collect();
    let a = op.removal();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = op
                .dense_entry(i, j)
                .expect("storage checked dense above");
            let v = d * k * sqw[i] * sqw[j];
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
        b[(i, i)] += m.values()[i] - d * a[i];
    }
    let eig = SymmetricEigen::new(b);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).expect("symmetric eigenvalues are finite"));
    Ok(vals)
}

fn check_tolerance(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    Ok(())
}

fn normalize_weighted(v: &mut [f64], w: &[f64]) -> Result<()> {
    let norm = v
        .iter()
        .zip(w)
        .map(|(vi, wi)| wi * vi * vi)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Internal(format!(
            "power iterate has invalid weighted norm {norm}"
        )));
    }
    for vi in v.iter_mut() {
        *vi /= norm;
    }
    Ok(())
}

fn sign_fix(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|&&x| x != 0.0) {
        if first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}
