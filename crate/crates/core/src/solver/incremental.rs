use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ensure_shape, frob_sq, Matrix};
use crate::prox::{project_nonneg, prox_ls, shrink_scalar, svt, LsProxCache, ObjectiveTracker};
use crate::weights::{ls_estimate, update_weights, WeightMode, WeightState};

use super::{check_problem, SolveReport, SolverConfig, Termination};

/// Incremental proximal solver.
///
/// Each cycle applies, in order, the least-squares prox with step `lambda`,
/// soft thresholding by `lambda * gamma * A`, singular value thresholding by
/// `lambda * tau * b` and the projection onto `W >= 0`, so every prox shares
/// the same step. With `literal_thresholds` the nonsmooth maps use a unit
/// step instead (thresholds `gamma * A` and `tau * b`).
/// Stops when `||W+ - W||^2 / ||W||^2 < ip_tol` or after `max_iters` cycles.
///
/// `w0` defaults to the least-squares estimate clipped at zero.
pub fn ipsplru_solve(
    phi: &Matrix,
    y: &Matrix,
    cfg: &SolverConfig,
    w0: Option<&Matrix>,
) -> Result<SolveReport> {
    ipsplru_solve_observed(phi, y, cfg, w0, &mut |_| {})
}

/// Same as [`ipsplru_solve`]; `observer` sees the iterate after every cycle.
pub fn ipsplru_solve_observed(
    phi: &Matrix,
    y: &Matrix,
    cfg: &SolverConfig,
    w0: Option<&Matrix>,
    observer: &mut dyn FnMut(&Matrix),
) -> Result<SolveReport> {
    check_problem(phi, y)?;
    cfg.validate()?;
    let (n, k) = (phi.ncols(), y.ncols());
    let cache = LsProxCache::new(phi, y, cfg.lambda)?;

    let needs_ls = w0.is_none() || cfg.weight_mode == WeightMode::FixedLs;
    let ls = if needs_ls { Some(ls_estimate(phi, y)?) } else { None };

    let mut w = match w0 {
        Some(w0) => {
            ensure_shape(w0, n, k, "initial abundance matrix")?;
            ensure_finite(w0, "initial abundance matrix")?;
            w0.clone()
        }
        None => project_nonneg(ls.as_ref().expect("least-squares estimate computed")),
    };
    let mut weights = match cfg.weight_mode {
        WeightMode::FixedLs => update_weights(
            ls.as_ref().expect("least-squares estimate computed"),
            WeightMode::FixedLs,
            cfg.epsilon,
        )?,
        _ => WeightState::uniform(n, k),
    };
    let step = if cfg.literal_thresholds { 1.0 } else { cfg.lambda };
    let (gamma_thr, tau_thr) = (step * cfg.gamma, step * cfg.tau);
    let tracker = cfg.record_objective.then(|| ObjectiveTracker::new(phi, y));

    let mut report = SolveReport {
        w_hat: Matrix::zeros(n, k),
        iterations: 0,
        termination: Termination::MaxIters,
        objective_trace: Vec::new(),
        residual_trace: Vec::new(),
        rel_change_trace: Vec::new(),
        error_trace: None,
    };

    for iter in 1..=cfg.max_iters {
        if cfg.weight_mode == WeightMode::Reweighted {
            weights = update_weights(&w, WeightMode::Reweighted, cfg.epsilon)?;
        }

        let mut v = prox_ls(&cache, &w)?;
        if cfg.gamma > 0.0 {
            v.zip_apply(&weights.a, |x, a| *x = shrink_scalar(*x, gamma_thr * a));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
        if cfg.tau > 0.0 {
            v = svt(&v, &(&weights.b * tau_thr))?;
        }
        let v = project_nonneg(&v);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }

        let change = frob_sq(&(&v - &w));
        let base = frob_sq(&w);
        let rel = if base > 0.0 {
            change / base
        } else if change == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        w = v;
        observer(&w);

        report.iterations = iter;
        report.rel_change_trace.push(rel);
        if let Some(tracker) = &tracker {
            report.objective_trace.push(tracker.eval(&w, cfg.gamma, cfg.tau, &weights)?);
        }
        if rel < cfg.ip_tol {
            report.termination = Termination::Tolerance;
            break;
        }
    }
    report.w_hat = w;
    Ok(report)
}
