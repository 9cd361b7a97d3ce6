use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ensure_shape, frob_sq, spd_inverse, Matrix};
use crate::prox::{project_nonneg, shrink_scalar, svt, ObjectiveTracker};
use crate::weights::{ls_estimate, update_weights, WeightMode, WeightState};

use super::{check_problem, SolveReport, SolverConfig, Termination};

/// Primal, auxiliary and scaled dual variables of the ADMM splitting
/// `Omega1 = Phi W`, `Omega2 = Omega3 = Omega4 = W`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub w: Matrix,
    pub omega1: Matrix,
    pub omega2: Matrix,
    pub omega3: Matrix,
    pub omega4: Matrix,
    pub lambda1: Matrix,
    pub lambda2: Matrix,
    pub lambda3: Matrix,
    pub lambda4: Matrix,
    /// `(Phi^T Phi + 3 I)^-1`.
    pub r_cached: Matrix,
}

impl AdmmState {
    /// All-zero state for a dictionary `phi` and `k` pixels.
    pub fn zeros(phi: &Matrix, k: usize) -> Result<Self> {
        let (l, n) = phi.shape();
        Ok(AdmmState {
            w: Matrix::zeros(n, k),
            omega1: Matrix::zeros(l, k),
            omega2: Matrix::zeros(n, k),
            omega3: Matrix::zeros(n, k),
            omega4: Matrix::zeros(n, k),
            lambda1: Matrix::zeros(l, k),
            lambda2: Matrix::zeros(n, k),
            lambda3: Matrix::zeros(n, k),
            lambda4: Matrix::zeros(n, k),
            r_cached: w_update_inverse(phi)?,
        })
    }

    fn check(&self, l: usize, n: usize, k: usize) -> Result<()> {
        ensure_shape(&self.w, n, k, "ADMM state W")?;
        for (m, name) in [(&self.omega1, "ADMM state Omega1"), (&self.lambda1, "ADMM state Lambda1")] {
            ensure_shape(m, l, k, name)?;
            ensure_finite(m, name)?;
        }
        for m in [
            &self.omega2,
            &self.omega3,
            &self.omega4,
            &self.lambda2,
            &self.lambda3,
            &self.lambda4,
        ] {
            ensure_shape(m, n, k, "ADMM state N x K block")?;
            ensure_finite(m, "ADMM state N x K block")?;
        }
        ensure_shape(&self.r_cached, n, n, "ADMM cached inverse")
    }
}

fn w_update_inverse(phi: &Matrix) -> Result<Matrix> {
    let n = phi.ncols();
    let mut gram = phi.transpose() * phi;
    for i in 0..n {
        gram[(i, i)] += 3.0;
    }
    spd_inverse(&gram)
}

/// ADMM solver.
///
/// Per iteration: the closed-form W update, the data-fit update of `Omega1`,
/// soft thresholding for `Omega2`, singular value thresholding for `Omega3`,
/// projection for `Omega4`, then the scaled dual ascent. Stops once the primal
/// and dual residual norms are both at most `sqrt((3N + L) K) * admm_rel_tol`.
/// The returned estimate is `Omega4`, which is nonnegative by construction.
///
/// `init` defaults to the all-zero state.
pub fn adsplru_solve(
    phi: &Matrix,
    y: &Matrix,
    cfg: &SolverConfig,
    init: Option<AdmmState>,
) -> Result<SolveReport> {
    adsplru_solve_observed(phi, y, cfg, init, &mut |_| {})
}

/// Same as [`adsplru_solve`]; `observer` sees `Omega4` after every iteration.
pub fn adsplru_solve_observed(
    phi: &Matrix,
    y: &Matrix,
    cfg: &SolverConfig,
    init: Option<AdmmState>,
    observer: &mut dyn FnMut(&Matrix),
) -> Result<SolveReport> {
    check_problem(phi, y)?;
    cfg.validate()?;
    let (l, n) = phi.shape();
    let k = y.ncols();
    let mut st = match init {
        Some(st) => {
            st.check(l, n, k)?;
            st
        }
        None => AdmmState::zeros(phi, k)?,
    };

    let mu = cfg.mu;
    let (gamma_thr, tau_thr) = if cfg.literal_thresholds {
        (cfg.gamma, cfg.tau)
    } else {
        (cfg.gamma / mu, cfg.tau / mu)
    };
    let zeta = (((3 * n + l) * k) as f64).sqrt() * cfg.admm_rel_tol;

    let mut weights = match cfg.weight_mode {
        WeightMode::FixedLs => update_weights(&ls_estimate(phi, y)?, WeightMode::FixedLs, cfg.epsilon)?,
        _ => WeightState::uniform(n, k),
    };
    let tracker = cfg.record_objective.then(|| ObjectiveTracker::new(phi, y));

    // Phi^T Omega1 and Phi^T Lambda1 are carried in N x K form so the W update
    // needs no L x N product; they follow from the Gram matrix and Phi^T Y.
    let phi_t = phi.transpose();
    let gram = &phi_t * phi;
    let pty = &phi_t * y;
    let mut pt_omega1 = &phi_t * &st.omega1;
    let mut pt_lambda1 = &phi_t * &st.lambda1;
    let scale = 1.0 / (1.0 + mu);

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
        let rhs = &pt_omega1
            + &pt_lambda1
            + &st.omega2
            + &st.lambda2
            + &st.omega3
            + &st.lambda3
            + &st.omega4
            + &st.lambda4;
        st.w = &st.r_cached * rhs;
        if st.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
        if cfg.weight_mode == WeightMode::Reweighted {
            weights = update_weights(&st.w, WeightMode::Reweighted, cfg.epsilon)?;
        }

        let phi_w = phi * &st.w;
        let gram_w = &gram * &st.w;

        let omega1 = (y + (&phi_w - &st.lambda1) * mu) * scale;
        let pt_omega1_new = (&pty + (&gram_w - &pt_lambda1) * mu) * scale;

        let mut omega2 = &st.w - &st.lambda2;
        if gamma_thr > 0.0 {
            omega2.zip_apply(&weights.a, |x, a| *x = shrink_scalar(*x, gamma_thr * a));
        }
        let mut omega3 = &st.w - &st.lambda3;
        if tau_thr > 0.0 {
            omega3 = svt(&omega3, &(&weights.b * tau_thr))?;
        }
        let omega4 = project_nonneg(&(&st.w - &st.lambda4));

        let r1 = &phi_w - &omega1;
        let r2 = &st.w - &omega2;
        let r3 = &st.w - &omega3;
        let r4 = &st.w - &omega4;
        let primal = (frob_sq(&r1) + frob_sq(&r2) + frob_sq(&r3) + frob_sq(&r4)).sqrt();
        let dual = mu
            * frob_sq(
                &(&pt_omega1_new - &pt_omega1
                    + (&omega2 - &st.omega2)
                    + (&omega3 - &st.omega3)
                    + (&omega4 - &st.omega4)),
            )
            .sqrt();

        st.lambda1 -= &r1;
        st.lambda2 -= &r2;
        st.lambda3 -= &r3;
        st.lambda4 -= &r4;
        pt_lambda1 += &pt_omega1_new - &gram_w;
        pt_omega1 = pt_omega1_new;
        st.omega1 = omega1;
        st.omega2 = omega2;
        st.omega3 = omega3;
        st.omega4 = omega4;

        if !(primal.is_finite() && dual.is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
        observer(&st.omega4);

        report.iterations = iter;
        report.residual_trace.push((primal, dual));
        if let Some(tracker) = &tracker {
            report.objective_trace.push(tracker.eval(&st.omega4, cfg.gamma, cfg.tau, &weights)?);
        }
        if primal <= zeta && dual <= zeta {
            report.termination = Termination::Tolerance;
            break;
        }
    }
    report.w_hat = st.omega4;
    Ok(report)
}
