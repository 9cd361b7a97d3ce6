//! Iterative solvers for the weighted sparse + low-rank abundance problem.
//!
//! [`ipsplru_solve`] cycles through the proximal maps of the four cost terms;
//! [`adsplru_solve`] splits the problem with ADMM. Both accept the same
//! [`SolverConfig`], and setting `gamma` or `tau` to zero gives the
//! low-rank-only and sparse-only variants.

mod admm;
mod incremental;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use admm::{adsplru_solve, adsplru_solve_observed, AdmmState};
pub use incremental::{ipsplru_solve, ipsplru_solve_observed};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};
use crate::weights::WeightMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Sparsity weight.
    pub gamma: f64,
    /// Low-rank weight.
    pub tau: f64,
    /// Step of the least-squares prox (incremental solver).
    pub lambda: f64,
    /// ADMM penalty.
    pub mu: f64,
    pub weight_mode: WeightMode,
    /// Floor added before taking reciprocals in the weight schedules.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Relative squared change below which the incremental solver stops.
    pub ip_tol: f64,
    /// Relative ADMM tolerance, scaled by `sqrt((3N + L) K)`.
    pub admm_rel_tol: f64,
    /// Use `gamma * A` and `tau * b` directly as thresholds: no `1 / mu`
    /// scaling in the ADMM solver and no `lambda` scaling in the incremental one.
    pub literal_thresholds: bool,
    /// Evaluate the objective after every iteration.
    pub record_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.0,
            tau: 0.0,
            lambda: 0.5,
            mu: 0.01,
            weight_mode: WeightMode::Reweighted,
            epsilon: 1e-16,
            max_iters: 2000,
            ip_tol: 1e-8,
            admm_rel_tol: 1e-4,
            literal_thresholds: false,
            record_objective: true,
        }
    }
}

impl SolverConfig {
    pub fn with_params(gamma: f64, tau: f64) -> Self {
        SolverConfig {
            gamma,
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        nonneg(self.gamma, "gamma")?;
        nonneg(self.tau, "tau")?;
        pos(self.lambda, "lambda")?;
        pos(self.mu, "mu")?;
        pos(self.epsilon, "epsilon")?;
        pos(self.ip_tol, "ip_tol")?;
        pos(self.admm_rel_tol, "admm_rel_tol")?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ipsplru,
    Adsplru,
}

impl SolverKind {
    pub const ALL: [SolverKind; 2] = [SolverKind::Ipsplru, SolverKind::Adsplru];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Ipsplru => "ipsplru",
            SolverKind::Adsplru => "adsplru",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipsplru" => Ok(SolverKind::Ipsplru),
            "adsplru" => Ok(SolverKind::Adsplru),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

/// Which regularizers are active. The single-prior variants pin the other
/// weight to zero whatever the config says.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SparseLowRank,
    SparseOnly,
    LowRankOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::SparseLowRank, Variant::SparseOnly, Variant::LowRankOnly];

    pub fn apply(self, cfg: &SolverConfig) -> SolverConfig {
        let mut out = cfg.clone();
        match self {
            Variant::SparseLowRank => {}
            Variant::SparseOnly => out.tau = 0.0,
            Variant::LowRankOnly => out.gamma = 0.0,
        }
        out
    }

    /// Published algorithm name for a solver family and variant.
    pub fn algorithm_name(self, kind: SolverKind) -> &'static str {
        match (kind, self) {
            (SolverKind::Ipsplru, Variant::SparseLowRank) => "IPSpLRU",
            (SolverKind::Ipsplru, Variant::SparseOnly) => "IPSpU",
            (SolverKind::Ipsplru, Variant::LowRankOnly) => "IPLRU",
            (SolverKind::Adsplru, Variant::SparseLowRank) => "ADSpLRU",
            (SolverKind::Adsplru, Variant::SparseOnly) => "ADSpU",
            (SolverKind::Adsplru, Variant::LowRankOnly) => "ADLRU",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final nonnegative estimate.
    pub w_hat: Matrix,
    pub iterations: usize,
    pub termination: Termination,
    pub objective_trace: Vec<f64>,
    /// `(||r||, ||d||)` per iteration; ADMM only.
    pub residual_trace: Vec<(f64, f64)>,
    /// Relative squared change per iteration; incremental solver only.
    pub rel_change_trace: Vec<f64>,
    /// `||W_t - W_true||_F^2` per iteration when run against a known truth.
    pub error_trace: Option<Vec<f64>>,
}

/// Runs `kind` from its default starting point.
pub fn solve(kind: SolverKind, phi: &Matrix, y: &Matrix, cfg: &SolverConfig) -> Result<SolveReport> {
    match kind {
        SolverKind::Ipsplru => ipsplru_solve(phi, y, cfg, None),
        SolverKind::Adsplru => adsplru_solve(phi, y, cfg, None),
    }
}

/// Runs `kind` and records the squared Frobenius error against `truth` after
/// every iteration.
pub fn solve_tracked(
    kind: SolverKind,
    phi: &Matrix,
    y: &Matrix,
    cfg: &SolverConfig,
    truth: &Matrix,
) -> Result<SolveReport> {
    let mut errors = Vec::with_capacity(cfg.max_iters);
    let mut observe = |w: &Matrix| errors.push(crate::linalg::frob_sq(&(w - truth)));
    let mut report = match kind {
        SolverKind::Ipsplru => ipsplru_solve_observed(phi, y, cfg, None, &mut observe)?,
        SolverKind::Adsplru => adsplru_solve_observed(phi, y, cfg, None, &mut observe)?,
    };
    report.error_trace = Some(errors);
    Ok(report)
}

pub(crate) fn check_problem(phi: &Matrix, y: &Matrix) -> Result<()> {
    ensure_finite(phi, "dictionary")?;
    ensure_finite(y, "observations")?;
    if phi.nrows() != y.nrows() {
        return Err(Error::dim("observations vs dictionary bands", phi.nrows(), y.nrows()));
    }
    if phi.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("dictionary entries must be nonnegative".into()));
    }
    Ok(())
}
