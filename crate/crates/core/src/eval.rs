//! Abundance error metrics and the (tau, gamma) grid sweep.
//!
//! Abundance sets are `N x n` matrices holding one pixel per column.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, Matrix};
use crate::solver::{solve, SolveReport, SolverConfig, SolverKind};

/// Both RMSE forms plus SRE for one set of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `sqrt( sum_i ||w_hat_i - w_i||_2 / (N n) )`, inner norm not squared.
    pub rmse: f64,
    /// `sqrt( sum_i ||w_hat_i - w_i||_2^2 / (N n) )`.
    pub rmse_squared_variant: f64,
    pub sre_db: f64,
    pub n_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RmseKind {
    /// Inner norm unsquared.
    #[default]
    Printed,
    /// Conventional root mean squared error.
    Squared,
}

fn check_pair(est: &Matrix, truth: &Matrix) -> Result<()> {
    if est.shape() != truth.shape() {
        return Err(Error::dim(
            "estimate vs truth",
            format!("{}x{}", truth.nrows(), truth.ncols()),
            format!("{}x{}", est.nrows(), est.ncols()),
        ));
    }
    if est.is_empty() {
        return Err(Error::dim("estimate vs truth", "non-empty", "empty"));
    }
    Ok(())
}

/// Returns `(printed, squared)` RMSE.
pub fn rmse(est: &Matrix, truth: &Matrix) -> Result<(f64, f64)> {
    check_pair(est, truth)?;
    let (n, pixels) = est.shape();
    let denom = (n * pixels) as f64;
    let (mut lin, mut sq) = (0.0, 0.0);
    for (a, b) in est.column_iter().zip(truth.column_iter()) {
        let e2 = (a - b).norm_squared();
        lin += e2.sqrt();
        sq += e2;
    }
    Ok(((lin / denom).sqrt(), (sq / denom).sqrt()))
}

pub fn rmse_of(kind: RmseKind, est: &Matrix, truth: &Matrix) -> Result<f64> {
    let (p, s) = rmse(est, truth)?;
    Ok(match kind {
        RmseKind::Printed => p,
        RmseKind::Squared => s,
    })
}

/// `10 log10( mean ||w_hat_i||^2 / mean ||w_hat_i - w_i||^2 )`; the numerator is
/// the power of the estimates. Exact recovery gives `+inf`.
pub fn sre_db(est: &Matrix, truth: &Matrix) -> Result<f64> {
    check_pair(est, truth)?;
    let signal = frob_sq(est);
    let error = frob_sq(&(est - truth));
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

pub fn metrics(est: &Matrix, truth: &Matrix) -> Result<MetricReport> {
    let (rmse, rmse_squared_variant) = rmse(est, truth)?;
    Ok(MetricReport {
        rmse,
        rmse_squared_variant,
        sre_db: sre_db(est, truth)?,
        n_pixels: est.ncols(),
    })
}

/// `NMSE(t) = mean_i ||W_i^t - W_i||_F^2 / ||W_i||_F^2` over realizations.
///
/// Each report must carry an error trace (see [`crate::solver::solve_tracked`]).
/// Runs that stopped early hold their final value for the remaining steps.
pub fn nmse_trace(reports: &[SolveReport], truths: &[Matrix]) -> Result<Vec<f64>> {
    if reports.len() != truths.len() {
        return Err(Error::dim("nmse reports vs truths", truths.len(), reports.len()));
    }
    if reports.is_empty() {
        return Err(Error::Contract("nmse needs at least one realization".into()));
    }
    let traces = reports
        .iter()
        .enumerate()
        .map(|(i, r)| match &r.error_trace {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(Error::Contract(format!("report {i} carries no error trace"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let p = reports.len() as f64;
    let mut out = vec![0.0; len];
    for (trace, truth) in traces.iter().zip(truths) {
        let norm = frob_sq(truth);
        if norm == 0.0 {
            return Err(Error::Domain("nmse needs nonzero true matrices".into()));
        }
        let last = *trace.last().expect("non-empty trace");
        for (t, slot) in out.iter_mut().enumerate() {
            *slot += trace.get(t).copied().unwrap_or(last) / norm / p;
        }
    }
    Ok(out)
}

/// One synthetic problem instance with its ground truth.
#[derive(Debug, Clone)]
pub struct Problem {
    pub phi: Matrix,
    pub y: Matrix,
    pub truth: Matrix,
}

/// `{0, 1e-10, 1e-9, ..., 1e-1}`.
pub fn default_grid_values() -> Vec<f64> {
    std::iter::once(0.0).chain((-10..=-1).map(|e| 10f64.powi(e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub tau_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            tau_values: default_grid_values(),
            gamma_values: default_grid_values(),
        }
    }
}

impl SweepGrid {
    pub fn new(tau_values: Vec<f64>, gamma_values: Vec<f64>) -> Result<Self> {
        let grid = SweepGrid { tau_values, gamma_values };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (vals, name) in [(&self.tau_values, "tau"), (&self.gamma_values, "gamma")] {
            if vals.is_empty() {
                return Err(Error::Config(format!("{name} grid is empty")));
            }
            if vals.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("{name} grid values must be finite and >= 0")));
            }
            if vals.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name} grid must be strictly ascending")));
            }
        }
        Ok(())
    }
}

/// Mean error per grid cell, indexed `[tau][gamma]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub trials: usize,
    pub rmse: Vec<Vec<f64>>,
    pub rmse_squared: Vec<Vec<f64>>,
    pub sre_db: Vec<Vec<f64>>,
    pub failures: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub gamma: f64,
    pub rmse: f64,
    pub rmse_squared: f64,
    pub sre_db: f64,
    pub failures: usize,
    pub flagged: bool,
}

impl SweepResult {
    pub fn surface(&self, kind: RmseKind) -> &Vec<Vec<f64>> {
        match kind {
            RmseKind::Printed => &self.rmse,
            RmseKind::Squared => &self.rmse_squared,
        }
    }

    /// More than 10% of the trials in the cell failed.
    pub fn flagged(&self, ti: usize, gi: usize) -> bool {
        self.failures[ti][gi] * 10 > self.trials
    }

    /// `(tau index, gamma index)` of the smallest unflagged mean error.
    pub fn argmin(&self, kind: RmseKind) -> (usize, usize) {
        let s = self.surface(kind);
        let mut best = (0, 0);
        let mut best_val = f64::INFINITY;
        for (ti, row) in s.iter().enumerate() {
            for (gi, &v) in row.iter().enumerate() {
                if !self.flagged(ti, gi) && v < best_val {
                    best_val = v;
                    best = (ti, gi);
                }
            }
        }
        best
    }

    pub fn best(&self, kind: RmseKind) -> (f64, f64, f64) {
        let (ti, gi) = self.argmin(kind);
        (self.grid.tau_values[ti], self.grid.gamma_values[gi], self.surface(kind)[ti][gi])
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        let mut out = Vec::new();
        for (ti, &tau) in self.grid.tau_values.iter().enumerate() {
            for (gi, &gamma) in self.grid.gamma_values.iter().enumerate() {
                out.push(SweepRow {
                    tau,
                    gamma,
                    rmse: self.rmse[ti][gi],
                    rmse_squared: self.rmse_squared[ti][gi],
                    sre_db: self.sre_db[ti][gi],
                    failures: self.failures[ti][gi],
                    flagged: self.flagged(ti, gi),
                });
            }
        }
        out
    }
}

/// Mean metrics of `solver` over `problems` for every `(tau, gamma)` cell.
///
/// All `(cell, trial)` pairs run in parallel; the result is independent of
/// scheduling. A failed solve is excluded from its cell's mean and counted.
pub fn sweep(
    problems: &[Problem],
    grid: &SweepGrid,
    solver: SolverKind,
    base: &SolverConfig,
) -> Result<SweepResult> {
    grid.validate()?;
    if problems.is_empty() {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let nt = grid.tau_values.len();
    let ng = grid.gamma_values.len();
    let trials = problems.len();
    let jobs: Vec<(usize, usize, usize)> = (0..nt)
        .flat_map(|ti| (0..ng).flat_map(move |gi| (0..trials).map(move |p| (ti, gi, p))))
        .collect();
    let outcomes: Vec<Option<MetricReport>> = jobs
        .par_iter()
        .map(|&(ti, gi, p)| {
            let cfg = SolverConfig {
                tau: grid.tau_values[ti],
                gamma: grid.gamma_values[gi],
                record_objective: false,
                ..base.clone()
            };
            let prob = &problems[p];
            solve(solver, &prob.phi, &prob.y, &cfg)
                .ok()
                .and_then(|rep| metrics(&rep.w_hat, &prob.truth).ok())
        })
        .collect();

    let mut result = SweepResult {
        grid: grid.clone(),
        trials,
        rmse: vec![vec![0.0; ng]; nt],
        rmse_squared: vec![vec![0.0; ng]; nt],
        sre_db: vec![vec![0.0; ng]; nt],
        failures: vec![vec![0; ng]; nt],
    };
    for (ti, gi, chunk) in jobs
        .chunks(trials)
        .zip(outcomes.chunks(trials))
        .map(|(j, o)| (j[0].0, j[0].1, o))
    {
        let ok: Vec<&MetricReport> = chunk.iter().flatten().collect();
        result.failures[ti][gi] = trials - ok.len();
        let count = ok.len().max(1) as f64;
        let mean = |f: &dyn Fn(&MetricReport) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / count
            }
        };
        result.rmse[ti][gi] = mean(&|m| m.rmse);
        result.rmse_squared[ti][gi] = mean(&|m| m.rmse_squared_variant);
        result.sre_db[ti][gi] = mean(&|m| m.sre_db);
    }
    Ok(result)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::dim("spearman inputs", "two equal-length series (>= 2)", format!("{} and {}", x.len(), y.len())));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    Ok(pearson(&rx, &ry))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
