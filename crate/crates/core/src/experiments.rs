//! Multi-trial experiment presets assembled from the generators, the solvers
//! and the metrics.
//!
//! Every preset draws its problems from [`Setup::seed`] through
//! [`crate::seed::derive`], so results are reproducible and independent of
//! the number of worker threads. Regularization pairs are picked on a
//! separate set of tuning trials and then scored on fresh evaluation trials.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{unmix_cube, AbundanceCube, Boundary, HsiCube, WindowSpec};
use crate::error::{Error, Result};
use crate::eval::{metrics, nmse_trace, spearman, sweep, MetricReport, Problem, RmseKind, SweepGrid, SweepResult};
use crate::linalg::Matrix;
use crate::prox::project_nonneg;
use crate::seed::derive;
use crate::solver::{solve_tracked, SolverConfig, SolverKind, Variant};
use crate::synth::{
    add_noise, build_block_image, sample_dictionary, sample_splr_abundance, DictionarySource, NoiseKind, NoiseSpec,
    SpLrSpec, BLOCK_GRID, BLOCK_SIZE,
};
use crate::weights::{ls_estimate, WeightMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ReweightingStudy,
    ToyAblation,
    ParamSweep,
    NoiseRobustnessWhite,
    NoiseRobustnessColored,
    BlockImage,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::ReweightingStudy,
        Preset::ToyAblation,
        Preset::ParamSweep,
        Preset::NoiseRobustnessWhite,
        Preset::NoiseRobustnessColored,
        Preset::BlockImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::ReweightingStudy => "reweighting-study",
            Preset::ToyAblation => "toy-ablation",
            Preset::ParamSweep => "param-sweep",
            Preset::NoiseRobustnessWhite => "noise-robustness-white",
            Preset::NoiseRobustnessColored => "noise-robustness-colored",
            Preset::BlockImage => "block-image",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.as_str()).collect();
                Error::Config(format!("unknown experiment '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Shared knobs of every preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Setup {
    pub dictionary: DictionarySource,
    /// Band count of synthetic dictionaries; ignored (0 accepted) for libraries.
    pub bands: usize,
    pub endmembers: usize,
    pub seed: u64,
    /// Evaluation trials per configuration.
    pub trials: usize,
    /// Trials used only to pick `(gamma, tau)`.
    pub tuning_trials: usize,
    /// Base configuration of the incremental solver (gamma and tau are tuned).
    pub ipsplru: SolverConfig,
    /// Base configuration of the ADMM solver (gamma and tau are tuned). The
    /// default raises `mu` to 1: at 0.01 the reweighted iteration keeps
    /// oscillating on these problems instead of settling.
    pub adsplru: SolverConfig,
    /// Candidate values for the full `(tau, gamma)` tuning grid.
    pub grid: SweepGrid,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            dictionary: DictionarySource::SyntheticSmooth,
            bands: 224,
            endmembers: 50,
            seed: 2017,
            trials: 100,
            tuning_trials: 20,
            ipsplru: SolverConfig::default(),
            adsplru: SolverConfig { mu: 1.0, ..SolverConfig::default() },
            grid: SweepGrid::default(),
        }
    }
}

impl Setup {
    pub fn base(&self, kind: SolverKind) -> &SolverConfig {
        match kind {
            SolverKind::Ipsplru => &self.ipsplru,
            SolverKind::Adsplru => &self.adsplru,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.tuning_trials == 0 {
            return Err(Error::Config("trial counts must be positive".into()));
        }
        if self.endmembers == 0 {
            return Err(Error::Config("endmember count must be positive".into()));
        }
        self.ipsplru.validate()?;
        self.adsplru.validate()?;
        self.grid.validate()
    }

    fn dictionary(&self, seed: u64) -> Result<Matrix> {
        let l = match self.dictionary {
            DictionarySource::SyntheticSmooth => self.bands,
            DictionarySource::LibraryCsv(_) => 0,
        };
        sample_dictionary(self.endmembers, l, &self.dictionary, seed)
    }
}

/// Shape and corruption of one family of window problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub pixels: usize,
    pub rank: usize,
    pub sparsity_level: f64,
    pub snr_db: f64,
    pub noise: NoiseKind,
}

impl ProblemSpec {
    /// N = 50 (from the setup), K = 9, rank 2, 20% rows, 35 dB white noise.
    pub fn toy() -> Self {
        ProblemSpec { pixels: 9, rank: 2, sparsity_level: 0.2, snr_db: 35.0, noise: NoiseKind::White }
    }

    /// Rank 3, 10% rows, 30 dB white noise.
    pub fn reweighting() -> Self {
        ProblemSpec { pixels: 9, rank: 3, sparsity_level: 0.1, snr_db: 30.0, noise: NoiseKind::White }
    }

    fn noise_spec(&self, seed: u64) -> NoiseSpec {
        match self.noise {
            NoiseKind::White => NoiseSpec::white(self.snr_db, seed),
            NoiseKind::Colored => NoiseSpec::colored(self.snr_db, seed),
        }
    }
}

/// `count` seeded problems; every trial gets its own dictionary, abundance
/// matrix and noise draw.
pub fn generate_problems(setup: &Setup, spec: &ProblemSpec, count: usize, stream: &[u64]) -> Result<Vec<Problem>> {
    (0..count as u64)
        .into_par_iter()
        .map(|t| {
            let path = |c: u64| {
                let mut p = stream.to_vec();
                p.extend([t, c]);
                derive(setup.seed, &p)
            };
            let phi = setup.dictionary(path(0))?;
            let truth = sample_splr_abundance(&SpLrSpec {
                n: phi.ncols(),
                k: spec.pixels,
                rank: spec.rank,
                sparsity_level: spec.sparsity_level,
                seed: path(1),
            })?;
            let y = add_noise(&(&phi * &truth), &spec.noise_spec(path(2)))?;
            Ok(Problem { phi, y, truth })
        })
        .collect()
}

/// Problems that share one abundance matrix and differ in dictionary and
/// noise draws.
fn generate_fixed_truth(setup: &Setup, spec: &ProblemSpec, count: usize, stream: &[u64]) -> Result<Vec<Problem>> {
    let truth = sample_splr_abundance(&SpLrSpec {
        n: setup.endmembers,
        k: spec.pixels,
        rank: spec.rank,
        sparsity_level: spec.sparsity_level,
        seed: derive(setup.seed, &[stream[0], u64::MAX]),
    })?;
    (0..count as u64)
        .into_par_iter()
        .map(|t| {
            let path = |c: u64| {
                let mut p = stream.to_vec();
                p.extend([t, c]);
                derive(setup.seed, &p)
            };
            let phi = setup.dictionary(path(0))?;
            let y = add_noise(&(&phi * &truth), &spec.noise_spec(path(2)))?;
            Ok(Problem { phi, y, truth: truth.clone() })
        })
        .collect()
}

/// The `(tau, gamma)` candidates a variant is tuned over.
pub fn variant_grid(grid: &SweepGrid, variant: Variant) -> SweepGrid {
    match variant {
        Variant::SparseLowRank => grid.clone(),
        Variant::SparseOnly => SweepGrid { tau_values: vec![0.0], gamma_values: grid.gamma_values.clone() },
        Variant::LowRankOnly => SweepGrid { tau_values: grid.tau_values.clone(), gamma_values: vec![0.0] },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub gamma: f64,
    pub tau: f64,
    /// Mean tuning-set error at the chosen pair.
    pub score: f64,
}

/// Grid search on `problems`, scored by mean `kind` RMSE.
pub fn tune(problems: &[Problem], grid: &SweepGrid, kind: SolverKind, base: &SolverConfig, metric: RmseKind) -> Result<Tuned> {
    let result = sweep(problems, grid, kind, base)?;
    let (tau, gamma, score) = result.best(metric);
    if !score.is_finite() {
        return Err(Error::Numerical { what: "every tuning cell failed".into(), iterations: 0 });
    }
    Ok(Tuned { gamma, tau, score })
}

/// Mean metrics at one fixed `(gamma, tau)`, with the failure count.
pub fn evaluate(problems: &[Problem], kind: SolverKind, cfg: &SolverConfig) -> Result<(MetricReport, usize)> {
    let grid = SweepGrid { tau_values: vec![cfg.tau], gamma_values: vec![cfg.gamma] };
    let r = sweep(problems, &grid, kind, cfg)?;
    let report = MetricReport {
        rmse: r.rmse[0][0],
        rmse_squared_variant: r.rmse_squared[0][0],
        sre_db: r.sre_db[0][0],
        n_pixels: problems.iter().map(|p| p.truth.ncols()).sum(),
    };
    Ok((report, r.failures[0][0]))
}

/// Mean metrics of the clipped least-squares estimate.
pub fn evaluate_clipped_ls(problems: &[Problem]) -> Result<MetricReport> {
    let reports: Vec<MetricReport> = problems
        .par_iter()
        .map(|p| metrics(&project_nonneg(&ls_estimate(&p.phi, &p.y)?), &p.truth))
        .collect::<Result<_>>()?;
    let n = reports.len() as f64;
    Ok(MetricReport {
        rmse: reports.iter().map(|m| m.rmse).sum::<f64>() / n,
        rmse_squared_variant: reports.iter().map(|m| m.rmse_squared_variant).sum::<f64>() / n,
        sre_db: reports.iter().map(|m| m.sre_db).sum::<f64>() / n,
        n_pixels: problems.iter().map(|p| p.truth.ncols()).sum(),
    })
}

fn with_pair(base: &SolverConfig, t: &Tuned) -> SolverConfig {
    SolverConfig { gamma: t.gamma, tau: t.tau, ..base.clone() }
}

// ---------------------------------------------------------------- ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub algorithm: String,
    pub solver: SolverKind,
    pub variant: Variant,
    pub gamma: f64,
    pub tau: f64,
    pub rmse: f64,
    pub rmse_squared: f64,
    pub sre_db: f64,
    pub trials: usize,
    pub failures: usize,
}

/// Both solvers with both priors, sparsity only and low rank only, each
/// tuned on its own candidate set (six rows).
pub fn toy_ablation(setup: &Setup, spec: &ProblemSpec) -> Result<Vec<AblationRow>> {
    setup.validate()?;
    let stream = Preset::ToyAblation.stream();
    let tuning = generate_problems(setup, spec, setup.tuning_trials, &[stream, 0])?;
    let eval = generate_problems(setup, spec, setup.trials, &[stream, 1])?;
    let mut rows = Vec::new();
    for kind in SolverKind::ALL {
        for variant in Variant::ALL {
            let base = variant.apply(setup.base(kind));
            let t = tune(&tuning, &variant_grid(&setup.grid, variant), kind, &base, RmseKind::Squared)?;
            let (m, failures) = evaluate(&eval, kind, &with_pair(&base, &t))?;
            rows.push(AblationRow {
                algorithm: variant.algorithm_name(kind).to_string(),
                solver: kind,
                variant,
                gamma: t.gamma,
                tau: t.tau,
                rmse: m.rmse,
                rmse_squared: m.rmse_squared_variant,
                sre_db: m.sre_db,
                trials: eval.len(),
                failures,
            });
        }
    }
    Ok(rows)
}

// ------------------------------------------------------------- reweighting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightingRow {
    pub solver: SolverKind,
    pub mode: WeightMode,
    pub gamma: f64,
    pub tau: f64,
    pub final_nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub solver: SolverKind,
    pub mode: WeightMode,
    pub iteration: usize,
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightingStudy {
    pub rows: Vec<ReweightingRow>,
    pub traces: Vec<TracePoint>,
}

impl ReweightingStudy {
    pub fn final_nmse(&self, solver: SolverKind, mode: WeightMode) -> Option<f64> {
        self.rows.iter().find(|r| r.solver == solver && r.mode == mode).map(|r| r.final_nmse)
    }
}

/// NMSE-per-iteration curves for every solver and weight schedule, each
/// schedule with its own tuned `(gamma, tau)`.
pub fn reweighting_study(setup: &Setup, spec: &ProblemSpec) -> Result<ReweightingStudy> {
    setup.validate()?;
    let stream = Preset::ReweightingStudy.stream();
    let tuning = generate_problems(setup, spec, setup.tuning_trials, &[stream, 0])?;
    let eval = generate_problems(setup, spec, setup.trials, &[stream, 1])?;
    let truths: Vec<Matrix> = eval.iter().map(|p| p.truth.clone()).collect();
    let mut out = ReweightingStudy { rows: Vec::new(), traces: Vec::new() };
    for kind in SolverKind::ALL {
        for mode in WeightMode::ALL {
            let base = SolverConfig { weight_mode: mode, record_objective: false, ..setup.base(kind).clone() };
            let t = tune(&tuning, &setup.grid, kind, &base, RmseKind::Squared)?;
            let cfg = with_pair(&base, &t);
            let reports = eval
                .par_iter()
                .map(|p| solve_tracked(kind, &p.phi, &p.y, &cfg, &p.truth))
                .collect::<Result<Vec<_>>>()?;
            let trace = nmse_trace(&reports, &truths)?;
            out.rows.push(ReweightingRow {
                solver: kind,
                mode,
                gamma: t.gamma,
                tau: t.tau,
                final_nmse: *trace.last().unwrap_or(&f64::NAN),
            });
            out.traces.extend(trace.iter().enumerate().map(|(i, &nmse)| TracePoint {
                solver: kind,
                mode,
                iteration: i + 1,
                nmse,
            }));
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------ sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepCase {
    /// Rank 1, every row active.
    DenseRankOne,
    /// Rank 9 over 9 pixels, 20% rows.
    FullRankSparse,
    /// Rank 5, 20% rows.
    SparseLowRank,
}

impl SweepCase {
    pub const ALL: [SweepCase; 3] = [SweepCase::DenseRankOne, SweepCase::FullRankSparse, SweepCase::SparseLowRank];

    pub fn spec(self) -> ProblemSpec {
        let (rank, sparsity_level) = match self {
            SweepCase::DenseRankOne => (1, 1.0),
            SweepCase::FullRankSparse => (9, 0.2),
            SweepCase::SparseLowRank => (5, 0.2),
        };
        ProblemSpec { pixels: 9, rank, sparsity_level, snr_db: 35.0, noise: NoiseKind::White }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepCase::DenseRankOne => "dense-rank-one",
            SweepCase::FullRankSparse => "full-rank-sparse",
            SweepCase::SparseLowRank => "sparse-low-rank",
        }
    }
}

/// `{0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1}` on both axes.
pub fn reduced_grid() -> SweepGrid {
    let v: Vec<f64> = std::iter::once(0.0).chain((-5..=-1).map(|e| 10f64.powi(e))).collect();
    SweepGrid { tau_values: v.clone(), gamma_values: v }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSweep {
    pub case: SweepCase,
    pub solver: SolverKind,
    pub result: SweepResult,
}

/// Spread of the squared-RMSE surface along each axis through its argmin:
/// `(spread over gamma at the best tau, spread over tau at the best gamma)`.
pub fn axis_spreads(result: &SweepResult) -> (f64, f64) {
    let s = result.surface(RmseKind::Squared);
    let (ti, gi) = result.argmin(RmseKind::Squared);
    let spread = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let along_gamma = spread(s[ti].clone());
    let along_tau = spread(s.iter().map(|row| row[gi]).collect());
    (along_gamma, along_tau)
}

/// Mean-error surfaces over `grid` for each structural case and solver.
pub fn param_sweep(setup: &Setup, grid: &SweepGrid) -> Result<Vec<CaseSweep>> {
    setup.validate()?;
    let stream = Preset::ParamSweep.stream();
    let mut out = Vec::new();
    for (ci, case) in SweepCase::ALL.into_iter().enumerate() {
        let problems = generate_problems(setup, &case.spec(), setup.trials, &[stream, ci as u64])?;
        for kind in SolverKind::ALL {
            let base = SolverConfig { record_objective: false, ..setup.base(kind).clone() };
            out.push(CaseSweep { case, solver: kind, result: sweep(&problems, grid, kind, &base)? });
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------- noise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub snr_db: f64,
    /// `ipsplru`, `adsplru` or `clipped-ls`.
    pub method: String,
    pub gamma: f64,
    pub tau: f64,
    pub rmse: f64,
    pub rmse_squared: f64,
    pub sre_db: f64,
}

/// `count` SNR values evenly spaced over `[lo, hi]` dB.
pub fn snr_points(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Mean metrics over SNR for both solvers and the clipped least-squares
/// baseline, on a fixed rank-3, 20%-rows abundance matrix.
pub fn noise_robustness(setup: &Setup, noise: NoiseKind, snrs: &[f64]) -> Result<Vec<NoisePoint>> {
    setup.validate()?;
    let preset = match noise {
        NoiseKind::White => Preset::NoiseRobustnessWhite,
        NoiseKind::Colored => Preset::NoiseRobustnessColored,
    };
    let mut out = Vec::new();
    for (si, &snr_db) in snrs.iter().enumerate() {
        let spec = ProblemSpec { pixels: 9, rank: 3, sparsity_level: 0.2, snr_db, noise };
        let tuning = generate_fixed_truth(setup, &spec, setup.tuning_trials, &[preset.stream(), si as u64, 0])?;
        let eval = generate_fixed_truth(setup, &spec, setup.trials, &[preset.stream(), si as u64, 1])?;
        for kind in SolverKind::ALL {
            let base = SolverConfig { record_objective: false, ..setup.base(kind).clone() };
            let t = tune(&tuning, &setup.grid, kind, &base, RmseKind::Squared)?;
            let (m, _) = evaluate(&eval, kind, &with_pair(&base, &t))?;
            out.push(NoisePoint {
                snr_db,
                method: kind.as_str().to_string(),
                gamma: t.gamma,
                tau: t.tau,
                rmse: m.rmse,
                rmse_squared: m.rmse_squared_variant,
                sre_db: m.sre_db,
            });
        }
        let m = evaluate_clipped_ls(&eval)?;
        out.push(NoisePoint {
            snr_db,
            method: "clipped-ls".into(),
            gamma: 0.0,
            tau: 0.0,
            rmse: m.rmse,
            rmse_squared: m.rmse_squared_variant,
            sre_db: m.sre_db,
        });
    }
    Ok(out)
}

/// Spearman correlation between SNR and mean squared-variant RMSE of `method`.
pub fn snr_trend(points: &[NoisePoint], method: &str) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.method == method)
        .map(|p| (p.snr_db, p.rmse_squared))
        .unzip();
    spearman(&x, &y)
}

// ------------------------------------------------------------- block image

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRowMetrics {
    pub solver: SolverKind,
    /// 1-based block row.
    pub block_row: usize,
    pub gamma: f64,
    pub tau: f64,
    pub rmse: f64,
    pub rmse_squared: f64,
    pub sre_db: f64,
}

#[derive(Debug, Clone)]
pub struct BlockImageRun {
    pub cube: HsiCube,
    pub truth: AbundanceCube,
    pub estimates: Vec<(SolverKind, AbundanceCube)>,
    pub rows: Vec<BlockRowMetrics>,
}

/// Window size used on the block image.
pub const BLOCK_IMAGE_KAPPA: usize = 3;

/// Dictionary size for the block image. The smallest size at which 4% of
/// the rows can carry a rank-3 block; larger dictionaries are worse
/// conditioned.
pub const BLOCK_IMAGE_ENDMEMBERS: usize = 75;

/// Extra weights appended above the grid for the block image. Its
/// abundances are unnormalised, so dense blocks want thresholds past 0.1.
pub const BLOCK_EXTRA_WEIGHTS: [f64; 2] = [1.0, 10.0];

/// Drops grid values in `(0, 1e-6)` and appends `BLOCK_EXTRA_WEIGHTS`.
/// Tuning on the image costs a full window solve per sample and cell, and
/// the smallest weights act like zero.
pub fn block_tuning_grid(grid: &SweepGrid) -> SweepGrid {
    let keep = |v: &[f64]| {
        let mut out: Vec<f64> = v.iter().copied().filter(|&x| x == 0.0 || x >= 1e-6).collect();
        for x in BLOCK_EXTRA_WEIGHTS {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    };
    SweepGrid { tau_values: keep(&grid.tau_values), gamma_values: keep(&grid.gamma_values) }
}

/// Every `stride`-th pixel of the image in both directions, as separate
/// window problems; used to tune on the image without unmixing all of it.
fn window_samples(cube: &HsiCube, truth: &AbundanceCube, dict: &Matrix, spec: &WindowSpec, stride: usize) -> Result<Vec<Problem>> {
    let mut out = Vec::new();
    for r in (stride / 2..cube.height()).step_by(stride) {
        for c in (stride / 2..cube.width()).step_by(stride) {
            let y = crate::driver::extract_window(cube, r, c, spec)?;
            let t = crate::driver::extract_window(
                &HsiCube::new(truth.height(), truth.width(), truth.pixels().clone())?,
                r,
                c,
                spec,
            )?;
            out.push(Problem { phi: dict.clone(), y, truth: t });
        }
    }
    Ok(out)
}

/// Builds the 40 x 40 block image, tunes each solver on a sparse subset of
/// its windows, unmixes the full image and reports metrics per block row.
pub fn block_image(setup: &Setup, threads: Option<usize>) -> Result<BlockImageRun> {
    setup.validate()?;
    let stream = Preset::BlockImage.stream();
    let dict = Setup { endmembers: BLOCK_IMAGE_ENDMEMBERS, ..setup.clone() }.dictionary(derive(setup.seed, &[stream, 0]))?;
    let (cube, truth) = build_block_image(&dict, derive(setup.seed, &[stream, 1]))?;
    let spec = WindowSpec::new(BLOCK_IMAGE_KAPPA, Boundary::Mirror)?;
    let samples = window_samples(&cube, &truth, &dict, &spec, 5)?;
    let grid = block_tuning_grid(&setup.grid);

    let mut run = BlockImageRun { cube, truth, estimates: Vec::new(), rows: Vec::new() };
    for kind in SolverKind::ALL {
        let base = SolverConfig { record_objective: false, ..setup.base(kind).clone() };
        let t = tune(&samples, &grid, kind, &base, RmseKind::Squared)?;
        let out = unmix_cube(&run.cube, &dict, &spec, &with_pair(&base, &t), kind, threads)?;
        for br in 0..BLOCK_GRID {
            let rows = br * BLOCK_SIZE..(br + 1) * BLOCK_SIZE;
            let cols = 0..BLOCK_GRID * BLOCK_SIZE;
            let m = metrics(
                &out.abundances.region(rows.clone(), cols.clone()),
                &run.truth.region(rows, cols),
            )?;
            run.rows.push(BlockRowMetrics {
                solver: kind,
                block_row: br + 1,
                gamma: t.gamma,
                tau: t.tau,
                rmse: m.rmse,
                rmse_squared: m.rmse_squared_variant,
                sre_db: m.sre_db,
            });
        }
        run.estimates.push((kind, out.abundances));
    }
    Ok(run)
}
