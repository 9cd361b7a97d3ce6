//! `splr`: sparse and low-rank abundance estimation from the command line.
//!
//! Exit codes: 0 success, 1 solver/runtime failure, 2 I/O, format or usage
//! errors, 3 dimension mismatch, 4 invalid configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use splr::driver::{unmix_cube, Boundary, WindowSpec};
use splr::eval::{metrics, SweepGrid};
use splr::experiments::{self, Preset, ProblemSpec, Setup};
use splr::io::{self, RunManifest};
use splr::synth::{self, DictionarySource, NoiseKind, NoiseSpec, SpLrSpec};
use splr::{SolverConfig, SolverKind, WeightMode};

#[derive(Parser, Debug)]
#[command(name = "splr", version, about = "Sparse and low-rank hyperspectral unmixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Unmix a cube with a sliding window.
    Unmix(UnmixArgs),
    /// Generate synthetic data.
    Synth(SynthArgs),
    /// Run an experiment preset and write plot-ready CSV.
    Experiment(ExperimentArgs),
    /// Compare an abundance cube with ground truth.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    /// Sparsity weight.
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Low-rank weight.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Incremental solver step.
    #[arg(long)]
    lambda: Option<f64>,
    /// ADMM penalty.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
    /// Use gamma*A and tau*b as thresholds without step scaling.
    #[arg(long)]
    literal_thresholds: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stopping tolerance (relative change for ipsplru, relative residual for adsplru).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Ipsplru,
    Adsplru,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Ipsplru => SolverKind::Ipsplru,
            SolverArg::Adsplru => SolverKind::Adsplru,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightsArg {
    Uniform,
    FixedLs,
    Reweighted,
}

impl From<WeightsArg> for WeightMode {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Uniform => WeightMode::Uniform,
            WeightsArg::FixedLs => WeightMode::FixedLs,
            WeightsArg::Reweighted => WeightMode::Reweighted,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundaryArg {
    Mirror,
    Clamp,
    Shrink,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Mirror => Boundary::Mirror,
            BoundaryArg::Clamp => Boundary::Clamp,
            BoundaryArg::Shrink => Boundary::Shrink,
        }
    }
}

#[derive(Args, Debug)]
struct UnmixArgs {
    /// Input cube (.hsc).
    #[arg(long)]
    cube: PathBuf,
    /// Endmember dictionary CSV: one row per band, one column per material.
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, value_enum, default_value = "ipsplru")]
    solver: SolverArg,
    /// Window side (odd).
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[command(flatten)]
    solver_flags: SolverFlags,
    #[arg(long, value_enum, default_value = "mirror")]
    boundary: BoundaryArg,
    /// Worker threads (default: SPLR_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spectral library CSV; a synthetic smooth dictionary is drawn when absent.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Bands of a synthetic dictionary.
    #[arg(long, default_value_t = 224)]
    bands: usize,
    /// Endmembers (default 75 for block-image, 50 otherwise).
    #[arg(long)]
    endmembers: Option<usize>,
    /// Pixels for `window`.
    #[arg(long, default_value_t = 9)]
    pixels: usize,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Fraction of active rows for `window`.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    #[arg(long, default_value_t = 35.0)]
    snr: f64,
    #[arg(long, value_enum, default_value = "white")]
    noise: NoiseArg,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum SynthKind {
    /// 40 x 40 image of 16 structured blocks.
    BlockImage,
    /// One window: dictionary, abundances and noisy observations.
    Window,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    White,
    Colored,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::White => NoiseKind::White,
            NoiseArg::Colored => NoiseKind::Colored,
        }
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// reweighting-study, toy-ablation, param-sweep, noise-robustness-white,
    /// noise-robustness-colored or block-image.
    preset: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    tuning_trials: usize,
    #[arg(long, default_value_t = 2017)]
    seed: u64,
    /// Spectral library CSV; synthetic smooth dictionaries are drawn when absent.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long, default_value_t = 224)]
    bands: usize,
    /// Incremental solver step.
    #[arg(long)]
    lambda: Option<f64>,
    /// ADMM penalty (presets default to 1).
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum)]
    weights: Option<WeightsArg>,
    #[arg(long)]
    literal_thresholds: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    /// SNR points for the noise presets, spread over 10..40 dB.
    #[arg(long, default_value_t = 16)]
    snr_points: usize,
    /// Sweep the full 11 x 11 grid in param-sweep instead of the 6 x 6 one.
    #[arg(long)]
    full_grid: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Estimated abundances (.abc).
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth abundances (.abc).
    #[arg(long)]
    truth: PathBuf,
    /// Also write metrics.json and manifest.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<splr::Error> for Failure {
    fn from(e: splr::Error) -> Self {
        use splr::Error as E;
        let code = match &e {
            E::Io { .. } | E::Format { .. } => 2,
            E::Dimension { .. } => 3,
            E::Config(_) | E::Domain(_) | E::Range(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Unmix(a) => run_unmix(a, args),
        Command::Synth(a) => run_synth(a, args),
        Command::Experiment(a) => run_experiment(a, args),
        Command::Metrics(a) => run_metrics(a, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

/// `--threads`, then `SPLR_THREADS`, then every available core.
fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(fail(4, "--threads must be at least 1"));
        }
        return Ok(Some(n));
    }
    match std::env::var("SPLR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(fail(4, format!("SPLR_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| fail(1, format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| fail(2, format!("cannot create --out {}: {e}", dir.display())))
}

fn require_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(fail(2, format!("{flag} {}: no such file", path.display())))
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn write_csv<T: Serialize>(out: &Path, name: &str, rows: &[T], manifest: &mut RunManifest) -> CliResult<()> {
    let path = out.join(name);
    io::atomic_write(&path, &io::records_csv_bytes(rows)?)?;
    manifest.output_files.push(name.to_string());
    Ok(())
}

fn finish(out: &Path, manifest: &mut RunManifest) -> CliResult<()> {
    manifest.write(&out.join("manifest.json"))?;
    Ok(())
}

fn solver_config(kind: SolverKind, flags: &SolverFlags, base: SolverConfig) -> CliResult<SolverConfig> {
    let mut cfg = SolverConfig { gamma: flags.gamma, tau: flags.tau, record_objective: false, ..base };
    if let Some(l) = flags.lambda {
        cfg.lambda = l;
    }
    if let Some(m) = flags.mu {
        cfg.mu = m;
    }
    if let Some(w) = flags.weights {
        cfg.weight_mode = w.into();
    }
    cfg.literal_thresholds = flags.literal_thresholds;
    if let Some(n) = flags.max_iters {
        cfg.max_iters = n;
    }
    if let Some(t) = flags.tol {
        match kind {
            SolverKind::Ipsplru => cfg.ip_tol = t,
            SolverKind::Adsplru => cfg.admm_rel_tol = t,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_unmix(a: UnmixArgs, args: Vec<String>) -> CliResult<()> {
    let spec = WindowSpec::new(a.kappa, a.boundary.into())?;
    let kind: SolverKind = a.solver.into();
    let cfg = solver_config(kind, &a.solver_flags, SolverConfig::default())?;
    let threads = thread_count(a.threads)?;
    require_file(&a.cube, "--cube")?;
    require_file(&a.dict, "--dict")?;
    let cube = io::read_hsc(&a.cube)?;
    let (_, dict) = io::read_matrix_csv(&a.dict)?;
    if dict.nrows() != cube.bands() {
        return Err(fail(
            3,
            format!(
                "--dict {} has {} bands but --cube {} has {}",
                a.dict.display(),
                dict.nrows(),
                a.cube.display(),
                cube.bands()
            ),
        ));
    }
    ensure_dir(&a.out)?;

    let mut manifest = RunManifest::new(
        "unmix",
        args,
        json!({ "solver": kind, "kappa": a.kappa, "boundary": spec.boundary, "solver_config": cfg }),
        Vec::new(),
    );
    manifest.hash_input(&a.cube)?;
    manifest.hash_input(&a.dict)?;

    let out = with_pool(threads, || unmix_cube(&cube, &dict, &spec, &cfg, kind, None))??;
    io::write_abc(&a.out.join("abundances.abc"), &out.abundances)?;
    manifest.output_files.push("abundances.abc".into());
    write_csv(&a.out, "diagnostics.csv", &out.diagnostics, &mut manifest)?;
    finish(&a.out, &mut manifest)?;
    eprintln!(
        "unmixed {}x{} pixels with {kind}; {} window failures",
        out.abundances.height(),
        out.abundances.width(),
        out.failures()
    );
    Ok(())
}

fn dictionary_source(dict: &Option<PathBuf>) -> CliResult<DictionarySource> {
    match dict {
        Some(p) => {
            require_file(p, "--dict")?;
            Ok(DictionarySource::LibraryCsv(p.clone()))
        }
        None => Ok(DictionarySource::SyntheticSmooth),
    }
}

fn run_synth(a: SynthArgs, args: Vec<String>) -> CliResult<()> {
    let source = dictionary_source(&a.dict)?;
    let threads = thread_count(a.threads)?;
    let n = a.endmembers.unwrap_or(match a.kind {
        SynthKind::BlockImage => experiments::BLOCK_IMAGE_ENDMEMBERS,
        SynthKind::Window => 50,
    });
    let l = if a.dict.is_some() { 0 } else { a.bands };
    ensure_dir(&a.out)?;
    let dict_seed = splr::seed::derive(a.seed, &[0]);
    let data_seed = splr::seed::derive(a.seed, &[1]);
    let noise_seed = splr::seed::derive(a.seed, &[2]);
    let mut manifest = RunManifest::new(
        "synth",
        args,
        json!({
            "kind": format!("{:?}", a.kind), "dictionary": source, "bands": l, "endmembers": n,
            "pixels": a.pixels, "rank": a.rank, "sparsity": a.sparsity, "snr_db": a.snr,
            "noise": NoiseKind::from(a.noise),
        }),
        vec![a.seed, dict_seed, data_seed, noise_seed],
    );
    if let Some(p) = &a.dict {
        manifest.hash_input(p)?;
    }
    let dict = synth::sample_dictionary(n, l, &source, dict_seed)?;
    io::write_matrix_csv(&a.out.join("dictionary.csv"), None, &dict)?;
    manifest.output_files.push("dictionary.csv".into());

    match a.kind {
        SynthKind::BlockImage => {
            let (cube, truth) = with_pool(threads, || synth::build_block_image(&dict, data_seed))??;
            io::write_hsc(&a.out.join("cube.hsc"), &cube)?;
            io::write_abc(&a.out.join("truth.abc"), &truth)?;
            manifest.output_files.extend(["cube.hsc".to_string(), "truth.abc".to_string()]);
        }
        SynthKind::Window => {
            let truth = synth::sample_splr_abundance(&SpLrSpec {
                n,
                k: a.pixels,
                rank: a.rank,
                sparsity_level: a.sparsity,
                seed: data_seed,
            })?;
            let noise = match a.noise {
                NoiseArg::White => NoiseSpec::white(a.snr, noise_seed),
                NoiseArg::Colored => NoiseSpec::colored(a.snr, noise_seed),
            };
            let y = synth::add_noise(&(&dict * &truth), &noise)?;
            io::write_matrix_csv(&a.out.join("observations.csv"), None, &y)?;
            io::write_matrix_csv(&a.out.join("truth.csv"), None, &truth)?;
            manifest.output_files.extend(["observations.csv".to_string(), "truth.csv".to_string()]);
        }
    }
    finish(&a.out, &mut manifest)
}

fn run_experiment(a: ExperimentArgs, args: Vec<String>) -> CliResult<()> {
    let preset: Preset = a.preset.parse()?;
    let threads = thread_count(a.threads)?;
    let mut setup = Setup {
        dictionary: dictionary_source(&a.dict)?,
        bands: a.bands,
        seed: a.seed,
        trials: a.trials,
        tuning_trials: a.tuning_trials,
        ..Setup::default()
    };
    for cfg in [&mut setup.ipsplru, &mut setup.adsplru] {
        cfg.record_objective = false;
        if let Some(w) = a.weights {
            cfg.weight_mode = w.into();
        }
        cfg.literal_thresholds = a.literal_thresholds;
        if let Some(n) = a.max_iters {
            cfg.max_iters = n;
        }
    }
    if let Some(l) = a.lambda {
        setup.ipsplru.lambda = l;
    }
    if let Some(m) = a.mu {
        setup.adsplru.mu = m;
    }
    setup.validate()?;
    ensure_dir(&a.out)?;

    let mut manifest = RunManifest::new(
        "experiment",
        args,
        json!({ "preset": preset, "setup": setup, "snr_points": a.snr_points, "full_grid": a.full_grid }),
        vec![setup.seed],
    );
    if let Some(p) = &a.dict {
        manifest.hash_input(p)?;
    }
    let out = a.out.clone();
    let snr_points = a.snr_points;
    let full_grid = a.full_grid;
    with_pool(threads, || run_preset(preset, &setup, &out, snr_points, full_grid, threads, &mut manifest))??;
    finish(&a.out, &mut manifest)
}

fn run_preset(
    preset: Preset,
    setup: &Setup,
    out: &Path,
    snr_points: usize,
    full_grid: bool,
    threads: Option<usize>,
    manifest: &mut RunManifest,
) -> CliResult<()> {
    match preset {
        Preset::ToyAblation => {
            let rows = experiments::toy_ablation(setup, &ProblemSpec::toy())?;
            println!("{:<10} {:>10} {:>10} {:>12} {:>12} {:>8}", "algorithm", "gamma", "tau", "rmse", "rmse_sq", "sre_db");
            for r in &rows {
                println!(
                    "{:<10} {:>10.0e} {:>10.0e} {:>12.5} {:>12.5} {:>8.2}",
                    r.algorithm, r.gamma, r.tau, r.rmse, r.rmse_squared, r.sre_db
                );
            }
            write_csv(out, "toy_ablation.csv", &rows, manifest)
        }
        Preset::ReweightingStudy => {
            let study = experiments::reweighting_study(setup, &ProblemSpec::reweighting())?;
            for r in &study.rows {
                println!("{} {:<10} final NMSE {:.4e}", r.solver, r.mode.as_str(), r.final_nmse);
            }
            write_csv(out, "reweighting.csv", &study.rows, manifest)?;
            write_csv(out, "nmse_traces.csv", &study.traces, manifest)
        }
        Preset::ParamSweep => {
            let grid = if full_grid { SweepGrid::default() } else { experiments::reduced_grid() };
            #[derive(Serialize)]
            struct Row {
                case: &'static str,
                solver: SolverKind,
                #[serde(flatten)]
                cell: splr::eval::SweepRow,
            }
            let mut rows = Vec::new();
            for c in experiments::param_sweep(setup, &grid)? {
                let (tau, gamma, v) = c.result.best(splr::eval::RmseKind::Squared);
                println!("{} {}: best tau {tau:e}, gamma {gamma:e}, rmse_sq {v:.5}", c.case.as_str(), c.solver);
                rows.extend(c.result.rows().into_iter().map(|cell| Row { case: c.case.as_str(), solver: c.solver, cell }));
            }
            write_csv(out, "param_sweep.csv", &rows, manifest)
        }
        Preset::NoiseRobustnessWhite | Preset::NoiseRobustnessColored => {
            let kind = if preset == Preset::NoiseRobustnessWhite { NoiseKind::White } else { NoiseKind::Colored };
            let points = experiments::noise_robustness(setup, kind, &experiments::snr_points(10.0, 40.0, snr_points))?;
            for p in &points {
                println!("{:>6.2} dB {:<10} rmse_sq {:.5} sre {:.2}", p.snr_db, p.method, p.rmse_squared, p.sre_db);
            }
            write_csv(out, "noise_robustness.csv", &points, manifest)
        }
        Preset::BlockImage => {
            let run = experiments::block_image(setup, threads)?;
            for r in &run.rows {
                println!("{} row {}: rmse_sq {:.5} sre {:.2} dB", r.solver, r.block_row, r.rmse_squared, r.sre_db);
            }
            write_csv(out, "block_rows.csv", &run.rows, manifest)?;
            io::write_hsc(&out.join("cube.hsc"), &run.cube)?;
            io::write_abc(&out.join("truth.abc"), &run.truth)?;
            manifest.output_files.extend(["cube.hsc".to_string(), "truth.abc".to_string()]);
            for (kind, est) in &run.estimates {
                let name = format!("{kind}.abc");
                io::write_abc(&out.join(&name), est)?;
                manifest.output_files.push(name);
            }
            Ok(())
        }
    }
}

fn run_metrics(a: MetricsArgs, args: Vec<String>) -> CliResult<()> {
    require_file(&a.est, "--est")?;
    require_file(&a.truth, "--truth")?;
    let est = io::read_abc(&a.est)?;
    let truth = io::read_abc(&a.truth)?;
    if (est.endmembers(), est.height(), est.width()) != (truth.endmembers(), truth.height(), truth.width()) {
        return Err(fail(
            3,
            format!(
                "--est is {}x{}x{} but --truth is {}x{}x{}",
                est.endmembers(),
                est.height(),
                est.width(),
                truth.endmembers(),
                truth.height(),
                truth.width()
            ),
        ));
    }
    let report = metrics(est.pixels(), truth.pixels())?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| fail(1, e.to_string()))?;
    println!("{text}");
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let mut manifest = RunManifest::new("metrics", args, to_json(&report), Vec::new());
        manifest.hash_input(&a.est)?;
        manifest.hash_input(&a.truth)?;
        io::atomic_write(&out.join("metrics.json"), text.as_bytes())?;
        manifest.output_files.push("metrics.json".into());
        finish(out, &mut manifest)?;
    }
    Ok(())
}
