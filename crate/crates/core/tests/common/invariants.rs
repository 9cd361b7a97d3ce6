//! Property checks, one per module invariant. Each runs a proptest
//! `TestRunner` for the requested number of cases, so the same checks back
//! the `properties` test target and the acceptance runner.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use splr::driver::{unmix_cube, Boundary, HsiCube, WindowSpec};
use splr::eval::{rmse, sweep, Problem, SweepGrid};
use splr::io::{atomic_write, RunManifest};
use splr::prox::{objective, project_nonneg, prox_ls, shrink_scalar, svt, LsProxCache};
use splr::synth::{add_noise, sample_splr_abundance, NoiseSpec, SpLrSpec};
use splr::weights::{update_weights, WeightMode, WeightState};
use splr::{Matrix, SolverConfig, SolverKind, Vector};

use super::{convex_agreement, random_matrix, rng, singular_values_eig, small_instance};

pub struct Invariant {
    pub name: &'static str,
    /// Cases for a full run; heavy checks use fewer.
    pub cases: u32,
    pub check: fn(u32) -> Result<(), String>,
}

pub fn all() -> Vec<Invariant> {
    vec![
        Invariant { name: "shrink is nonexpansive", cases: 256, check: shrink_nonexpansive },
        Invariant { name: "svt never grows singular values or rank", cases: 64, check: svt_contracts },
        Invariant { name: "projection is nonnegative and idempotent", cases: 128, check: projection },
        Invariant { name: "uniform objective ignores pixel order", cases: 64, check: objective_permutation },
        Invariant { name: "prox_ls optimality condition", cases: 64, check: prox_ls_optimality },
        Invariant { name: "least-squares prox cache consistency", cases: 64, check: ls_cache },
        Invariant { name: "weights are nonnegative", cases: 64, check: weights_nonnegative },
        Invariant { name: "solver outputs are nonnegative", cases: 24, check: solver_nonnegative },
        Invariant { name: "solvers agree with uniform weights", cases: 24, check: solver_agreement },
        Invariant { name: "unmixing shape, nonnegativity, scheduling", cases: 12, check: unmix_invariants },
        Invariant { name: "generated abundances hit targets", cases: 64, check: abundance_targets },
        Invariant { name: "noise is seeded and hits the SNR", cases: 64, check: noise_snr },
        Invariant { name: "rmse permutation invariance and zero set", cases: 64, check: rmse_invariants },
        Invariant { name: "sweeps are deterministic", cases: 8, check: sweep_determinism },
        Invariant { name: "manifests round-trip", cases: 32, check: manifest_round_trip },
        Invariant { name: "atomic writes leave only the target", cases: 32, check: atomic_writes },
    ]
}

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn sized_matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| matrix(r, c, -3.0, 3.0))
}

fn rank_of(s: &[f64]) -> usize {
    s.iter().filter(|&&v| v > 1e-9 * s[0].max(1e-300)).count()
}

pub fn shrink_nonexpansive(cases: u32) -> Result<(), String> {
    run(cases, (-10.0..10.0f64, -10.0..10.0f64, 0.0..5.0f64), |(x, y, d)| {
        prop_assert!((shrink_scalar(x, d) - shrink_scalar(y, d)).abs() <= (x - y).abs() + 1e-15);
        Ok(())
    })
}

pub fn svt_contracts(cases: u32) -> Result<(), String> {
    run(cases, (sized_matrix(7, 6), 0.0..2.0f64), |(w, tau)| {
        let k = w.nrows().min(w.ncols());
        let out = svt(&w, &Vector::from_element(k, tau)).unwrap();
        let (s_in, s_out) = (singular_values_eig(&w), singular_values_eig(&out));
        for (a, b) in s_in.iter().zip(&s_out) {
            prop_assert!(*b <= *a + 1e-9);
        }
        prop_assert!(rank_of(&s_out) <= rank_of(&s_in));
        Ok(())
    })
}

pub fn projection(cases: u32) -> Result<(), String> {
    run(cases, sized_matrix(6, 6), |w| {
        let p = project_nonneg(&w);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(project_nonneg(&p), p);
        Ok(())
    })
}

pub fn objective_permutation(cases: u32) -> Result<(), String> {
    let strategy = (
        matrix(6, 4, 0.0, 1.0),
        matrix(6, 5, -1.0, 1.0),
        matrix(4, 5, -1.0, 1.0),
        Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        0.0..1.0f64,
        0.0..1.0f64,
    );
    run(cases, strategy, |(phi, y, w, perm, gamma, tau)| {
        let u = WeightState::uniform(4, 5);
        let a = objective(&phi, &y, &w, gamma, tau, &u).unwrap().value;
        let b = objective(&phi, &y.select_columns(&perm), &w.select_columns(&perm), gamma, tau, &u).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        Ok(())
    })
}

pub fn prox_ls_optimality(cases: u32) -> Result<(), String> {
    let strategy = (matrix(12, 4, 0.0, 1.0), matrix(12, 3, -1.0, 1.0), matrix(4, 3, -1.0, 1.0), 1e-3..10.0f64);
    run(cases, strategy, |(phi, y, w, lambda)| {
        let x = prox_ls(&LsProxCache::new(&phi, &y, lambda).unwrap(), &w).unwrap();
        let g = phi.transpose() * (&phi * &x - &y) + (&x - &w) / lambda;
        prop_assert!(g.amax() <= 1e-8 * (1.0 + (&w / lambda).amax()));
        Ok(())
    })
}

pub fn ls_cache(cases: u32) -> Result<(), String> {
    run(cases, (matrix(10, 4, 0.0, 1.0), matrix(10, 2, -1.0, 1.0), 1e-2..10.0f64), |(phi, y, lambda)| {
        let c = LsProxCache::new(&phi, &y, lambda).unwrap();
        prop_assert!((&c.r - c.r.transpose()).amax() <= 1e-8 * c.r.amax());
        prop_assert!(c.r.clone().cholesky().is_some());
        prop_assert!((&c.q - &c.r * &c.p).amax() <= 1e-10 * c.q.amax().max(1.0));
        Ok(())
    })
}

pub fn weights_nonnegative(cases: u32) -> Result<(), String> {
    run(cases, (sized_matrix(6, 5), 1e-12..1e-1f64), |(w, eps)| {
        for mode in WeightMode::ALL {
            let st = update_weights(&w, mode, eps).unwrap();
            prop_assert!(st.a.iter().all(|&v| v >= 0.0));
            prop_assert!(st.b.iter().all(|&v| v >= 0.0));
            if mode == WeightMode::Uniform {
                prop_assert!(st.a.iter().all(|&v| v == 1.0));
                prop_assert!(st.b.iter().all(|&v| v == st.b[0]));
            }
        }
        Ok(())
    })
}

pub fn solver_nonnegative(cases: u32) -> Result<(), String> {
    let strategy = (0u64..1_000_000, prop::sample::select(WeightMode::ALL.to_vec()), any::<bool>());
    run(cases, strategy, |(seed, mode, literal)| {
        let inst = small_instance(seed, 8, 4, 16);
        for kind in SolverKind::ALL {
            let cfg = SolverConfig {
                gamma: 1e-2,
                tau: 1e-2,
                weight_mode: mode,
                literal_thresholds: literal,
                max_iters: 200,
                ..SolverConfig::default()
            };
            let rep = splr::solver::solve(kind, &inst.phi, &inst.y, &cfg).unwrap();
            prop_assert!(rep.w_hat.iter().all(|&v| v >= 0.0));
        }
        Ok(())
    })
}

pub fn solver_agreement(cases: u32) -> Result<(), String> {
    run(cases, (0u64..1_000_000, 3usize..=10, 2usize..=5), |(seed, n, k)| {
        let a = convex_agreement(seed, n, k, 20);
        prop_assert!(a.relative_gap() < 1e-3, "gap {:e}", a.relative_gap());
        Ok(())
    })
}

pub fn unmix_invariants(cases: u32) -> Result<(), String> {
    let strategy = (
        any::<u64>(),
        3usize..7,
        3usize..7,
        prop::sample::select(vec![Boundary::Mirror, Boundary::Clamp, Boundary::Shrink]),
        prop::sample::select(SolverKind::ALL.to_vec()),
    );
    run(cases, strategy, |(seed, h, w, boundary, kind)| {
        let mut rng = rng(seed);
        let dict = random_matrix(&mut rng, 10, 3, 0.05, 1.0);
        let ab = random_matrix(&mut rng, 3, h * w, 0.0, 1.0);
        let cube = HsiCube::new(h, w, &dict * &ab).unwrap();
        let spec = WindowSpec::new(3, boundary).unwrap();
        let cfg = SolverConfig { gamma: 1e-3, tau: 1e-3, max_iters: 100, record_objective: false, ..SolverConfig::default() };
        let serial = unmix_cube(&cube, &dict, &spec, &cfg, kind, Some(1)).unwrap();
        let parallel = unmix_cube(&cube, &dict, &spec, &cfg, kind, Some(3)).unwrap();
        prop_assert_eq!(serial.abundances.pixels(), parallel.abundances.pixels());
        prop_assert_eq!(&serial.diagnostics, &parallel.diagnostics);
        let crop = if boundary == Boundary::Shrink { 2 } else { 0 };
        prop_assert_eq!((serial.abundances.height(), serial.abundances.width()), (h - crop, w - crop));
        prop_assert!(serial.abundances.pixels().iter().all(|&v| v >= 0.0));
        Ok(())
    })
}

pub fn abundance_targets(cases: u32) -> Result<(), String> {
    let strategy = (5usize..40, 2usize..12, 1usize..4, 0.1..1.0f64, any::<u64>());
    run(cases, strategy, |(n, k, rank, level, seed)| {
        let spec = SpLrSpec { n, k, rank, sparsity_level: level, seed };
        prop_assume!(spec.support_size() >= rank && rank <= k);
        let w = sample_splr_abundance(&spec).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        let s = singular_values_eig(&w);
        prop_assert_eq!(s.iter().filter(|&&v| v > 1e-6 * s[0]).count(), rank);
        let rows = (0..n).filter(|&i| w.row(i).iter().any(|&v| v != 0.0)).count();
        prop_assert!(rows.abs_diff(spec.support_size()) <= 1);
        Ok(())
    })
}

pub fn noise_snr(cases: u32) -> Result<(), String> {
    let strategy = (matrix(20, 3, 0.1, 1.0), -5.0..50.0f64, any::<u64>(), any::<bool>());
    run(cases, strategy, |(clean, snr, seed, colored)| {
        let spec = if colored { NoiseSpec::colored(snr, seed) } else { NoiseSpec::white(snr, seed) };
        let a = add_noise(&clean, &spec).unwrap();
        prop_assert_eq!(&a, &add_noise(&clean, &spec).unwrap());
        let e = &a - &clean;
        let realized = 10.0 * (clean.norm_squared() / e.norm_squared()).log10();
        prop_assert!((realized - snr).abs() < 1e-10);
        Ok(())
    })
}

pub fn rmse_invariants(cases: u32) -> Result<(), String> {
    let strategy = (
        matrix(4, 6, 0.0, 1.0),
        matrix(4, 6, 0.0, 1.0),
        Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    );
    run(cases, strategy, |(est, truth, perm)| {
        let (a, b) = rmse(&est, &truth).unwrap();
        let (pa, pb) = rmse(&est.select_columns(&perm), &truth.select_columns(&perm)).unwrap();
        prop_assert!((a - pa).abs() < 1e-12 && (b - pb).abs() < 1e-12);
        prop_assert_eq!(a == 0.0, est == truth);
        prop_assert_eq!(b == 0.0, est == truth);
        prop_assert_eq!(rmse(&truth, &truth).unwrap(), (0.0, 0.0));
        Ok(())
    })
}

pub fn sweep_determinism(cases: u32) -> Result<(), String> {
    run(cases, any::<u64>(), |seed| {
        let problems: Vec<Problem> = (0..3)
            .map(|t| {
                let inst = small_instance(seed.wrapping_add(t), 6, 3, 15);
                Problem { phi: inst.phi, y: inst.y, truth: inst.truth }
            })
            .collect();
        let grid = SweepGrid::new(vec![0.0, 1e-3], vec![0.0, 1e-2]).unwrap();
        let cfg = SolverConfig { max_iters: 100, ..SolverConfig::default() };
        let a = sweep(&problems, &grid, SolverKind::Adsplru, &cfg).unwrap();
        let b = sweep(&problems, &grid, SolverKind::Adsplru, &cfg).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn manifest_round_trip(cases: u32) -> Result<(), String> {
    run(cases, (prop::collection::vec(any::<u64>(), 0..4), 0.0..1.0f64), |(seeds, gamma)| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let args = vec!["splr".to_string(), "unmix".to_string()];
        let mut m = RunManifest::new("unmix", args, serde_json::json!({ "gamma": gamma }), seeds);
        m.output_files.push("abundances.abc".into());
        m.write(&path).unwrap();
        prop_assert_eq!(RunManifest::read(&path).unwrap(), m);
        Ok(())
    })
}

pub fn atomic_writes(cases: u32) -> Result<(), String> {
    run(cases, prop::collection::vec(any::<u8>(), 0..256), |bytes| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        std::fs::write(&path, b"old").unwrap();
        atomic_write(&path, &bytes).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
        prop_assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        Ok(())
    })
}
