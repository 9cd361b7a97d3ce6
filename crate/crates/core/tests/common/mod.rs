//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the solver code paths.

#![allow(dead_code)]

pub mod invariants;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splr::synth::{sample_dictionary, sample_splr_abundance, DictionarySource, SpLrSpec};
use splr::{Matrix, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    splr::seed::rng(seed ^ 0x7e57_0000)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Scalar prox of `delta |x|` by scanning a grid of step 1e-4 over `[w - 2 delta, w + 2 delta]`.
pub fn grid_shrink(w: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        return w;
    }
    let (lo, hi) = (w - 2.0 * delta, w + 2.0 * delta);
    let steps = ((hi - lo) / 1e-4).ceil() as usize;
    let cost = |x: f64| 0.5 * (x - w).powi(2) + delta * x.abs();
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let x = lo + i as f64 * 1e-4;
        let c = cost(x);
        if c < best.0 {
            best = (c, x);
        }
    }
    best.1
}

/// `argmin_X 0.5 ||X - W||_F^2 + tau ||X||_*` by subgradient descent with step `1/k`.
pub fn svt_subgradient(w: &Matrix, tau: f64, iters: usize) -> Matrix {
    let mut x = w.clone();
    for k in 1..=iters {
        let svd = x.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let g = (&x - w) + &u * &vt * tau;
        x -= g / k as f64;
    }
    x
}

/// Solves `(Phi^T Phi + I / lambda) X = Phi^T Y + w / lambda` with an LU factorization.
pub fn prox_ls_normal(phi: &Matrix, y: &Matrix, lambda: f64, w: &Matrix) -> Matrix {
    let n = phi.ncols();
    let lhs = phi.transpose() * phi + Matrix::identity(n, n) / lambda;
    let rhs = phi.transpose() * y + w / lambda;
    lhs.lu().solve(&rhs).expect("normal equations are nonsingular")
}

/// Singular values through the eigenvalues of `W^T W` or `W W^T`, sorted descending.
pub fn singular_values_eig(w: &Matrix) -> Vec<f64> {
    let g = if w.nrows() >= w.ncols() { w.transpose() * w } else { w * w.transpose() };
    let mut s: Vec<f64> = g.symmetric_eigenvalues().iter().map(|&e| e.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `0.5 ||Y - Phi W||^2 + gamma sum a|w| + tau sum b sigma`, summed entry by entry.
pub fn objective_loop(phi: &Matrix, y: &Matrix, w: &Matrix, gamma: f64, tau: f64, a: &Matrix, b: &[f64]) -> f64 {
    let mut fit = 0.0;
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let mut pred = 0.0;
            for k in 0..phi.ncols() {
                pred += phi[(i, k)] * w[(k, j)];
            }
            fit += (y[(i, j)] - pred).powi(2);
        }
    }
    let mut l1 = 0.0;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            l1 += a[(i, j)] * w[(i, j)].abs();
        }
    }
    let nuc: f64 = singular_values_eig(w).iter().zip(b).map(|(s, b)| s * b).sum();
    0.5 * fit + gamma * l1 + tau * nuc
}

/// Both RMSE forms and SRE by explicit loops over pixels and entries.
pub fn metrics_loop(est: &Matrix, truth: &Matrix) -> (f64, f64, f64) {
    let (n, px) = est.shape();
    let (mut lin, mut sq, mut power) = (0.0, 0.0, 0.0);
    for j in 0..px {
        let mut e2 = 0.0;
        for i in 0..n {
            e2 += (est[(i, j)] - truth[(i, j)]).powi(2);
            power += est[(i, j)].powi(2);
        }
        lin += e2.sqrt();
        sq += e2;
    }
    let denom = (n * px) as f64;
    ((lin / denom).sqrt(), (sq / denom).sqrt(), 10.0 * (power / sq).log10())
}

/// Reflects `pos` into `0..len` without repeating the edge sample.
pub fn reflect(mut pos: isize, len: usize) -> usize {
    let last = len as isize - 1;
    if last == 0 {
        return 0;
    }
    while pos < 0 || pos > last {
        if pos < 0 {
            pos = -pos;
        }
        if pos > last {
            pos = 2 * last - pos;
        }
    }
    pos as usize
}

/// Small convex test case: `L x N` synthetic dictionary, sparse low-rank truth
/// and mildly noisy observations.
pub struct SmallInstance {
    pub phi: Matrix,
    pub y: Matrix,
    pub truth: Matrix,
}

pub fn small_instance(seed: u64, n: usize, k: usize, l: usize) -> SmallInstance {
    let phi = sample_dictionary(n, l, &DictionarySource::SyntheticSmooth, seed).unwrap();
    let rank = k.min(2);
    let truth = sample_splr_abundance(&SpLrSpec {
        n,
        k,
        rank,
        sparsity_level: 0.5_f64.max(rank as f64 / n as f64),
        seed: seed + 1,
    })
    .unwrap();
    let mut rng = rng(seed + 2);
    let clean = &phi * &truth;
    let y = clean.map(|v| v + 0.01 * rng.random_range(-1.0..1.0));
    SmallInstance { phi, y, truth }
}

pub fn uniform_b(w: &Matrix) -> Vec<f64> {
    vec![1.0; w.nrows().min(w.ncols())]
}

pub fn as_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Outcome of running both solvers on one small convex instance.
pub struct Agreement {
    pub ip_objective: f64,
    pub ad_objective: f64,
    pub ad_iterations: usize,
    pub ad_converged: bool,
}

impl Agreement {
    pub fn relative_gap(&self) -> f64 {
        (self.ip_objective - self.ad_objective).abs() / self.ad_objective.abs().max(f64::MIN_POSITIVE)
    }
}

/// Uniform weights, `gamma = tau = 1e-3`. The incremental solver needs a small
/// step to get close to the minimizer, so it runs at `lambda = 1e-2` with a
/// tight stopping rule; ADMM runs at its default settings.
pub fn convex_agreement(seed: u64, n: usize, k: usize, l: usize) -> Agreement {
    use splr::prox::objective;
    use splr::solver::{adsplru_solve, ipsplru_solve, Termination};
    use splr::{SolverConfig, WeightMode, WeightState};

    let inst = small_instance(seed, n, k, l);
    let base = SolverConfig {
        gamma: 1e-3,
        tau: 1e-3,
        weight_mode: WeightMode::Uniform,
        record_objective: false,
        ..SolverConfig::default()
    };
    let ip_cfg = SolverConfig { lambda: 1e-2, ip_tol: 1e-20, max_iters: 200_000, ..base.clone() };
    let ip = ipsplru_solve(&inst.phi, &inst.y, &ip_cfg, None).unwrap();
    let ad = adsplru_solve(&inst.phi, &inst.y, &base, None).unwrap();
    let uniform = WeightState::uniform(n, k);
    let obj = |w: &Matrix| objective(&inst.phi, &inst.y, w, 1e-3, 1e-3, &uniform).unwrap().value;
    Agreement {
        ip_objective: obj(&ip.w_hat),
        ad_objective: obj(&ad.w_hat),
        ad_iterations: ad.iterations,
        ad_converged: ad.termination == Termination::Tolerance,
    }
}
