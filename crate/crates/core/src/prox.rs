//! Proximal operators for each term of the regularized least-squares cost,
//! together with the weighted norms and the composite objective.

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ensure_shape, frob_sq, spd_inverse, Matrix, Svd, Vector};
use crate::weights::WeightState;

/// Element-wise soft thresholding: `sign(w) * max(0, |w| - delta)`.
pub fn shrink(w: &Matrix, delta: &Matrix) -> Result<Matrix> {
    ensure_shape(delta, w.nrows(), w.ncols(), "shrink threshold")?;
    if delta.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::Domain("shrink thresholds must be nonnegative".into()));
    }
    Ok(w.zip_map(delta, shrink_scalar))
}

/// Soft thresholding with one threshold applied to every entry.
pub fn shrink_uniform(w: &Matrix, delta: f64) -> Result<Matrix> {
    if !(delta >= 0.0) {
        return Err(Error::Domain("shrink threshold must be nonnegative".into()));
    }
    Ok(w.map(|x| shrink_scalar(x, delta)))
}

#[inline]
pub fn shrink_scalar(x: f64, delta: f64) -> f64 {
    let mag = x.abs() - delta;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// Singular value thresholding. `delta[i]` shrinks the i-th largest singular
/// value, so its length must equal `min(rows, cols)`.
pub fn svt(w: &Matrix, delta: &Vector) -> Result<Matrix> {
    let k = w.nrows().min(w.ncols());
    if delta.len() != k {
        return Err(Error::dim("svt thresholds", k, delta.len()));
    }
    if delta.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::Domain("svt thresholds must be nonnegative".into()));
    }
    let svd = Svd::new(w)?;
    Ok(svd.recompose(&threshold_values(&svd.s, delta)))
}

pub(crate) fn threshold_values(s: &Vector, delta: &Vector) -> Vector {
    s.zip_map(delta, |s, d| (s - d).max(0.0))
}

/// Projection onto the nonnegative orthant.
pub fn project_nonneg(w: &Matrix) -> Matrix {
    w.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Precomputed factors for the proximal map of `0.5 * ||Y - Phi W||_F^2`.
///
/// `r = (Phi^T Phi + I / lambda)^-1`, `p = Phi^T Y`, `q = r p`; evaluating the
/// prox is then a single `N x N` by `N x K` product.
#[derive(Debug, Clone)]
pub struct LsProxCache {
    pub r: Matrix,
    pub p: Matrix,
    pub q: Matrix,
    pub lambda: f64,
}

impl LsProxCache {
    pub fn new(phi: &Matrix, y: &Matrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if phi.nrows() != y.nrows() {
            return Err(Error::dim("prox_ls: Y rows vs Phi rows", phi.nrows(), y.nrows()));
        }
        let n = phi.ncols();
        let mut gram = phi.transpose() * phi;
        for i in 0..n {
            gram[(i, i)] += 1.0 / lambda;
        }
        let r = spd_inverse(&gram)?;
        let p = phi.transpose() * y;
        let q = &r * &p;
        Ok(LsProxCache { r, p, q, lambda })
    }

    pub fn endmembers(&self) -> usize {
        self.r.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.p.ncols()
    }
}

/// `(Phi^T Phi + I / lambda)^-1 (Phi^T Y + w / lambda)`.
pub fn prox_ls(cache: &LsProxCache, w: &Matrix) -> Result<Matrix> {
    ensure_shape(w, cache.endmembers(), cache.pixels(), "prox_ls input")?;
    let mut out = cache.q.clone();
    out.gemm(1.0 / cache.lambda, &cache.r, w, 1.0);
    Ok(out)
}

/// `sum_ij a_ij |w_ij|`.
pub fn weighted_l1(w: &Matrix, a: &Matrix) -> Result<f64> {
    ensure_shape(a, w.nrows(), w.ncols(), "weighted l1 weights")?;
    Ok(w.iter().zip(a.iter()).map(|(x, a)| a * x.abs()).sum())
}

/// `sum_i b_i sigma_i(w)` with singular values sorted descending.
pub fn weighted_nuclear(w: &Matrix, b: &Vector) -> Result<f64> {
    let k = w.nrows().min(w.ncols());
    if b.len() != k {
        return Err(Error::dim("weighted nuclear weights", k, b.len()));
    }
    let s = crate::linalg::singular_values(w)?;
    Ok(s.dot(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Whether the nonnegativity indicator term is zero.
    pub feasible: bool,
}

/// `0.5 ||Y - Phi W||_F^2 + gamma ||A . W||_1 + tau ||W||_{b,*}`.
///
/// The indicator of the nonnegative orthant is not added to `value`; it is
/// reported through `feasible`.
pub fn objective(
    phi: &Matrix,
    y: &Matrix,
    w: &Matrix,
    gamma: f64,
    tau: f64,
    weights: &WeightState,
) -> Result<ObjectiveValue> {
    ensure_finite(w, "objective W")?;
    ensure_shape(w, phi.ncols(), y.ncols(), "objective W")?;
    if phi.nrows() != y.nrows() {
        return Err(Error::dim("objective: Y rows vs Phi rows", phi.nrows(), y.nrows()));
    }
    let fit = 0.5 * frob_sq(&(y - phi * w));
    let l1 = if gamma != 0.0 { gamma * weighted_l1(w, &weights.a)? } else { 0.0 };
    let nuc = if tau != 0.0 { tau * weighted_nuclear(w, &weights.b)? } else { 0.0 };
    Ok(ObjectiveValue {
        value: fit + l1 + nuc,
        feasible: w.iter().all(|&x| x >= 0.0),
    })
}

/// Cheap objective evaluation for solver traces: the data term is expanded
/// through `Phi^T Phi`, `Phi^T Y` and `||Y||^2`, so no `L x N` product is needed.
#[derive(Debug, Clone)]
pub(crate) struct ObjectiveTracker {
    gram: Matrix,
    pty: Matrix,
    y_sq: f64,
}

impl ObjectiveTracker {
    pub(crate) fn new(phi: &Matrix, y: &Matrix) -> Self {
        ObjectiveTracker {
            gram: phi.transpose() * phi,
            pty: phi.transpose() * y,
            y_sq: frob_sq(y),
        }
    }

    pub(crate) fn eval(&self, w: &Matrix, gamma: f64, tau: f64, weights: &WeightState) -> Result<f64> {
        let gw = &self.gram * w;
        let fit = 0.5 * (self.y_sq - 2.0 * w.dot(&self.pty) + w.dot(&gw));
        let l1 = if gamma != 0.0 { gamma * weighted_l1(w, &weights.a)? } else { 0.0 };
        let nuc = if tau != 0.0 { tau * weighted_nuclear(w, &weights.b)? } else { 0.0 };
        Ok(fit.max(0.0) + l1 + nuc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightState;
    use proptest::prelude::*;

    #[test]
    fn shrink_closed_form() {
        let w = Matrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let d = Matrix::from_element(1, 2, 2.0);
        let out = shrink(&w, &d).unwrap();
        assert_eq!(out, Matrix::from_row_slice(1, 2, &[1.0, 0.0]));
    }

    #[test]
    fn shrink_zero_threshold_is_identity() {
        let w = Matrix::from_fn(4, 3, |i, j| (i as f64 - 1.5) * (j as f64 + 0.3));
        assert_eq!(shrink(&w, &Matrix::zeros(4, 3)).unwrap(), w);
    }

    #[test]
    fn shrink_rejects_bad_thresholds() {
        let w = Matrix::zeros(2, 2);
        assert!(matches!(shrink(&w, &Matrix::zeros(2, 3)), Err(Error::Dimension { .. })));
        assert!(matches!(shrink(&w, &Matrix::from_element(2, 2, -0.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn svt_diagonal_case() {
        let w = Matrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 1.0]);
        let out = svt(&w, &Vector::from_vec(vec![2.0, 2.0])).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert!((out - want).norm() < 1e-12);
    }

    #[test]
    fn svt_zero_threshold_reconstructs() {
        let w = Matrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) as f64).cos());
        let out = svt(&w, &Vector::zeros(3)).unwrap();
        assert!((out - &w).norm() < 1e-10);
    }

    #[test]
    fn svt_short_threshold_vector_is_an_error() {
        let w = Matrix::from_element(4, 3, 1.0);
        assert!(matches!(svt(&w, &Vector::zeros(2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn svt_output_singular_values_are_shrunk() {
        let w = Matrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64 * 0.7).sin() + 0.1 * i as f64);
        let s = crate::linalg::singular_values(&w).unwrap();
        let delta = Vector::from_vec(vec![0.3, 0.2, 0.2, 0.1]);
        let out = svt(&w, &delta).unwrap();
        let so = crate::linalg::singular_values(&out).unwrap();
        for i in 0..4 {
            assert!((so[i] - (s[i] - delta[i]).max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_rules() {
        let w = Matrix::from_row_slice(1, 2, &[-1.0, 2.0]);
        assert_eq!(project_nonneg(&w), Matrix::from_row_slice(1, 2, &[0.0, 2.0]));
        let p = Matrix::from_row_slice(1, 3, &[0.0, 1.0, 4.5]);
        assert_eq!(project_nonneg(&p), p);
    }

    #[test]
    fn prox_ls_identity_dictionary() {
        let phi = Matrix::identity(3, 3);
        let y = Matrix::zeros(3, 2);
        let cache = LsProxCache::new(&phi, &y, 1.0).unwrap();
        let w = Matrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let out = prox_ls(&cache, &w).unwrap();
        assert!((out - &w / 2.0).norm() < 1e-14);
    }

    #[test]
    fn prox_ls_small_step_is_identity() {
        let phi = Matrix::from_fn(8, 3, |i, j| 0.2 + ((i * 3 + j) as f64).sin().abs());
        let y = Matrix::from_fn(8, 2, |i, j| ((i + j) as f64).cos());
        let cache = LsProxCache::new(&phi, &y, 1e-8).unwrap();
        let w = Matrix::from_fn(3, 2, |i, j| 1.0 + (i * 2 + j) as f64);
        let out = prox_ls(&cache, &w).unwrap();
        assert!((&out - &w).norm() / w.norm() < 1e-4);
    }

    #[test]
    fn prox_ls_dimension_error() {
        let phi = Matrix::identity(3, 3);
        let cache = LsProxCache::new(&phi, &Matrix::zeros(3, 2), 0.5).unwrap();
        assert!(prox_ls(&cache, &Matrix::zeros(3, 3)).is_err());
        assert!(LsProxCache::new(&phi, &Matrix::zeros(4, 2), 0.5).is_err());
        assert!(LsProxCache::new(&phi, &Matrix::zeros(3, 2), 0.0).is_err());
    }

    #[test]
    fn cache_invariants() {
        let phi = Matrix::from_fn(10, 4, |i, j| 0.1 + ((i * 5 + j * 2) as f64 * 0.37).sin().abs());
        let y = Matrix::from_fn(10, 3, |i, j| ((i * j) as f64 * 0.2).cos());
        let cache = LsProxCache::new(&phi, &y, 0.5).unwrap();
        assert!((&cache.r - cache.r.transpose()).norm() < 1e-12);
        assert!(nalgebra::Cholesky::new(cache.r.clone()).is_some());
        let q = &cache.r * &cache.p;
        assert!((q - &cache.q).norm() <= 1e-10 * cache.q.norm());
    }

    #[test]
    fn objective_at_zero() {
        let phi = Matrix::from_fn(5, 3, |i, j| (i + j) as f64 * 0.1 + 0.05);
        let y = Matrix::from_fn(5, 2, |i, j| (i as f64) - (j as f64));
        let w = Matrix::zeros(3, 2);
        let ws = WeightState::uniform(3, 2);
        let obj = objective(&phi, &y, &w, 0.3, 0.7, &ws).unwrap();
        assert!((obj.value - 0.5 * y.norm_squared()).abs() < 1e-12);
        assert!(obj.feasible);
        let neg = Matrix::from_element(3, 2, -1.0);
        assert!(!objective(&phi, &y, &neg, 0.0, 0.0, &ws).unwrap().feasible);
    }

    #[test]
    fn objective_without_regularizers_is_least_squares() {
        let phi = Matrix::from_fn(6, 3, |i, j| ((i + 2 * j) as f64).sin().abs());
        let y = Matrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64).cos());
        let w = Matrix::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.4);
        let ws = WeightState::uniform(3, 2);
        let obj = objective(&phi, &y, &w, 0.0, 0.0, &ws).unwrap();
        assert!((obj.value - 0.5 * (&y - &phi * &w).norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn tracker_matches_direct_objective() {
        let phi = Matrix::from_fn(9, 4, |i, j| 0.1 + ((i * 4 + j) as f64 * 0.61).sin().abs());
        let y = Matrix::from_fn(9, 3, |i, j| ((i + j * 5) as f64 * 0.3).cos());
        let w = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.9).sin().abs());
        let ws = WeightState::uniform(4, 3);
        let direct = objective(&phi, &y, &w, 0.2, 0.1, &ws).unwrap().value;
        let tracked = ObjectiveTracker::new(&phi, &y).eval(&w, 0.2, 0.1, &ws).unwrap();
        assert!((direct - tracked).abs() < 1e-10 * direct.max(1.0));
    }

    proptest! {
        #[test]
        fn shrink_is_nonexpansive(x in -10.0..10.0f64, y in -10.0..10.0f64, d in 0.0..5.0f64) {
            prop_assert!((shrink_scalar(x, d) - shrink_scalar(y, d)).abs() <= (x - y).abs() + 1e-15);
        }

        #[test]
        fn projection_is_nonnegative_and_idempotent(v in proptest::collection::vec(-5.0..5.0f64, 12)) {
            let w = Matrix::from_vec(4, 3, v);
            let p = project_nonneg(&w);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert_eq!(project_nonneg(&p), p);
        }

        #[test]
        fn svt_never_increases_singular_values_or_rank(
            v in proptest::collection::vec(-3.0..3.0f64, 20),
            tau in 0.0..2.0f64,
        ) {
            let w = Matrix::from_vec(5, 4, v);
            let s = crate::linalg::singular_values(&w).unwrap();
            let out = svt(&w, &Vector::from_element(4, tau)).unwrap();
            let so = crate::linalg::singular_values(&out).unwrap();
            let tol = 1e-9 * s[0].max(1.0);
            for i in 0..4 {
                prop_assert!(so[i] <= s[i] + tol);
            }
            let rank = |x: &Vector| x.iter().filter(|&&v| v > tol).count();
            prop_assert!(rank(&so) <= rank(&s));
        }

        #[test]
        fn prox_ls_satisfies_optimality(
            pv in proptest::collection::vec(0.0..1.0f64, 24),
            yv in proptest::collection::vec(-1.0..1.0f64, 16),
            wv in proptest::collection::vec(-1.0..1.0f64, 6),
            lambda in 0.05..5.0f64,
        ) {
            let phi = Matrix::from_vec(8, 3, pv) + Matrix::identity(8, 3) * 0.5;
            let y = Matrix::from_vec(8, 2, yv);
            let w = Matrix::from_vec(3, 2, wv);
            let cache = LsProxCache::new(&phi, &y, lambda).unwrap();
            let x = prox_ls(&cache, &w).unwrap();
            let grad = phi.transpose() * (&phi * &x - &y) + (&x - &w) / lambda;
            prop_assert!(grad.amax() < 1e-8);
        }

        #[test]
        fn objective_is_column_permutation_invariant(
            seed in 0u64..1000,
            gamma in 0.0..0.5f64,
            tau in 0.0..0.5f64,
        ) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let phi = Matrix::from_fn(7, 4, |_, _| rng.random::<f64>());
            let y = Matrix::from_fn(7, 5, |_, _| rng.random::<f64>());
            let w = Matrix::from_fn(4, 5, |_, _| rng.random::<f64>() - 0.3);
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let yp = Matrix::from_fn(7, 5, |i, j| y[(i, perm[j])]);
            let wp = Matrix::from_fn(4, 5, |i, j| w[(i, perm[j])]);
            let ws = WeightState::uniform(4, 5);
            let a = objective(&phi, &y, &w, gamma, tau, &ws).unwrap().value;
            let b = objective(&phi, &yp, &wp, gamma, tau, &ws).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
