//! Dense linear-algebra helpers shared by the kernels and solvers.
//!
//! Everything is double precision and column-major (`nalgebra::DMatrix`), so a
//! column of an abundance matrix is one pixel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SVD_MAX_ITERS: usize = 10_000;
/// Deflation tolerance; the one `SVD::new` uses. At plain epsilon some
/// sparse iterates never deflate and come back as NaN.
const SVD_EPS: f64 = 5.0 * f64::EPSILON;
/// Entries below `2^SVD_FLUSH_EXP` times the largest one are dropped before
/// an SVD. They cannot move the result at double precision, but their
/// squares underflow inside the Householder steps and also produce NaN.
const SVD_FLUSH_EXP: i32 = -400;

/// Rejects matrices that are empty or carry NaN/Inf entries.
pub fn ensure_finite(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::dim(context, "non-empty matrix", "0 rows or columns"));
    }
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "{context}: non-finite entry at linear index {pos}"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_shape(m: &Matrix, rows: usize, cols: usize, context: &'static str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Thin singular value decomposition `m = u * diag(s) * v_t`.
///
/// Singular values are sorted descending. Each left singular vector is
/// flipped so its largest-magnitude entry is nonnegative, with the matching
/// right vector flipped alongside, so the factors are reproducible.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vector,
    pub v_t: Matrix,
}

impl Svd {
    pub fn new(m: &Matrix) -> Result<Self> {
        let svd = raw_svd(m, true)?;
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => {
                return Err(Error::Numerical {
                    what: "SVD",
                    iterations: SVD_MAX_ITERS,
                })
            }
        };
        let s = svd.singular_values;
        let k = s.len();

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

        let mut su = Matrix::zeros(u.nrows(), k);
        let mut sv_t = Matrix::zeros(k, v_t.ncols());
        let mut ss = Vector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            let mut ucol = u.column(src).clone_owned();
            let mut vrow = v_t.row(src).clone_owned();
            let pivot = ucol.iter().copied().fold(0.0_f64, |acc, x| {
                if x.abs() > acc.abs() {
                    x
                } else {
                    acc
                }
            });
            if pivot < 0.0 {
                ucol.neg_mut();
                vrow.neg_mut();
            }
            su.set_column(dst, &ucol);
            sv_t.set_row(dst, &vrow);
            ss[dst] = s[src];
        }
        Ok(Svd {
            u: su,
            s: ss,
            v_t: sv_t,
        })
    }

    /// `u * diag(values) * v_t`.
    pub fn recompose(&self, values: &Vector) -> Matrix {
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= values[j];
        }
        scaled * &self.v_t
    }
}

/// Unordered nalgebra SVD of `m` with negligible entries flushed. Its
/// ordered constructor panics on NaN singular values; here they are an error.
fn raw_svd(m: &Matrix, vectors: bool) -> Result<SVD<f64, Dyn, Dyn>> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("SVD input: non-finite entry at linear index {pos}")));
    }
    let flush = m.amax() * 2f64.powi(SVD_FLUSH_EXP);
    let input = m.map(|v| if v.abs() < flush { 0.0 } else { v });
    let svd = SVD::try_new_unordered(input, vectors, vectors, SVD_EPS, SVD_MAX_ITERS).ok_or(
        Error::Numerical {
            what: "SVD",
            iterations: SVD_MAX_ITERS,
        },
    )?;
    if svd.singular_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            what: "SVD",
            iterations: SVD_MAX_ITERS,
        });
    }
    Ok(svd)
}

/// Singular values only, sorted descending.
pub fn singular_values(m: &Matrix) -> Result<Vector> {
    let svd = raw_svd(m, false)?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(Vector::from_vec(s))
}

/// Inverse of a symmetric positive definite matrix, symmetrized on output.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| {
        Error::Domain("matrix is not symmetric positive definite".to_string())
    })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Minimum-norm least-squares solution of `a * x = b` through the SVD
/// pseudo-inverse. Singular values below `rel_cutoff * sigma_max` are dropped.
pub fn pinv_solve(a: &Matrix, b: &Matrix, rel_cutoff: f64) -> Result<Matrix> {
    let svd = Svd::new(a)?;
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_cutoff * smax;
    let utb = svd.u.transpose() * b;
    let mut scaled = utb;
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        let s = svd.s[i];
        if s > cutoff && s > 0.0 {
            row /= s;
        } else {
            row.fill(0.0);
        }
    }
    Ok(svd.v_t.transpose() * scaled)
}

pub(crate) fn frob_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}
