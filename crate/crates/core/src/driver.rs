//! Sliding-window unmixing of a hyperspectral cube.
//!
//! Every pixel is unmixed together with its `kappa x kappa` neighbourhood and
//! only the central abundance column is kept.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix};
use crate::prox::project_nonneg;
use crate::solver::{solve, SolverConfig, SolverKind, Termination};
use crate::weights::ls_estimate;

/// Image cube with one spectrum per pixel, stored as an `L x (height * width)`
/// matrix whose columns follow row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    data: Matrix,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, data: Matrix) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("cube spatial size", "nonzero", format!("{height}x{width}")));
        }
        if data.ncols() != height * width {
            return Err(Error::dim("cube pixel count", height * width, data.ncols()));
        }
        ensure_finite(&data, "cube spectra")?;
        Ok(HsiCube { height, width, data })
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &Matrix {
        &self.data
    }

    pub fn spectrum(&self, row: usize, col: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.column(row * self.width + col)
    }
}

/// Per-pixel abundance vectors, same layout as [`HsiCube`].
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceCube {
    height: usize,
    width: usize,
    data: Matrix,
}

impl AbundanceCube {
    pub fn new(height: usize, width: usize, data: Matrix) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("abundance spatial size", "nonzero", format!("{height}x{width}")));
        }
        if data.ncols() != height * width {
            return Err(Error::dim("abundance pixel count", height * width, data.ncols()));
        }
        ensure_finite(&data, "abundances")?;
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("abundances must be nonnegative".into()));
        }
        Ok(AbundanceCube { height, width, data })
    }

    pub fn endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &Matrix {
        &self.data
    }

    pub fn abundance(&self, row: usize, col: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.column(row * self.width + col)
    }

    /// Columns of the pixels inside `rows x cols`, row-major.
    pub fn region(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Matrix {
        let idx: Vec<usize> = rows
            .flat_map(|r| cols.clone().map(move |c| r * self.width + c))
            .collect();
        self.data.select_columns(idx.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Reflect about the edge pixel without repeating it.
    #[default]
    Mirror,
    /// Repeat the edge pixel.
    Clamp,
    /// Only unmix pixels whose full window lies inside the image.
    Shrink,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Mirror => "mirror",
            Boundary::Clamp => "clamp",
            Boundary::Shrink => "shrink",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(Boundary::Mirror),
            "clamp" => Ok(Boundary::Clamp),
            "shrink" => Ok(Boundary::Shrink),
            other => Err(Error::Config(format!("unknown boundary mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kappa: usize,
    pub boundary: Boundary,
}

impl WindowSpec {
    pub fn new(kappa: usize, boundary: Boundary) -> Result<Self> {
        let spec = WindowSpec { kappa, boundary };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 || self.kappa % 2 == 0 {
            return Err(Error::Config(format!("kappa must be odd, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.kappa * self.kappa
    }

    pub fn half(&self) -> usize {
        self.kappa / 2
    }

    /// Column of the central pixel inside a window block.
    pub fn center_column(&self) -> usize {
        (self.pixels() - 1) / 2
    }
}

/// Maps a possibly out-of-range coordinate back into `0..len`.
fn resolve(pos: isize, len: usize, boundary: Boundary) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&pos) {
        return Some(pos as usize);
    }
    match boundary {
        Boundary::Shrink => None,
        Boundary::Clamp => Some(pos.clamp(0, n - 1) as usize),
        Boundary::Mirror => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let m = pos.rem_euclid(period);
            Some(if m < n { m } else { period - m } as usize)
        }
    }
}

/// `L x kappa^2` block around `(row, col)`, columns in row-major window order.
pub fn extract_window(cube: &HsiCube, row: usize, col: usize, spec: &WindowSpec) -> Result<Matrix> {
    spec.validate()?;
    if row >= cube.height || col >= cube.width {
        return Err(Error::Range(format!(
            "window center ({row}, {col}) outside {}x{} image",
            cube.height, cube.width
        )));
    }
    let half = spec.half() as isize;
    let mut idx = Vec::with_capacity(spec.pixels());
    for dr in -half..=half {
        for dc in -half..=half {
            let r = resolve(row as isize + dr, cube.height, spec.boundary);
            let c = resolve(col as isize + dc, cube.width, spec.boundary);
            match (r, c) {
                (Some(r), Some(c)) => idx.push(r * cube.width + c),
                _ => {
                    return Err(Error::Range(format!(
                        "window around ({row}, {col}) leaves the image in shrink mode"
                    )))
                }
            }
        }
    }
    Ok(cube.data.select_columns(idx.iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDiagnostic {
    pub row: usize,
    pub col: usize,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub failed: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct UnmixOutput {
    pub abundances: AbundanceCube,
    pub diagnostics: Vec<PixelDiagnostic>,
    /// Offset of the output grid inside the input image (nonzero for shrink).
    pub origin: (usize, usize),
}

impl UnmixOutput {
    pub fn failures(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.failed).count()
    }
}

/// Unmixes every pixel of `cube` with `solver`.
///
/// Windows are solved independently, on `threads` workers when given and on
/// the global rayon pool otherwise; the result does not depend on the worker
/// count. A failing window is recorded in the diagnostics and its pixel gets
/// the clipped least-squares abundance instead.
pub fn unmix_cube(
    cube: &HsiCube,
    dict: &Matrix,
    spec: &WindowSpec,
    cfg: &SolverConfig,
    solver: SolverKind,
    threads: Option<usize>,
) -> Result<UnmixOutput> {
    spec.validate()?;
    cfg.validate()?;
    ensure_finite(dict, "dictionary")?;
    if dict.nrows() != cube.bands() {
        return Err(Error::dim("dictionary rows vs cube bands", cube.bands(), dict.nrows()));
    }
    if dict.iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("dictionary entries must be nonnegative".into()));
    }

    let (r0, c0, out_h, out_w) = match spec.boundary {
        Boundary::Shrink => {
            let h = spec.half();
            if cube.height <= 2 * h || cube.width <= 2 * h {
                return Err(Error::Range(format!(
                    "{}x{} image has no interior for kappa {}",
                    cube.height, cube.width, spec.kappa
                )));
            }
            (h, h, cube.height - 2 * h, cube.width - 2 * h)
        }
        _ => (0, 0, cube.height, cube.width),
    };

    let center = spec.center_column();
    let n = dict.ncols();
    let solve_pixel = |i: usize| -> (Vec<f64>, PixelDiagnostic) {
        let (row, col) = (r0 + i / out_w, c0 + i % out_w);
        let result = extract_window(cube, row, col, spec).and_then(|y| solve(solver, dict, &y, cfg));
        match result {
            Ok(rep) => (
                rep.w_hat.column(center).iter().copied().collect(),
                PixelDiagnostic {
                    row,
                    col,
                    iterations: rep.iterations,
                    termination: Some(rep.termination),
                    failed: false,
                    message: None,
                },
            ),
            Err(err) => {
                let y = Matrix::from_column_slice(cube.bands(), 1, cube.spectrum(row, col).as_slice());
                let fallback = ls_estimate(dict, &y)
                    .map(|w| project_nonneg(&w).iter().copied().collect())
                    .unwrap_or_else(|_| vec![0.0; n]);
                (
                    fallback,
                    PixelDiagnostic {
                        row,
                        col,
                        iterations: 0,
                        termination: None,
                        failed: true,
                        message: Some(err.to_string()),
                    },
                )
            }
        }
    };

    let count = out_h * out_w;
    let results: Vec<(Vec<f64>, PixelDiagnostic)> = match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..count).into_par_iter().map(solve_pixel).collect())
        }
        None => (0..count).into_par_iter().map(solve_pixel).collect(),
    };

    let mut data = Matrix::zeros(n, count);
    let mut diagnostics = Vec::with_capacity(count);
    for (i, (column, diag)) in results.into_iter().enumerate() {
        data.column_mut(i).copy_from_slice(&column);
        diagnostics.push(diag);
    }
    Ok(UnmixOutput {
        abundances: AbundanceCube::new(out_h, out_w, data)?,
        diagnostics,
        origin: (r0, c0),
    })
}
