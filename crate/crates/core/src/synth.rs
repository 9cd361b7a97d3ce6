//! Synthetic assets: endmember dictionaries, jointly sparse low-rank
//! abundance matrices, white or band-correlated noise, and the 4x4 block test
//! image.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::driver::{AbundanceCube, HsiCube};
use crate::error::{Error, Result};
use crate::linalg::{frob_sq, singular_values, Matrix};
use crate::seed;

/// A spectral library: one column per material, one row per band.
#[derive(Debug, Clone)]
pub struct SpectralLibrary {
    pub names: Vec<String>,
    pub spectra: Matrix,
}

impl SpectralLibrary {
    /// Reads a CSV with a header row of material names and one row per band.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (names, spectra) = crate::io::read_matrix_csv(path)?;
        if spectra.iter().any(|&v| v < 0.0) {
            return Err(Error::format(path, "library reflectances must be nonnegative"));
        }
        Ok(SpectralLibrary { names, spectra })
    }

    pub fn bands(&self) -> usize {
        self.spectra.nrows()
    }

    pub fn materials(&self) -> usize {
        self.spectra.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionarySource {
    /// Random columns of a CSV spectral library.
    LibraryCsv(PathBuf),
    /// Smooth nonnegative spectra built from a few Gaussian bumps each.
    SyntheticSmooth,
}

/// An `l x n` nonnegative dictionary.
///
/// With a library the band count is taken from the file and must equal `l`;
/// pass `l = 0` to accept whatever the file has.
pub fn sample_dictionary(n: usize, l: usize, source: &DictionarySource, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Config("dictionary needs at least one endmember".into()));
    }
    let mut rng = seed::rng(seed);
    match source {
        DictionarySource::LibraryCsv(path) => {
            let lib = SpectralLibrary::read_csv(path)?;
            if l != 0 && lib.bands() != l {
                return Err(Error::dim("library band count", l, lib.bands()));
            }
            if n > lib.materials() {
                return Err(Error::format(
                    path,
                    format!("library has {} materials, {n} requested", lib.materials()),
                ));
            }
            let picks = index::sample(&mut rng, lib.materials(), n);
            Ok(lib.spectra.select_columns(picks.iter().collect::<Vec<_>>().iter()))
        }
        DictionarySource::SyntheticSmooth => {
            if l == 0 {
                return Err(Error::Config("synthetic dictionary needs at least one band".into()));
            }
            let lf = l as f64;
            let mut phi = Matrix::zeros(l, n);
            for j in 0..n {
                let base = rng.random_range(0.02..0.15);
                let bumps = rng.random_range(5..=12);
                let params: Vec<(f64, f64, f64)> = (0..bumps)
                    .map(|_| {
                        (
                            rng.random_range(-0.1 * lf..1.1 * lf),
                            rng.random_range(0.005 * lf..0.03 * lf),
                            rng.random_range(0.05..0.6),
                        )
                    })
                    .collect();
                for b in 0..l {
                    let x = b as f64;
                    phi[(b, j)] = base
                        + params
                            .iter()
                            .map(|&(c, s, a)| a * (-(x - c).powi(2) / (2.0 * s * s)).exp())
                            .sum::<f64>();
                }
            }
            Ok(phi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpLrSpec {
    /// Endmembers (rows).
    pub n: usize,
    /// Pixels (columns).
    pub k: usize,
    pub rank: usize,
    /// Fraction of nonzero entries, realised as a shared row support.
    pub sparsity_level: f64,
    pub seed: u64,
}

impl SpLrSpec {
    /// Number of nonzero rows: `ceil(sparsity_level * n)`.
    pub fn support_size(&self) -> usize {
        // guard against 0.2 * 50 = 10.000000000000002
        ((self.sparsity_level * self.n as f64) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::Config("abundance matrix needs n, k >= 1".into()));
        }
        if !(self.sparsity_level > 0.0 && self.sparsity_level <= 1.0) {
            return Err(Error::Config(format!(
                "sparsity level must lie in (0, 1], got {}",
                self.sparsity_level
            )));
        }
        if self.rank == 0 || self.rank > self.n.min(self.k) {
            return Err(Error::Config(format!(
                "rank {} outside 1..={}",
                self.rank,
                self.n.min(self.k)
            )));
        }
        if self.support_size() < self.rank {
            return Err(Error::Config(format!(
                "support of {} rows cannot carry rank {}",
                self.support_size(),
                self.rank
            )));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 100;
const RANK_TOL: f64 = 1e-6;

/// Nonnegative `n x k` matrix of exact rank `spec.rank` whose nonzeros occupy
/// a random set of `support_size()` rows.
pub fn sample_splr_abundance(spec: &SpLrSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let s = spec.support_size();
    for _ in 0..MAX_ATTEMPTS {
        let support = index::sample(&mut rng, spec.n, s).into_vec();
        let mut basis = Matrix::zeros(spec.n, spec.rank);
        for &row in &support {
            for c in 0..spec.rank {
                basis[(row, c)] = rng.random::<f64>();
            }
        }
        let coeffs = Matrix::from_fn(spec.rank, spec.k, |_, _| rng.random::<f64>());
        let w = basis * coeffs;

        let sv = singular_values(&w)?;
        let ok_rank = sv[0] > 0.0 && sv[spec.rank - 1] / sv[0] > RANK_TOL;
        let nonzero_rows = (0..spec.n).filter(|&i| w.row(i).iter().any(|&v| v != 0.0)).count();
        if ok_rank && nonzero_rows.abs_diff(s) <= 1 {
            return Ok(w);
        }
    }
    Err(Error::Generation(format!(
        "no rank-{} matrix with {} support rows after {MAX_ATTEMPTS} attempts",
        spec.rank, s
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    /// AR(1) along the band axis.
    Colored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Target SNR in dB; `f64::INFINITY` means no noise.
    pub snr_db: f64,
    pub kind: NoiseKind,
    pub ar_coefficient: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn white(snr_db: f64, seed: u64) -> Self {
        NoiseSpec {
            snr_db,
            kind: NoiseKind::White,
            ar_coefficient: 0.9,
            seed,
        }
    }

    pub fn colored(snr_db: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Colored,
            ..NoiseSpec::white(snr_db, seed)
        }
    }
}

/// Noise matrix `E` shaped like `clean` and scaled so that
/// `10 log10(||clean||^2 / ||E||^2) = snr_db`.
pub fn sample_noise(clean: &Matrix, spec: &NoiseSpec) -> Result<Matrix> {
    let (l, k) = clean.shape();
    if spec.snr_db == f64::INFINITY {
        return Ok(Matrix::zeros(l, k));
    }
    if !spec.snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite or +inf, got {}", spec.snr_db)));
    }
    let energy = frob_sq(clean);
    if energy == 0.0 {
        return Err(Error::Domain("cannot set an SNR against an all-zero signal".into()));
    }
    let mut rng = seed::rng(spec.seed);
    let mut e = Matrix::zeros(l, k);
    match spec.kind {
        NoiseKind::White => {
            e.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        }
        NoiseKind::Colored => {
            let rho = spec.ar_coefficient;
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Config(format!("AR coefficient must lie in [0, 1), got {rho}")));
            }
            let innov = (1.0 - rho * rho).sqrt();
            for j in 0..k {
                let mut prev: f64 = StandardNormal.sample(&mut rng);
                e[(0, j)] = prev;
                for b in 1..l {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    prev = rho * prev + innov * z;
                    e[(b, j)] = prev;
                }
            }
        }
    }
    let target = energy / 10f64.powf(spec.snr_db / 10.0);
    let scale = (target / frob_sq(&e)).sqrt();
    e *= scale;
    Ok(e)
}

/// `clean + E` with `E` from [`sample_noise`].
pub fn add_noise(clean: &Matrix, spec: &NoiseSpec) -> Result<Matrix> {
    Ok(clean + sample_noise(clean, spec)?)
}

pub const BLOCK_SIZE: usize = 10;
pub const BLOCK_GRID: usize = 4;
pub const BLOCK_IMAGE_SNR_DB: f64 = 30.0;

/// `(sparsity %, rank)` per block, indexed `[block_row][block_col]`.
pub const BLOCK_LAYOUT: [[(u32, usize); 4]; 4] = [
    [(4, 1), (8, 2), (12, 3), (16, 4)],
    [(100, 1), (100, 2), (100, 3), (100, 4)],
    [(4, 2), (8, 2), (12, 2), (16, 2)],
    [(4, 3), (8, 3), (12, 3), (16, 3)],
];

/// The 40 x 40 test image: 16 blocks of 10 x 10 pixels, each block's
/// abundances drawn with the `(sparsity, rank)` of [`BLOCK_LAYOUT`], mixed
/// through `dict` and corrupted by white noise at 30 dB.
pub fn build_block_image(dict: &Matrix, seed: u64) -> Result<(HsiCube, AbundanceCube)> {
    let n = dict.ncols();
    let side = BLOCK_SIZE * BLOCK_GRID;
    let mut truth = Matrix::zeros(n, side * side);
    for (br, row) in BLOCK_LAYOUT.iter().enumerate() {
        for (bc, &(pct, rank)) in row.iter().enumerate() {
            let spec = SpLrSpec {
                n,
                k: BLOCK_SIZE * BLOCK_SIZE,
                rank,
                sparsity_level: pct as f64 / 100.0,
                seed: seed::derive(seed, &[br as u64, bc as u64]),
            };
            let w = sample_splr_abundance(&spec)?;
            for i in 0..BLOCK_SIZE {
                for j in 0..BLOCK_SIZE {
                    let r = br * BLOCK_SIZE + i;
                    let c = bc * BLOCK_SIZE + j;
                    truth.set_column(r * side + c, &w.column(i * BLOCK_SIZE + j));
                }
            }
        }
    }
    let clean = dict * &truth;
    let noisy = add_noise(&clean, &NoiseSpec::white(BLOCK_IMAGE_SNR_DB, seed::derive(seed, &[99])))?;
    Ok((HsiCube::new(side, side, noisy)?, AbundanceCube::new(side, side, truth)?))
}
