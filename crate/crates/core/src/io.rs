//! File formats.
//!
//! Cubes use a small binary layout readable from any language:
//!
//! ```text
//! bytes 0..12   magic  "SPLR-HSCUBE\0" (spectra) or "SPLR-ABCUBE\0" (abundances)
//! bytes 12..16  u32 LE format version (1)
//! bytes 16..28  u32 LE depth (bands or endmembers), height, width
//! bytes 28..    depth*height*width f64 LE, band-major then row-major
//! ```
//!
//! Matrices (dictionaries, abundance tables) are CSV with a header row.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driver::{AbundanceCube, HsiCube};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const HSC_MAGIC: &[u8; 12] = b"SPLR-HSCUBE\0";
pub const ABC_MAGIC: &[u8; 12] = b"SPLR-ABCUBE\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn encode_cube(magic: &[u8; 12], data: &Matrix, height: usize, width: usize) -> Vec<u8> {
    let depth = data.nrows();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [depth, height, width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for b in 0..depth {
        for p in 0..height * width {
            out.extend_from_slice(&data[(b, p)].to_le_bytes());
        }
    }
    out
}

fn decode_cube(path: &Path, magic: &[u8; 12], bytes: &[u8]) -> Result<(Matrix, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than header"));
    }
    if &bytes[..12] != magic {
        return Err(Error::format(path, "bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(12);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (depth, height, width) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize);
    let count = depth
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if bytes.len() != HEADER_LEN + 8 * count {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", 8 * count, bytes.len() - HEADER_LEN),
        ));
    }
    let pixels = height * width;
    let mut data = Matrix::zeros(depth, pixels);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        data[(i / pixels, i % pixels)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok((data, height, width))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_hsc(path: &Path, cube: &HsiCube) -> Result<()> {
    atomic_write(path, &encode_cube(HSC_MAGIC, cube.pixels(), cube.height(), cube.width()))
}

pub fn read_hsc(path: &Path) -> Result<HsiCube> {
    let (data, h, w) = decode_cube(path, HSC_MAGIC, &read_bytes(path)?)?;
    HsiCube::new(h, w, data).map_err(|e| Error::format(path, e))
}

pub fn write_abc(path: &Path, cube: &AbundanceCube) -> Result<()> {
    atomic_write(path, &encode_cube(ABC_MAGIC, cube.pixels(), cube.height(), cube.width()))
}

pub fn read_abc(path: &Path) -> Result<AbundanceCube> {
    let (data, h, w) = decode_cube(path, ABC_MAGIC, &read_bytes(path)?)?;
    AbundanceCube::new(h, w, data).map_err(|e| Error::format(path, e))
}

/// Reads a headered numeric CSV into (column names, matrix).
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != names.len() {
            return Err(Error::format(path, format!("row {} has {} fields", rows + 1, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: `{field}` is not a number", rows + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {}: non-finite value", rows + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || names.is_empty() {
        return Err(Error::format(path, "no data rows"));
    }
    Ok((names.clone(), Matrix::from_row_slice(rows, names.len(), &values)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Serializes a matrix as CSV; default column names are `c0, c1, ...`.
pub fn matrix_csv_bytes(names: Option<&[String]>, m: &Matrix) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => (0..m.ncols()).map(|j| format!("c{j}")).collect(),
    };
    w.write_record(&header).expect("in-memory write");
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}"))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_matrix_csv(path: &Path, names: Option<&[String]>, m: &Matrix) -> Result<()> {
    atomic_write(path, &matrix_csv_bytes(names, m))
}

/// Serializes `rows` as CSV with a header from the struct field names.
pub fn records_csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Contract(format!("csv serialization: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Contract(format!("csv flush: {e}")))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

/// Everything needed to rerun a command: the command line, the resolved
/// configuration, seeds and the hashes of every input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub input_hashes: BTreeMap<String, String>,
    pub output_files: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub library_version: String,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config,
            seeds,
            input_hashes: BTreeMap::new(),
            output_files: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.input_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::Contract(format!("manifest serialization: {e}")))?;
        atomic_write(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e))
    }
}

fn now_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
