//! Binary field snapshots (`FLD1`) and medium path dumps (`OUP1`).
//!
//! Both formats are little-endian throughout.
//!
//! `FLD1`: magic `FLD1`, `n` as `u64`, `extent` as `f64`, a one-byte space tag
//! (0 physical, 1 spectral), `z` as `f64`, then `n²` complex samples as
//! `(re, im)` pairs of `f64` in the grid's flat order (row `i2`, column `i1`).
//!
//! `OUP1`: magic `OUP1`, version as `u32`, `n_steps` as `u64`, `z_step` as
//! `f64`, then the `n_steps + 1` medium values and the `n_steps` Wiener
//! increments as `f64`.

use std::io::{self, Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use paraxial_core::grid::{Space, SpectralField, TransverseGrid};
use paraxial_core::noise::OuPath;

pub const FIELD_MAGIC: [u8; 4] = *b"FLD1";
pub const PATH_MAGIC: [u8; 4] = *b"OUP1";
pub const PATH_VERSION: u32 = 1;
/// Largest grid size accepted from a file header.
pub const MAX_FIELD_N: u64 = 1 << 14;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("unknown space tag {0}")]
    SpaceTag(u8),
    #[error("invalid header: {0}")]
    Header(String),
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn check_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<(), FormatError> {
    let found = read_array::<4>(r)?;
    if found != expected {
        return Err(FormatError::Magic { expected, found });
    }
    Ok(())
}

/// A field snapshot as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub z: f64,
    pub field: SpectralField,
}

pub fn write_field(w: &mut impl Write, field: &SpectralField, z: f64) -> io::Result<()> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(29 + 16 * field.data().len());
    buf.extend_from_slice(&FIELD_MAGIC);
    buf.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    buf.extend_from_slice(&grid.extent().to_le_bytes());
    buf.push(match field.space() {
        Space::Physical => 0,
        Space::Spectral => 1,
    });
    buf.extend_from_slice(&z.to_le_bytes());
    for c in field.data() {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads one snapshot. `grid` is reused when it matches the header, so fields
/// read against a shared grid stay comparable.
pub fn read_field(r: &mut impl Read, grid: Option<&Arc<TransverseGrid>>) -> Result<FieldRecord, FormatError> {
    check_magic(r, FIELD_MAGIC)?;
    let n = read_u64(r)?;
    let extent = read_f64(r)?;
    let space = match read_array::<1>(r)?[0] {
        0 => Space::Physical,
        1 => Space::Spectral,
        t => return Err(FormatError::SpaceTag(t)),
    };
    let z = read_f64(r)?;
    if n > MAX_FIELD_N {
        return Err(FormatError::Header(format!("grid size {n} exceeds {MAX_FIELD_N}")));
    }
    let n = n as usize;
    let grid = match grid {
        Some(g) if g.n() == n && g.extent().to_bits() == extent.to_bits() => g.clone(),
        _ => Arc::new(TransverseGrid::new(n, extent).map_err(|e| FormatError::Header(e.to_string()))?),
    };
    let mut data = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        data.push(Complex64::new(re, im));
    }
    let field = SpectralField::new(grid, data, space).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(FieldRecord { z, field })
}

/// A medium path as stored on disk; the stream identity is not part of the format.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub z_step: f64,
    pub values: Vec<f64>,
    pub w_increments: Vec<f64>,
}

pub fn write_path(w: &mut impl Write, path: &OuPath) -> io::Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * (path.values.len() + path.w_increments.len()));
    buf.extend_from_slice(&PATH_MAGIC);
    buf.extend_from_slice(&PATH_VERSION.to_le_bytes());
    buf.extend_from_slice(&(path.n_steps() as u64).to_le_bytes());
    buf.extend_from_slice(&path.z_step.to_le_bytes());
    for x in path.values.iter().chain(&path.w_increments) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_path(r: &mut impl Read) -> Result<PathRecord, FormatError> {
    check_magic(r, PATH_MAGIC)?;
    let version = u32::from_le_bytes(read_array(r)?);
    if version != PATH_VERSION {
        return Err(FormatError::Version(version));
    }
    let n = read_u64(r)?;
    let z_step = read_f64(r)?;
    let n = usize::try_from(n).map_err(|_| FormatError::Header(format!("step count {n} too large")))?;
    let values = (0..=n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    let w_increments = (0..n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    Ok(PathRecord { z_step, values, w_increments })
}
