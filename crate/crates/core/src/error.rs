use core::fmt;

use crate::grid::Space;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar input is outside the domain where the operation is defined.
    Domain { name: &'static str, value: f64, expected: &'static str },
    /// Grid sizes must be powers of two no smaller than 8.
    GridSize { n: usize },
    /// A field was passed in the wrong representation.
    WrongSpace { expected: Space, found: Space },
    /// Two fields or arrays that must agree in shape do not.
    Shape { expected: usize, found: usize },
    /// The operation needs strictly positive regularization.
    Unregularized { delta: f64 },
    /// The full-model step exceeds the stability bound of the fast scale.
    StepTooLarge { dz: f64, bound: f64 },
    /// The drift matrix has an eigenvalue with nonpositive real part.
    NotHurwitz { re: f64, im: f64 },
    /// Too few snapshots for a decay fit.
    TooFewSnapshots { found: usize, needed: usize },
    /// A snapshot is unusable for a decay fit (below the noise floor or non-finite).
    BelowNoiseFloor { index: usize, z: f64, modulus: f64, floor: f64 },
    /// Ensemble accumulators can only be merged along contiguous path-index ranges.
    NonContiguous { expected: u64, found: u64 },
    /// Sequences such as eps lists or snapshot positions must be strictly ordered.
    Ordering { name: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { name, value, expected } => {
                write!(f, "{name} = {value} is invalid: expected {expected}")
            }
            Error::GridSize { n } => {
                write!(f, "grid size {n} is invalid: expected a power of two >= 8")
            }
            Error::WrongSpace { expected, found } => {
                write!(f, "field is in {found} space but {expected} space is required")
            }
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected} samples, found {found}")
            }
            Error::Unregularized { delta } => write!(
                f,
                "delta = {delta} is not allowed: with delta <= 0 the fast (v, eta) subsystem \
                 has purely imaginary eigenvalues and its stationary Fokker-Planck equation \
                 has no integrable nontrivial solution"
            ),
            Error::StepTooLarge { dz, bound } => write!(
                f,
                "step dz = {dz} exceeds the stability bound {bound} (c_stab * eps^2 * min(l_c, |2 delta k - i| / 2k))"
            ),
            Error::NotHurwitz { re, im } => write!(
                f,
                "drift matrix has eigenvalue {re} + {im}i with nonpositive real part; no stationary law"
            ),
            Error::TooFewSnapshots { found, needed } => {
                write!(f, "decay fit needs at least {needed} snapshots, found {found}")
            }
            Error::BelowNoiseFloor { index, z, modulus, floor } => write!(
                f,
                "snapshot {index} (z = {z}): |E[u]| = {modulus} is not above the noise floor {floor}"
            ),
            Error::NonContiguous { expected, found } => write!(
                f,
                "accumulator merge out of order: expected path index {expected}, found {found}"
            ),
            Error::Ordering { name } => write!(f, "{name} must be strictly ordered"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { name, value, expected: "a finite value > 0" })
    }
}

pub(crate) fn nonnegative(name: &'static str, value: f64) -> Result<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { name, value, expected: "a finite value >= 0" })
    }
}
