//! srlab-core: a numerical laboratory for sub-Riemannian geometry.
//!
//! The crate is organized around the control-theoretic pipeline for a
//! rank-m polynomial frame on R^n:
//!
//! - [`srgeom`]: polynomial vector-field frames, exact jets, Lie brackets
//!   and bracket-span rank reports.
//! - [`flow`]: piecewise-constant controls and RK4 integration of the
//!   horizontal trajectory together with its variational matrices.
//! - [`endpoint`]: the end-point map, the energy, and their first and
//!   second differentials in discretized form.
//! - [`extremal`]: Hamiltonian shooting, extremal reconstruction from a
//!   terminal covector, abnormal covector detection and Goh diagnostics.
//! - [`geodesic`]: multi-start constrained energy minimization, Lagrange
//!   multiplier extraction, the penalty functional with a barrier, and
//!   second-order certificates.
//! - [`nonsmooth`]: Dini derivatives, the 1-D dichotomy scan, support
//!   function checks, the comparison verifier and point classification.
//! - [`index`]: kernel bases, restricted quadratic forms, negative
//!   indices, oscillatory probes and the openness experiment.
//! - [`probe`]: the grid-sweep experiment harness with CSV/JSON reports.

pub mod endpoint;
pub mod extremal;
pub mod flow;
pub mod geodesic;
pub mod index;
pub mod nonsmooth;
pub mod numeric;
pub mod probe;
pub mod srgeom;

mod lbfgs;

use thiserror::Error;

/// Relative singular-value threshold shared by every numerical-rank
/// decision in the crate: values below `RANK_RTOL * max(sigma_max, 1)`
/// count as zero.
pub const RANK_RTOL: f64 = 1e-9;

/// Default tolerance on the normalized Goh residual.
pub const GOH_TOL: f64 = 1e-6;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("field index {index} out of range for frame with {rank} fields")]
    IndexOutOfRange { index: usize, rank: usize },
    #[error("frame fields are linearly dependent at the queried point")]
    DegenerateFrame,
    #[error("state norm exceeded {bound:e} at t={t}: trajectory left the chart")]
    BlowUp { t: f64, bound: f64 },
    #[error("non-finite state encountered at t={t}")]
    NonFinite { t: f64 },
    #[error("control has {got} segments, expected {expected}")]
    SegmentationMismatch { expected: usize, got: usize },
    #[error("zero covector is not a valid abnormal terminal condition")]
    ZeroCovector,
    #[error("no restart reached endpoint tolerance (best error {best:e})")]
    NoConvergence { best: f64 },
    #[error("multiplier extraction ambiguous: normal residual {residual:e} above tolerance and corank 0")]
    Ambiguous { residual: f64 },
    #[error("oscillation window [{t0}, {t1}] not contained in [0, 1]")]
    WindowOutOfRange { t0: f64, t1: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid frame definition: {0}")]
    InvalidFrame(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
