use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("amplitudes violate conjugation symmetry at mode {mode} (deviation {deviation:e})")]
    AsymmetricAmplitudes { mode: usize, deviation: f64 },

    /// The closed-form kernel has a pole inside the requested interval.
    #[error("quadratic kernel is singular at t = {t} for mode {mode}")]
    SingularKernel { mode: usize, t: f64 },

    #[error("quadratic kernel of mode {mode} has Re V = {re_v:e}; the Gaussian is not normalizable")]
    DegenerateKernel { mode: usize, re_v: f64 },

    #[error("numerical failure at step {step}: {reason}")]
    NumericalFailure { step: usize, reason: String },

    #[error("trajectory {trajectory} failed: {source}")]
    Trajectory {
        trajectory: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("noise-induced energy has imaginary part {imag:e} (real part {real:e})")]
    NonRealEnergy { real: f64, imag: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("density matrix lost positivity: min eigenvalue {min_eig:e} at t = {t} ({diagnosis})")]
    Positivity { t: f64, min_eig: f64, diagnosis: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Whether the error reports a numerical breakdown (NaN, singularity,
    /// positivity loss) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularKernel { .. }
            | Error::DegenerateKernel { .. }
            | Error::NumericalFailure { .. }
            | Error::NonRealEnergy { .. }
            | Error::Quadrature(_)
            | Error::Positivity { .. } => true,
            Error::Trajectory { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
