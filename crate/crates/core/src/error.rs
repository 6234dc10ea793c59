use crate::prelude::*;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Laplacian density of |z|^{alpha} is singular at the origin; use disk_mass for integrated values")]
    SingularOrigin { alpha: f64 },

    #[error("quadrature did not converge (residual estimate {residual:e})")]
    Quadrature { residual: f64 },

    #[error("disk mass stays below 1 up to radius {max_radius:e}")]
    UnboundedRadius { max_radius: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric verdict is inconclusive (integrand exponent {exponent:.4}) and no closed form is available")]
    Inconclusive { exponent: f64 },

    #[error("disk D({center_re}+{center_im}i, {radius}) has zero mass")]
    DegenerateDisk { center_re: f64, center_im: f64, radius: f64 },

    #[error("moment integral for n = {n} does not decay; the weight grows too slowly for this rank")]
    TailDivergence { n: usize },

    #[error("|z| = {modulus} lies outside the kernel window of radius {radius} (diagonal error bound {bound:e})")]
    OutsideWindow { modulus: f64, radius: f64, bound: f64 },

    #[error("window of radius {window} needs rank above the cap {cap}; use a smaller window or raise the cap")]
    RankCap { cap: usize, window: f64 },

    #[error("eigenvalue {value:e} outside [-1e-6, 1+1e-6]: quadrature or truncation failure")]
    PsdViolation { value: f64 },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error(
        "rejection sampler stalled at step {step}: {attempts} attempts, envelope {envelope:e}, density {density:e}"
    )]
    EnvelopeFailure { step: usize, attempts: u64, envelope: f64, density: f64 },

    #[error("radial cumulative table is not monotone at node {index}")]
    TableNotMonotone { index: usize },

    #[error("point {re}+{im}i is not covered by the partition")]
    Coverage { re: f64, im: f64 },

    #[error("cells {0} and {1} are not disjoint")]
    NotDisjoint(String, String),

    #[error("eigensolver failed to converge")]
    Eigensolver,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("window error: {0}")]
    Window(String),
}

impl Error {
    /// True for failures of numerical routines, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::UnboundedRadius { .. }
                | Error::Inconclusive { .. }
                | Error::TailDivergence { .. }
                | Error::PsdViolation { .. }
                | Error::NotHermitian { .. }
                | Error::EnvelopeFailure { .. }
                | Error::TableNotMonotone { .. }
                | Error::Eigensolver
                | Error::DegenerateDisk { .. }
        )
    }
}
