//! Numerical toolkit for determinantal point processes induced by generalized
//! Fock spaces with radial doubling weights.
//!
//! The crate is `no_std` compatible (with `alloc`); the default `std` feature
//! only adds a concurrent memo for the ρ-function. File formats, the command
//! line driver and parallel sweeps live in the companion `fockdpp` crate.
//!
//! Modules, bottom-up:
//!
//! * [`quad`]: Gauss–Legendre rules and adaptive Gauss–Kronrod integration.
//! * [`weights`]: radial weights φ, the Laplacian mass ν = Δφ dm, the
//!   ρ-function and the separation verdicts built on ∫ρ^(−γ) dm.
//! * [`kernel`]: monomial moments, the truncated reproducing kernel, the
//!   normalized measure μ_φ and the metrics d_K and d_B (proxy).
//! * [`spectra`]: cells, Galerkin matrices of the restriction operator,
//!   Bernoulli eigenvalues and the derived cell probabilities.
//! * [`samplers`]: projection-DPP sampling, Poisson sampling and the Ginibre
//!   matrix oracle.
//! * [`analysis`]: gaps, cell counts, scaling regressions, Borel–Cantelli sums,
//!   upper density and the negative-association test.
#![cfg_attr(not(feature = "std"), no_std)]
// Quadrature tables keep their published digits; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod kernel;
pub mod quad;
pub mod samplers;
pub mod spectra;
pub mod weights;

mod prelude;

pub use error::{Error, Result};
pub use num_complex::Complex64;
