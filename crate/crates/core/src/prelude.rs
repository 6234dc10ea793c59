//! Crate-internal imports shared by every module.

#[cfg(not(feature = "std"))]
pub(crate) use num_traits::Float;

pub(crate) use alloc::{format, string::String, string::ToString, vec, vec::Vec};
