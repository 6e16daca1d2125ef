//! Spatio-temporal polarimetric light transport.
//!
//! The crate covers the whole pipeline at desk scale: Stokes-Mueller algebra
//! ([`polarization`]), the dense 7D transport tensor ([`tensor`]), an analytic scene
//! simulator ([`scene`]), rotating-ellipsometry capture and per-pixel Mueller
//! reconstruction ([`ellipsometry`]), gradient-based learning of capture angles
//! ([`learning`]), Lu-Chipman decomposition ([`decomposition`]) and the PCA and
//! descattering analyses ([`analysis`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod decomposition;
pub mod ellipsometry;
pub mod error;
pub mod export;
pub mod learning;
pub mod polarization;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
