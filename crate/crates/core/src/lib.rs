//! Frequency-bin entanglement toolkit.
//!
//! Models a biphoton frequency comb on a discrete frequency lattice, pushes it
//! through pulse-shaper masks and a single-tone electro-optic phase modulator,
//! turns the result into coincidence counts, and estimates entanglement from
//! count tables (maximum-likelihood tomography with negativity, and the
//! two-qutrit CGLMP parameter).
//!
//! The [`scenario`] module binds everything into configuration-driven runs used
//! by the `freqbin` command-line tool.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bell;
pub mod bessel;
pub mod detection;
mod error;
pub mod fixtures;
pub mod lattice;
pub mod optics;
pub mod output;
pub mod scenario;
pub mod tomography;

pub use error::{Error, Result};

pub use num_complex::Complex64;
