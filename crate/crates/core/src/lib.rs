//! Simulation and analysis of multi-mode opto-electro-mechanical RF-to-optical
//! transducers: a membrane with several mechanical modes capacitively coupled
//! to an LC resonator and read out optically.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod explore;
pub mod geometry;
pub mod io;
pub mod model;
pub mod par;
pub mod quad;
pub mod response;
pub mod verify;

pub use error::{OemtError, Result};
pub use model::{FrequencyGrid, Spectrum, TransducerModel};
