//! Time-inhomogeneous vector autoregression on multi-trial event panels.
//!
//! The crate covers the whole path from a long multichannel recording to a
//! selected model order:
//!
//! - [`simulation`] generates VAR series with injected Morlet-shaped events,
//! - [`detection`] finds events by zero-phase FIR bandpass filtering and
//!   thresholding,
//! - [`panel`] cuts peri-event windows into an `N × T × d` ensemble,
//! - [`estimation`] fits `(A_t, k_t, Σ_t)` at every time point across trials,
//! - [`order_selection`] scores candidate orders with the ensemble BIC.

pub mod detection;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod io;
mod linalg;
pub mod order_selection;
pub mod panel;
pub mod simulation;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{sym_log_det, EIGEN_FLOOR};
