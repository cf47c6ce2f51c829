//! A-free fields on discrete tori.
//!
//! Fields here satisfy a constant-coefficient differential constraint. The
//! modules build up from grid fields to the higher-integrability experiments
//! on constrained minimisers; [`experiment`] chains them into pipelines.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fft;
pub mod field;
pub mod par;

pub use error::{Error, Result};
pub use field::{Field, LevelSetStats, TorusGrid};
pub mod constraint;
pub mod samples;
pub mod maximal;
pub mod truncation;
pub mod holefill;
pub mod minimise;
pub mod extension;
pub mod experiment;
