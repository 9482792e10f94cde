//! Single-element lenses that refract two colours of light into one direction.
//!
//! The crate covers the refraction kernel, upper faces for a collimated beam, a Picard
//! solver for functional differential equations, the point-source lens built on it, and an
//! independent ray tracer used to check every design.

pub mod cli;
pub mod collimated;
pub mod error;
pub mod fde;
pub mod numerics;
pub mod pointsource;
pub mod raytrace;
pub mod refraction;

pub use error::{LensError, Result};

/// Full-precision, locale-free rendering used in every CSV export.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
