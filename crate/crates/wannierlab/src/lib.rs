//! Smooth periodic Bloch frames and localized composite Wannier functions for
//! tight-binding models, plus their dressing by a weak magnetic field.

pub mod diagnostics;
pub mod error;
pub mod frame1d;
pub mod frame2d;
pub mod grid;
pub mod linalg;
pub mod magnetic;
pub mod model;
pub mod output;
pub mod par;
pub mod presets;
pub mod spectral;
pub mod tol;
pub mod transport;
pub mod unilog;
pub mod wannier;

pub use error::{Error, Result};
pub use grid::Grid1;
