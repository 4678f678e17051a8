pub mod charts;
pub mod error;
pub mod fixtures;
pub mod fv;
pub mod function_spaces;
pub mod grid;
pub mod halfspace;
pub mod neumann;
pub mod quad;
pub mod rough_stokes;
pub mod sharpness;
pub mod transforms;

pub use error::{Error, Result};
pub use grid::{GridField, Rank};
