pub mod debranges;
pub mod division;
pub mod dpp;
pub mod error;
pub mod grid;
pub mod integrable;
pub mod kernel;
pub mod linalg;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
