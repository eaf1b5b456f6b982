//! Online linear-quadratic control against adversarially chosen quadratic
//! costs, with known dynamics.

pub mod acceptance;
pub mod error;
pub mod fll;
pub mod harness;
pub mod lds;
pub mod linalg;
pub mod ogd;
pub mod reset;
pub mod sdp;
pub mod stability;

pub use error::{LqcError, Result};
