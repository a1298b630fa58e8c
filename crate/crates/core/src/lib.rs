//! Finite-time stability certification for fractional-power vector fields.

pub mod certify;
pub mod error;
pub mod exprparse;
pub mod polyalg;
pub mod sdpsolve;
pub mod simulate;
pub mod sosprog;
pub mod transform;

pub use error::{Error, ParseError, Result};
