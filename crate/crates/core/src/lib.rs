//! Fisher information and resolution gain limits for fluctuation-based
//! super-resolution imaging of two point emitters.

pub mod blinking;
pub mod dual;
pub mod error;
pub mod fisher;
pub mod mc;
pub mod model;
pub mod optimize;
pub mod quad;
pub mod summary;

pub use error::{Error, Result};
