//! Adaptively compressed exchange (ACE) fixed-point iteration and the
//! tools used to verify its convergence behavior on dense test problems.

pub mod error;
pub mod field;
pub mod linalg;
pub mod analysis;
pub mod compression;
pub mod exec;
pub mod iteration;
pub mod mtx;
pub mod problems;
pub mod verify;

pub use error::{AceError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use field::{Field, FieldTag, C64};
