pub mod alphabet;
pub mod compute;
pub mod dataset;
pub mod dnd;
pub mod error;
pub mod eval;
pub mod par;
pub mod simulator;
pub mod train;

pub use error::{Error, Result};
