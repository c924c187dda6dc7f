pub mod channel;
pub mod cli;
pub mod error;
pub mod field;
pub mod harness;
pub mod lattice;
pub mod protocol;
pub mod rate;
pub mod seed;

pub use error::{Error, Result};
