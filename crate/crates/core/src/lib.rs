pub mod bounds;
pub mod cli;
pub mod error;
pub mod fock;
pub mod search;
pub mod state;
pub mod yields;

pub use error::{Error, Result};
