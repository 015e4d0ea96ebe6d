pub mod analysis;
pub mod base;
pub mod cli;
pub mod datastore;
pub mod envs;
pub mod error;
pub mod family;
pub mod numkit;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
