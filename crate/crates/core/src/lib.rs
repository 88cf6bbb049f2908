pub mod config;
pub mod corpus;
pub mod data;
pub mod deepsets;
pub mod diagnostics;
pub mod error;
pub mod greedy;
pub mod harness;
pub mod nn;
pub mod par;
pub mod proxy;
pub mod seed;
pub mod stats;
pub mod utility;

pub use error::{Error, ErrorClass, Result};
