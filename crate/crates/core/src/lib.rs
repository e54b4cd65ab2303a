pub mod adoption;
pub mod dispatch;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod localness;
pub mod market;
pub mod savings;
pub mod simplex;
pub mod stakeholder;
pub mod synth;

pub use error::{Error, Result};
