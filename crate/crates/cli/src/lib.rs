//! Pipeline plumbing behind the `p2p-der` binary.

pub mod config;
pub mod grid;
pub mod manifest;
pub mod pipeline;
