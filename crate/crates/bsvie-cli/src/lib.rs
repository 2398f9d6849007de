//! Library face of the batch front-end: config parsing and building, the
//! file formats, the pipelines, and the acceptance suite (shared between the
//! binary and the integration tests).

pub mod acceptance;
pub mod config;
pub mod io;
pub mod pipeline;
