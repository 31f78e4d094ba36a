//! Container IO, the synthetic scene generator, scene-level pipeline runs
//! and the `folk` command line, built on `folk-core`.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod pipeline;
pub mod synth;

pub use config::RunConfig;
