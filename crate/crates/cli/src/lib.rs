//! Command line tools and HTTP service around `mmapf-core`.

pub mod cli;
pub mod service;
