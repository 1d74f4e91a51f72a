//! File formats, key handling, the alias store on disk, corpus and report
//! IO, evaluation harnesses and the `proxyprints` command line, built on
//! `proxyprints-core`.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod formats;
pub mod harness;
pub mod keys;
pub mod report;
pub mod store;
