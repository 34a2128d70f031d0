//! Library surface of the `lanet` binary, exposed so integration tests can
//! drive commands in-process.

pub mod commands;
pub mod config;
pub mod svg;
