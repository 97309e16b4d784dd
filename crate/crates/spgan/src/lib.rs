//! File formats, checkpoints, reports, rendering and the command layer for
//! `spgan-core`. The `spgan` binary is a thin clap front end over
//! [`commands`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod render;
pub mod report;

pub use error::{Error, Result};
