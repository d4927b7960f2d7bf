#![allow(clippy::needless_range_loop)]

pub mod boundary;
pub mod cli;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod guidance;
pub mod io;
pub mod ipc;
pub mod losses;
pub mod raster;
pub mod scene;
pub mod scheduler;
pub mod trainer;

pub use error::{Error, Result};
pub use raster::Raster;
