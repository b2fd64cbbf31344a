//! Pipeline stages behind the `i2p` command line. Each stage reads its
//! inputs from the run's output directory and writes its artifacts there.

mod config;
mod stages;

pub use config::{Mode, Paths, RunConfig};
pub use stages::*;
