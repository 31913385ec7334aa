//! Command-line front end for the `recurrent-forest` library.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 unreadable or
//! invalid input, 4 output not writable, then one code per stage:
//! transform 10, pseudo 11, fit 12, predict 13, evaluate 14,
//! importance 15, glm 16, simulate 17, report 18, manifest 19.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod ops;
pub mod pipeline;
pub mod stage;

pub use args::Cli;
pub use commands::run;
pub use stage::{Failure, Stage};
