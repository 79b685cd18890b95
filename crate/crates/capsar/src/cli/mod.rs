//! Command-line front end: the run-config file format and the operations
//! the `capsar` binary dispatches to.

pub mod commands;
pub mod config;

pub use commands::{cmd_detect, cmd_eval, cmd_gradcheck, cmd_train, load_sentences};
pub use config::{DataFormat, RunConfig};
