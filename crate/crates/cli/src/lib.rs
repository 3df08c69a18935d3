//! The `paracode` command line and the review HTTP API it serves.

pub mod api;
pub mod commands;

pub use api::{router, AppState, Evaluator, TOKEN_ENV};
pub use commands::{run, Cli};
