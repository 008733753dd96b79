//! Pipeline orchestration around `refine-core`: config files, artifact
//! IO, the HTTP chat-completions transport, and the subcommand
//! implementations behind the `refine` binary.

pub mod commands;
pub mod config;
pub mod http;
pub mod io;
