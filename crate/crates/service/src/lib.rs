//! Command-line tool, HTTP service and label store around `weldqa-core`.

pub mod bench;
pub mod cli;
pub mod http;
pub mod registry;
pub mod store;
