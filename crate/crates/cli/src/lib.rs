//! Command-line tools and the HTTP suggestion service.

pub mod commands;
pub mod service;
