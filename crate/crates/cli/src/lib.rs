//! Command-line tools and the live-trial HTTP service.

pub mod commands;
pub mod service;
pub mod store;
