//! Command-line entry points and the live annotation HTTP service.

pub mod commands;
pub mod config;
pub mod service;
