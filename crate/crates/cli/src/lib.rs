//! Command-line front end and HTTP service for qdtile.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod prompt;
pub mod render;
pub mod service;
