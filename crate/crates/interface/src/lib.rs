//! Command line and HTTP session service over the fairguide pipeline.

pub mod cli;
pub mod config;
pub mod service;
