//! Scenario-driven front end: config parsing and the simulate / analyze /
//! design commands.

pub mod commands;
pub mod config;
