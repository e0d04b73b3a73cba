//! Scenario runner for the varflow laboratory.

pub mod runner;
pub mod scenario;
