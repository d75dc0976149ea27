//! Experiment runner for the eivuq library: configuration, per-experiment
//! drivers, reports, plots and the quick self-test.

pub mod config;
pub mod metrics;
pub mod operator;
pub mod pinn;
pub mod plot;
pub mod regression;
pub mod report;
pub mod runner;
pub mod selftest;
