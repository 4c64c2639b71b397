//! Command-line harness for the CDPO learners: data generation, training,
//! evaluation, benchmark grids, theory checks and plots.

pub mod commands;
pub mod config;
pub mod plot;
pub mod record;
