//! Conditional distributional treatment-effect estimation with
//! doubly-robust training objectives for deep generative models.

pub mod autodiff;
pub mod data;
pub mod exec;
pub mod genmodels;
pub mod nn;
pub mod nullable;
pub mod rng;
pub mod losses;
pub mod nuisance;
pub mod orthocheck;
pub mod optim;
pub mod train;
pub mod eval;
