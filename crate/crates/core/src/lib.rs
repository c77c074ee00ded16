//! Active Inference P300-speller simulation laboratory.
//!
//! - [`inference`]: categorical Bayesian filtering and expected-free-energy
//!   action selection.
//! - [`speller`]: the speller's states, flash groups, actions, likelihoods
//!   and preferences.
//! - [`subject`]: synthetic subjects and their simulated classifier outputs.
//! - [`controllers`]: Active Inference, fixed-repetition and threshold-stopping
//!   spelling strategies.
//! - [`metrics`]: accuracy, Wolpaw bit rate, idle statistics, bootstrap
//!   comparisons.
//! - [`experiment`]: seeded parallel experiments, result files and reports.

pub mod controllers;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod speller;
pub mod subject;
