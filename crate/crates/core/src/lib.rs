//! Deterministic simulator for asynchronous federated edge learning with
//! node-side Gaussian perturbation, top-k sparsification, label-flip
//! detection and gradient-inversion measurements.
//!
//! The building blocks are usable on their own ([`learner`], [`privacy`],
//! [`detection`], [`attacks`]); [`asyncsim::run_simulation`] wires them into
//! an event-driven run, and [`experiment`] bundles the named presets that the
//! `asyncfl` binary exposes.

pub mod analysis;
pub mod asyncsim;
pub mod attacks;
pub mod data;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod params;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
pub use params::{Layout, ParamVector};
