//! Wind power forecasting on a grid-space embedding of a wind farm.
//!
//! Turbines are embedded into the smallest grid induced by their unique
//! latitudes and longitudes ([`grid`]); per-timestamp telemetry becomes a
//! scene on that grid, and stacks of consecutive scenes form the
//! multi-channel inputs ([`scene`]) for two convolutional forecasters
//! ([`models`]) built on a small from-scratch network kernel ([`nn`]).
//! Per-turbine kNN, SVR and persistence baselines live in [`baselines`],
//! metrics and report tables in [`eval`], and [`experiment`] wires the whole
//! comparison together.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
