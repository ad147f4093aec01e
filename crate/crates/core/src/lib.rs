//! Forecasting pipeline on regular lat-lon grids: data model and formats,
//! the windowed-attention meta model, resolution extrapolation by exact
//! space-to-batch decomposition, regional attention modules for transfer
//! learning, per-step low-rank adapters for rollouts, and verification.

pub mod climatology;
pub mod error;
pub mod format;
pub mod grid;
pub mod manifest;
pub mod normalize;
pub mod params;
pub mod state;
pub mod stations;
pub mod synth;
pub mod time;
pub mod variables;

pub use error::{GhrError, Result};

pub mod dataset;
pub mod lora;
pub mod model;
pub mod res;
pub mod rollout;
pub mod sime;
pub mod verify;
