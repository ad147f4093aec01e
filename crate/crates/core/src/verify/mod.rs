//! Latitude-weighted verification scores, station matching and reports.

pub mod metrics;
pub mod report;
pub mod score;
pub mod station;
pub mod weights;

pub use metrics::{acc, activity, bias, rmse, AccScore, ActivityMode};
pub use report::{emit_report, ScoreRow};
pub use score::{LeadScores, ScoreAccumulator, ScoreReport};
pub use station::{nearest_cell, station_eval, ForecastRun, StationTable};
pub use weights::{latitude_weights, LatitudeWeights};
