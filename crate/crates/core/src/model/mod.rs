//! The windowed-attention meta model.

pub mod attention;
pub mod config;
pub mod meta;
pub mod params;
pub mod train;
pub mod window;

pub use attention::{AttentionProbe, ScoreRecord};
pub use config::{AttentionMode, ModelConfig, Window};
pub use meta::{embed, forward, forward_graph, Provenance, TokenSequence};
pub use params::{init_meta, Bindings, LowRank, MetaModelParams};
