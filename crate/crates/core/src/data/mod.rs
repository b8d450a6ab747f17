//! AIS ingestion, trajectory segmentation, windowing and per-sample
//! normalization.

mod ais;
mod norm;
mod segment;
pub mod store;
pub mod synth;
mod window;

pub use ais::{parse_ais_csv, parse_ais_reader, AisRecord, Dialect, ParseReport};
pub use norm::{denormalize, instance_normalize, NormStats, NORM_EPSILON};
pub use segment::{segment_trajectories, Trajectory};
pub use synth::{synth_trajectory, IntervalModel, SynthKind};
pub use window::{window_count, window_samples, TrajectorySample};

/// Number of auxiliary feature channels (SOG, COG).
pub const AUX_FEATURES: usize = 2;

/// Channels per record as seen by the model: lon, lat, SOG, COG.
pub const CHANNELS: usize = AUX_FEATURES + 2;
