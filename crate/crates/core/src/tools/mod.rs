//! Configuration, artifact formats, fabrication and latency helpers.

pub mod config;
pub mod doe;
pub mod export;
pub mod latency;

pub use config::{apply_override, RunConfig, Split};
pub use doe::{solve_doe_heights, HeightMap};
pub use export::{export_heights, export_phase, import_phase, read_raw, write_raw, RawKind};
pub use latency::{latency, optical_metrics, OpticalMetrics, SPEED_OF_LIGHT};
