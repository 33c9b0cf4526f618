pub mod class;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod nn;
pub mod infogan;
pub mod oversample;
pub mod pgm;
pub mod preprocess;
pub mod toy;

pub use class::{HeartbeatClass, CLASS_COUNT};
pub use dataset::{BeatDataset, BeatImage, Provenance, Split, SyntheticMethod};
pub use error::{Error, Result};
pub use ingest::EcgRecord;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
