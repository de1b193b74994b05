//! Fine-grained evaluation of semantic segmentation.
//!
//! The pipeline runs from label maps to confusion counts
//! ([`confusion`]), then to dataset-level metrics ([`pixel`]), per-image
//! per-class scores with NULL handling ([`fine`]), approximate per-instance
//! scores ([`instance`]) and worst-case quantile means ([`worst_case`]).
//! [`analysis`] builds auditing views on top, [`jml`] holds the Jaccard
//! metric loss, and [`report`] wires everything into one deterministic
//! report driven by a [`types::DatasetManifest`].

pub mod analysis;
pub mod confusion;
pub mod error;
pub mod fine;
pub mod instance;
pub mod io;
pub mod jml;
pub mod pixel;
pub mod report;
pub mod types;
pub mod worst_case;

pub use error::{Error, Result};
pub use types::{ConfusionCell, DatasetManifest, InstanceMap, LabelMap, NullSemantics, Score, ScoreMatrix};
