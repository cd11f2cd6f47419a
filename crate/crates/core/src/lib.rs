//! Dataset cartography and FTFT-style fine-tuning at desk scale.
//!
//! * [`dynamics`]: training-dynamics records and the `ftft-dyn-1` format.
//! * [`cartography`]: data maps and subset selection.
//! * [`transfer`]: overlap, easy-ratio and trajectory analysis across maps.
//! * [`cost`]: relative FLOPs accounting.
//! * [`toy`]: synthetic data and toy trainers.
//! * [`pipeline`]: ERM / cartography / FTFT pipelines and benchmark bundles.

pub mod cartography;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod fmt;
pub mod pipeline;
pub mod plot;
pub mod toy;
pub mod transfer;

pub use cartography::{categorize, compute_stats, sel_count, select_subset, DataMap, InstanceStats, SubsetKind};
pub use dynamics::{parse_dynamics, write_dynamics, InstanceId, InstanceRecord, TrainingDynamics};
pub use error::{Error, Result};
