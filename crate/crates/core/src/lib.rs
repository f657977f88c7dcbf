//! Dynamic lead field mappings for linear-Gaussian spatiotemporal source
//! models observed through a static MEG lead field.
//!
//! The crate builds the nearest-neighbor source dynamics, its steady state and
//! backward-in-time equivalent, stacks the projection blocks that map the
//! source vector at one instant onto a window of measurements, and measures
//! how the rank and per-source sensitivity of that mapping grow with the
//! window. Independent-in-time and space-time separable priors are available
//! as comparison models through the same [`mapping::MappingModel`] interface.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod mapping;
pub mod matrix_io;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod transition;

pub use error::{Error, Result};
pub use mapping::{DynamicMapping, MappingModel, ModelKind, ModelRegistry};
pub use model::{LeadField, NoiseModel, SensorArray, SourceSpace};
