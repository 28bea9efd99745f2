//! Voxel attribution, RoI-importance aggregation, attribution quality metrics
//! and outlier mining for 3D semantic segmentation models.

pub mod aggregate;
pub mod attribution;
pub mod container;
pub mod metrics;
pub mod model;
pub mod outlier;
pub mod protocol;
pub mod rng;
pub mod synthetic;
pub mod volume;

pub use attribution::{AttributionField, Method, MethodKind};
pub use model::{SegmentationModel, SyntheticModel, SyntheticModelSpec};
pub use rng::RngSpec;
pub use volume::{ClassMask, Dims, LogitField, Volume};
