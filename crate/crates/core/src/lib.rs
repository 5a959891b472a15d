//! Silver-standard brain masks and skull-stripping evaluation.
//!
//! * [`volume`]: voxel grids, binary masks, NIfTI-1 I/O, plane slicing.
//! * [`fusion`]: binary STAPLE consensus, majority vote, thresholding.
//! * [`metrics`]: Dice, sensitivity, specificity, Hausdorff and mean
//!   symmetric surface distance.
//! * [`stats`]: paired t-tests and mean ± std comparison tables.
//! * [`pipeline`]: normalization, patch extraction, fold splits, external
//!   predictors, tri-planar fusion and largest-component filtering.

pub mod error;
pub mod fusion;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod stats;
pub mod sum;
pub mod volume;

pub use error::{Error, PredictorFailure, Result};
pub use volume::{BinaryMask, Grid, IntensityKind, PlaneAxis, Slice2D, VoxelVolume};
