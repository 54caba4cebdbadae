//! Region-based semantic segmentation with end-to-end training.
//!
//! The pipeline classifies free-form multi-scale region proposals with a
//! small convolutional network, maps region scores to pixels through a
//! differentiable region-to-pixel layer (per-class max over covering
//! regions with exact subgradient routing), and trains against a balanced
//! pixel-level loss evaluated efficiently over a partition into
//! non-overlapping single-class cells. Free-form ROI pooling restricts
//! feature pooling to the cells inside each region mask and can be fused
//! with bounding-box context under tied or separate weights.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod netpbm;
pub mod ops;
pub mod overseg;
pub mod partition;
pub mod r2p;
pub mod regions;
pub mod roipool;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use losses::{ClassWeights, LossMode, LossResult, RegionLabel};
pub use models::{Architecture, FusionMode, ModelConfig, ModelState, SoftmaxOrder};
pub use partition::LossPartition;
pub use r2p::{PixelScoreMap, Prediction, RegionScores};
pub use regions::{BBox, LabelMap, RegionMask, RegionSet, RegionSource, VOID};
pub use roipool::{ConvRegionMask, RoiFeature};
pub use synth::SceneSpec;
pub use tensor::{Param, Tensor};
pub use trainer::{ProposalConfig, TrainConfig};
