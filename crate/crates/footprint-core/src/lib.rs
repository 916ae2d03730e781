//! Building-footprint segmentation toolkit: raster tiling, seeded
//! augmentation, U-Net++ / DeepLabV3+ models over pluggable encoders,
//! region-overlap losses, IoU metrics, test-time augmentation, and a
//! reproducible training loop.

pub mod augment;
pub mod config;
pub mod error;
pub mod geom;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod raster;
pub mod toy;
pub mod trainer;
pub mod tta;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use losses::{LossConfig, LossKind};
pub use metrics::{Aggregation, ConfusionCounts, MetricReport};
pub use models::{build_model, EncoderSpec, DecoderSpec, SegmentationModel};
pub use raster::{DatasetManifest, NormalizationSpec, Split, TileSample};
pub use trainer::{evaluate, train, TrainConfig, TrainHistory};
pub use tta::{tta_predict, TtaPlan};
