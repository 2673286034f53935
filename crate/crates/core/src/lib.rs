//! Object-mask pseudo-labels from frozen self-supervised patch features.
//!
//! The pipeline clusters a grid of patch features by repeatedly merging the
//! most similar adjacent regions, records the partition at several similarity
//! thresholds, cleans the resulting masks, merges them across thresholds and
//! finally sorts them into whole / part / subpart levels by how they cover
//! one another. Class-agnostic recall/precision evaluation and the numeric
//! schedules used when self-training a detector on the labels are included.

pub mod coco;
pub mod crf;
pub mod error;
pub mod eval;
pub mod feature_io;
pub mod hac;
pub mod hierarchy;
pub mod mask;
pub mod pipeline;
pub mod postprocess;
pub mod rle;
pub mod schedule;
pub mod viz;

pub use error::{Error, Result};
pub use feature_io::{cosine_similarity, load_feature_map, write_feature_map, FeatureMap, RgbImage};
pub use hac::{cluster, ClusterConfig, Connectivity, MergeSnapshot, Region};
pub use hierarchy::{build_forest, HierLevel, HierarchyForest};
pub use mask::{Bbox, Bitmap};
pub use rle::RleMask;
