//! Vertebral compression fracture detection in 3D volumes.
//!
//! A two-stage pipeline: a dual-pathway 3D CNN classifies every voxel as
//! background, normal-vertebra or fractured-vertebra, then the per-voxel
//! probabilities are aggregated into patient-level and vertebra-level
//! fracture decisions. A synthetic spine phantom generator provides data
//! with known ground truth so the whole pipeline is testable end to end.
//!
//! The `examples/` directory has one runnable example per capability; the
//! `vertefract` binary wires the same library calls into subcommands.

#![allow(clippy::needless_range_loop)] // axis loops index several fixed-size arrays at once

pub mod aggregate;
pub mod annotations;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod inference;
pub mod labels;
pub mod network;
mod nifti;
pub mod phantom;
pub mod plot;
pub mod rocs;
pub mod sampling;
pub mod seeds;
pub mod trainer;
pub mod volume;

pub use annotations::{AnnotationSet, Grade, VertebraAnnotation, VertebraName};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use evaluate::{make_folds, run_cross_validation, CvCase, CvConfig, CvReport};
pub use inference::{infer_volume, ProbabilityMap};
pub use labels::{binary_class_of, build_label_volume, LabelConfig, LabelVolume, VoxelClass};
pub use network::{ModelWeights, NetworkConfig, Variant};
pub use phantom::{generate_corpus, PhantomSpec};
pub use trainer::{train, TrainingCase, TrainingConfig};
pub use volume::{ResampleMode, Volume};
