//! Core algorithms for open-vocabulary 3D instance labeling with a
//! distilled point-feature student.
//!
//! The crate is `no_std` and only needs an allocator. It contains:
//!
//! - projection of instance points into posed views ([`geometry`]),
//! - visibility and pose-diversity view selection ([`view_select`]),
//! - density-guided completion of sparse projected masks ([`mask_complete`]),
//! - mask-pooled per-view embeddings ([`teacher`]),
//! - text-bank classification and multi-view voting ([`label_guide`]),
//! - the student adapter with hand-written gradients ([`student`]),
//! - instance segmentation metrics ([`eval`]).
//!
//! File formats, the synthetic scene generator and the command line live
//! in the `folk` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod label_guide;
pub mod mask;
pub mod mask_complete;
pub mod math;
pub mod scene;
pub mod student;
pub mod teacher;
pub mod view_select;

pub use embedding::Embedding;
pub use error::{CoreError, Result};
pub use mask::BitMask2D;
pub use math::Mat3;
pub use scene::{CameraView, DepthMap, FeatureMap, GroundTruthInstance, InstanceProposal, Scene};
