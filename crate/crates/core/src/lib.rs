//! Tracking-by-detection and class-agnostic evaluation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] boxes, run-length masks and IoU,
//! * [`detset`] COCO-style JSON data model,
//! * [`filters`] pseudo-label filtering (threshold / topK / NMS) and EMA updates,
//! * [`kalman`] constant-velocity Kalman filter in image space,
//! * [`assoc`] association costs and the Hungarian solver,
//! * [`tracker`] the online tracker and identity-switch counting,
//! * [`eval`] AR@K for frames and video tracks,
//! * [`sim`] deterministic synthetic sequences,
//! * [`cli`] the `owtrack` command line.

pub mod assoc;
pub mod cli;
pub mod detset;
pub mod eval;
pub mod filters;
pub mod geometry;
pub mod kalman;
pub mod rng;
pub mod sim;
pub mod tracker;

pub use assoc::{hungarian, Assignment, AssocWeights, CostMatrix};
pub use detset::{Detection, DetectionSet, GtAnnotation, GtDataset};
pub use eval::{ar_at_k, track_ar, EvalConfig, EvalResult};
pub use filters::FilterPolicy;
pub use geometry::{box_iou, mask_iou, BBox, RleMask};
pub use kalman::{KalmanFilter, KalmanState, Measurement};
pub use sim::{simulate, SequenceSpec};
pub use tracker::{Track, Tracker, TrackerConfig};
