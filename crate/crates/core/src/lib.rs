//! Ground-to-satellite 3-DoF pose refinement.
//!
//! A vehicle carrying one or more calibrated ground cameras is localized on
//! a north-up satellite tile. Sparse keypoints are detected on the ground
//! region of each camera, lifted onto the ground plane, and their features
//! are aligned against the satellite feature map with a damped
//! Gauss-Newton (Levenberg-Marquardt) loop that walks a feature pyramid from
//! the coarsest to the finest level.
//!
//! Module map:
//!
//! - [`geometry`]: poses, camera models, ground lifting, satellite projection
//! - [`embedding`]: heading/distance/height maps appended to images
//! - [`pyramid`]: feature/confidence pyramids, sub-pixel lookup, file IO,
//!   and a deterministic hand-crafted extractor
//! - [`vokd`]: confidence fusion and grid-NMS keypoint detection
//! - [`fusion`]: multi-camera keypoint weight/feature selection
//! - [`optimizer`]: residual systems, robust weighting, LM and losses
//! - [`harness`]: synthetic scenes, Monte Carlo evaluation, metrics
//! - [`cli`]: the `satloc` command-line front end

pub mod cli;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod optimizer;
pub mod pyramid;
pub mod vokd;

pub use error::{Error, Result};
pub use geometry::{
    Anchor, Camera, CameraExtrinsics, CameraIntrinsics, CameraRig, GroundPoint3D, Pose3DoF,
    SatelliteFrame,
};
pub use pyramid::{FeaturePyramid, Grid, PyramidLevel};
