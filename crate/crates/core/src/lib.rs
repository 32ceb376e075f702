//! Full-body locomotion reconstruction from a single inertial sensor.
//!
//! The pipeline pairs full-body motion with IMU readings, segments the
//! motion into the eight phases of the gait cycle, registers the segments of
//! every phase with dynamic time warping, and trains a two-level hidden
//! Markov model: phases at the top, left-to-right frame chains below, with
//! joint Gaussian states mapping sensor features to body features. At run
//! time the forward algorithm recognizes the phase, blends the most probable
//! chains and regresses the body pose from the sensor stream.
//!
//! Modules follow the data flow:
//!
//! * [`motion`]: skeletons, poses, clips, features, kinematics and file formats.
//! * [`synth`]: deterministic synthetic gait and IMU simulation.
//! * [`segmentation`]: contact-based gait phases and speed-based flight phases.
//! * [`registration`]: root canonicalization and dynamic time warping.
//! * [`hmm`]: Gaussian states, EM, the hierarchical model and the forward pass.
//! * [`train`]: the end-to-end training pipeline.
//! * [`reconstruction`]: the online reconstruction engine.
//! * [`eval`]: error metrics and latency benchmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod hmm;
pub mod motion;
pub mod reconstruction;
pub mod registration;
pub mod segmentation;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
