//! Domain types shared by every stage: skeletons, poses, clips, IMU samples
//! and the paired feature vectors the model is trained on.
//!
//! Conventions used throughout the crate: meters, seconds, radians, m/s²
//! and rad/s; right-handed, y-up world with the ground at `y = 0`; joint
//! rotations are local unit quaternions `(w, x, y, z)` with `w >= 0`.

pub mod features;
pub mod io;
pub mod kinematics;
pub mod rotation;
pub mod skeleton;

use std::sync::Arc;

pub use features::{
    extract_features, extract_features_multi, pose_from_feature, FeatureX, FeatureY, JointObservation,
};
pub use kinematics::{forward_kinematics, world_rotations};
pub use rotation::{Quat, Vec3};
pub use skeleton::{Joint, Skeleton};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPose {
    pub root_position: Vec3,
    pub joint_rotations: Vec<Quat>,
}

impl SkeletonPose {
    pub fn identity(joint_count: usize) -> Self {
        Self {
            root_position: Vec3::zeros(),
            joint_rotations: vec![Quat::identity(); joint_count],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_position.iter().all(|v| v.is_finite())
            && self
                .joint_rotations
                .iter()
                .all(|q| q.coords.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct MotionClip {
    pub skeleton: Arc<Skeleton>,
    pub fps: f64,
    pub frames: Vec<SkeletonPose>,
}

impl MotionClip {
    pub fn new(skeleton: Arc<Skeleton>, fps: f64, frames: Vec<SkeletonPose>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Data(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() {
            return Err(Error::Data("motion clip has no frames".into()));
        }
        let n = skeleton.len();
        if let Some(i) = frames.iter().position(|f| f.joint_rotations.len() != n) {
            return Err(Error::Data(format!(
                "frame {i} has {} rotations, skeleton has {n} joints",
                frames[i].joint_rotations.len()
            )));
        }
        Ok(Self {
            skeleton,
            fps,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// m/s²
    pub accel: Vec3,
    /// rad/s
    pub gyro: Vec3,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.accel.iter().chain(self.gyro.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub fps: f64,
    pub samples: Vec<ImuSample>,
}

impl ImuStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linearly interpolated copy with `len` samples spanning the same first
    /// and last instants. The nominal fps is kept: resampling forces a stream
    /// onto another clip's frame grid.
    pub fn resample(&self, len: usize) -> Result<ImuStream> {
        if self.is_empty() || len == 0 {
            return Err(Error::Data("cannot resample an empty IMU stream".into()));
        }
        let n = self.len();
        let samples = (0..len)
            .map(|t| {
                if len == 1 || n == 1 {
                    return self.samples[0];
                }
                let u = t as f64 * (n - 1) as f64 / (len - 1) as f64;
                let i = (u.floor() as usize).min(n - 2);
                let f = u - i as f64;
                let (a, b) = (&self.samples[i], &self.samples[i + 1]);
                ImuSample {
                    accel: a.accel * (1.0 - f) + b.accel * f,
                    gyro: a.gyro * (1.0 - f) + b.gyro * f,
                }
            })
            .collect();
        Ok(ImuStream {
            fps: self.fps,
            samples,
        })
    }
}

/// Zips several simultaneously recorded sensor streams into per-frame
/// sensor feature vectors.
pub fn sensor_features(streams: &[ImuStream]) -> Result<Vec<FeatureY>> {
    let Some(first) = streams.first() else {
        return Err(Error::Data("no IMU stream given".into()));
    };
    for s in streams {
        if s.len() != first.len() || s.fps != first.fps {
            return Err(Error::Alignment(format!(
                "IMU streams disagree: {} frames at {} fps vs {} frames at {} fps",
                first.len(),
                first.fps,
                s.len(),
                s.fps
            )));
        }
    }
    (0..first.len())
        .map(|t| {
            let sensors: Vec<ImuSample> = streams.iter().map(|s| s.samples[t]).collect();
            if sensors.iter().any(|s| !s.is_finite()) {
                return Err(Error::Data(format!("non-finite IMU sample at frame {t}")));
            }
            Ok(FeatureY { sensors })
        })
        .collect()
}
