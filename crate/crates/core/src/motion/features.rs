//! Paired feature vectors: body features `x_t = [r_t, w_t, dtau_t]` and
//! sensor features `y_t = [e_t, w_t]` per sensor.

use super::rotation::{exp_map, log_map_near, yaw_of, yaw_rotation};
use super::{ImuSample, ImuStream, MotionClip, SkeletonPose, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureX {
    /// Exponential-map parameters of every joint's local rotation, radians.
    pub joint_rotation_params: Vec<Vec3>,
    /// Backward difference of the rotation parameters times fps, rad/s.
    pub joint_angular_velocity: Vec<Vec3>,
    /// `tau_{t-1} - tau_t`, meters.
    pub root_delta: Vec3,
}

impl FeatureX {
    pub fn zeros(joints: usize) -> Self {
        Self {
            joint_rotation_params: vec![Vec3::zeros(); joints],
            joint_angular_velocity: vec![Vec3::zeros(); joints],
            root_delta: Vec3::zeros(),
        }
    }

    pub fn dim_for(joints: usize) -> usize {
        6 * joints + 3
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotation_params.len()
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.joint_count())
    }

    /// Flat layout: all rotation params, then all angular velocities, then
    /// the root delta.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        for v in &self.joint_rotation_params {
            out.extend_from_slice(v.as_slice());
        }
        for v in &self.joint_angular_velocity {
            out.extend_from_slice(v.as_slice());
        }
        out.extend_from_slice(self.root_delta.as_slice());
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 3 || !(values.len() - 3).is_multiple_of(6) {
            return Err(Error::Data(format!(
                "body feature length {} is not 6N+3",
                values.len()
            )));
        }
        let n = (values.len() - 3) / 6;
        let v3 = |i: usize| Vec3::new(values[i], values[i + 1], values[i + 2]);
        Ok(Self {
            joint_rotation_params: (0..n).map(|j| v3(3 * j)).collect(),
            joint_angular_velocity: (0..n).map(|j| v3(3 * n + 3 * j)).collect(),
            root_delta: v3(6 * n),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureY {
    /// One accelerometer/gyroscope pair per sensor; a single sensor gives
    /// the 6-dimensional feature.
    pub sensors: Vec<ImuSample>,
}

impl FeatureY {
    pub fn single(sample: ImuSample) -> Self {
        Self {
            sensors: vec![sample],
        }
    }

    pub fn dim(&self) -> usize {
        6 * self.sensors.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.write_into(&mut out);
        out
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        for s in &self.sensors {
            out.extend_from_slice(s.accel.as_slice());
            out.extend_from_slice(s.gyro.as_slice());
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(6) {
            return Err(Error::Data(format!(
                "sensor feature length {} is not a multiple of 6",
                values.len()
            )));
        }
        Ok(Self {
            sensors: values
                .chunks_exact(6)
                .map(|c| ImuSample {
                    accel: Vec3::new(c[0], c[1], c[2]),
                    gyro: Vec3::new(c[3], c[4], c[5]),
                })
                .collect(),
        })
    }
}

/// One frame of paired data; its flat form `z_t = [x_t, y_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub x: FeatureX,
    pub y: FeatureY,
}

impl JointObservation {
    pub fn z(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.x.dim() + self.y.dim());
        self.x.write_into(&mut out);
        self.y.write_into(&mut out);
        out
    }
}

/// Body feature sequence of a clip, without sensor data.
pub fn body_features(clip: &MotionClip) -> Result<Vec<FeatureX>> {
    let n = clip.skeleton.len();
    let mut out: Vec<FeatureX> = Vec::with_capacity(clip.len());
    for (t, pose) in clip.frames.iter().enumerate() {
        if !pose.is_finite() {
            return Err(Error::Data(format!("non-finite pose at frame {t}")));
        }
        let prev = out.last();
        let params: Vec<Vec3> = pose
            .joint_rotations
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let near = prev.map_or_else(Vec3::zeros, |p| p.joint_rotation_params[j]);
                log_map_near(q, &near)
            })
            .collect();
        let (velocity, delta) = match prev {
            Some(p) => (
                params
                    .iter()
                    .zip(&p.joint_rotation_params)
                    .map(|(a, b)| (a - b) * clip.fps)
                    .collect(),
                clip.frames[t - 1].root_position - pose.root_position,
            ),
            None => (vec![Vec3::zeros(); n], Vec3::zeros()),
        };
        out.push(FeatureX {
            joint_rotation_params: params,
            joint_angular_velocity: velocity,
            root_delta: delta,
        });
    }
    Ok(out)
}

/// Pairs every frame of `clip` with the simultaneous IMU reading.
pub fn extract_features(clip: &MotionClip, imu: &ImuStream) -> Result<Vec<JointObservation>> {
    extract_features_multi(clip, std::slice::from_ref(imu))
}

/// As [`extract_features`], concatenating several sensors into each `y_t`.
pub fn extract_features_multi(clip: &MotionClip, imus: &[ImuStream]) -> Result<Vec<JointObservation>> {
    for imu in imus {
        if imu.len() != clip.len() {
            return Err(Error::Alignment(format!(
                "motion has {} frames but IMU has {}",
                clip.len(),
                imu.len()
            )));
        }
        if (imu.fps - clip.fps).abs() > 1e-9 {
            return Err(Error::Alignment(format!(
                "motion is at {} fps but IMU is at {} fps",
                clip.fps, imu.fps
            )));
        }
    }
    let ys = super::sensor_features(imus)?;
    let xs = body_features(clip)?;
    Ok(xs
        .into_iter()
        .zip(ys)
        .map(|(x, y)| JointObservation { x, y })
        .collect())
}

/// Rebuilds a pose from body features, advancing the root from `prev_root`.
pub fn pose_from_feature(x: &FeatureX, prev_root: &Vec3) -> SkeletonPose {
    SkeletonPose {
        root_position: prev_root - x.root_delta,
        joint_rotations: x.joint_rotation_params.iter().map(exp_map).collect(),
    }
}

/// Removes the root's vertical twist from a body feature: the root rotation
/// becomes `yaw(-heading) * q_root` and the root delta is expressed in the
/// heading frame. Angular velocities stay in the world frame so the heading
/// rate remains observable. Returns the heading angle removed.
pub fn to_heading_frame(x: &FeatureX, root: usize) -> (FeatureX, f64) {
    let q_root = exp_map(&x.joint_rotation_params[root]);
    let heading = yaw_of(&q_root);
    let unyaw = yaw_rotation(-heading);
    let mut out = x.clone();
    out.joint_rotation_params[root] = log_map_near(&(unyaw * q_root), &Vec3::zeros());
    out.root_delta = unyaw * x.root_delta;
    (out, heading)
}

/// Inverse of [`to_heading_frame`] for a given heading.
pub fn from_heading_frame(x: &FeatureX, root: usize, heading: f64) -> FeatureX {
    let yaw = yaw_rotation(heading);
    let mut out = x.clone();
    let q = yaw * exp_map(&x.joint_rotation_params[root]);
    out.joint_rotation_params[root] = log_map_near(&q, &Vec3::zeros());
    out.root_delta = yaw * x.root_delta;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::Quat;
    use crate::motion::Skeleton;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn still_imu(n: usize) -> ImuStream {
        ImuStream {
            fps: 30.0,
            samples: vec![
                ImuSample {
                    accel: Vec3::new(0.0, -9.81, 0.0),
                    gyro: Vec3::zeros()
                };
                n
            ],
        }
    }

    #[test]
    fn stationary_clip_has_zero_velocity_and_delta() {
        let s = Arc::new(Skeleton::biped18());
        let mut pose = SkeletonPose::identity(s.len());
        pose.joint_rotations[3] = exp_map(&Vec3::new(0.2, 0.1, 0.0));
        let clip = MotionClip::new(s.clone(), 30.0, vec![pose; 10]).unwrap();
        let obs = extract_features(&clip, &still_imu(10)).unwrap();
        assert_eq!(obs.len(), 10);
        for o in &obs {
            assert!(o.x.joint_angular_velocity.iter().all(|v| v.norm() == 0.0));
            assert_eq!(o.x.root_delta, Vec3::zeros());
            assert_eq!(o.x.dim(), 6 * 18 + 3);
            assert_eq!(o.y.dim(), 6);
        }
    }

    #[test]
    fn root_delta_sign_convention() {
        let s = Arc::new(Skeleton::biped18());
        let frames: Vec<SkeletonPose> = (0..5)
            .map(|t| {
                let mut p = SkeletonPose::identity(s.len());
                p.root_position = Vec3::new(0.02 * t as f64, 0.9, 0.0);
                p
            })
            .collect();
        let clip = MotionClip::new(s, 30.0, frames).unwrap();
        let obs = extract_features(&clip, &still_imu(5)).unwrap();
        assert_eq!(obs[0].x.root_delta, Vec3::zeros());
        for o in &obs[1..] {
            assert_relative_eq!(o.x.root_delta, Vec3::new(-0.02, 0.0, 0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_alignment_error() {
        let s = Arc::new(Skeleton::biped18());
        let clip = MotionClip::new(s.clone(), 30.0, vec![SkeletonPose::identity(18); 4]).unwrap();
        let err = extract_features(&clip, &still_imu(5)).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn non_finite_pose_is_data_error() {
        let s = Arc::new(Skeleton::biped18());
        let mut bad = SkeletonPose::identity(18);
        bad.root_position.x = f64::NAN;
        let clip = MotionClip::new(s, 30.0, vec![SkeletonPose::identity(18), bad]).unwrap();
        let err = extract_features(&clip, &still_imu(2)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn zero_params_give_identity() {
        let x = FeatureX {
            joint_rotation_params: vec![Vec3::zeros(); 3],
            joint_angular_velocity: vec![Vec3::zeros(); 3],
            root_delta: Vec3::zeros(),
        };
        let pose = pose_from_feature(&x, &Vec3::zeros());
        assert!(pose.joint_rotations.iter().all(|q| *q == Quat::identity()));
    }

    #[test]
    fn flat_layout_round_trip() {
        let x = FeatureX {
            joint_rotation_params: vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)],
            joint_angular_velocity: vec![Vec3::new(7.0, 8.0, 9.0), Vec3::new(10.0, 11.0, 12.0)],
            root_delta: Vec3::new(13.0, 14.0, 15.0),
        };
        assert_eq!(FeatureX::from_slice(&x.to_vec()).unwrap(), x);
        assert!(FeatureX::from_slice(&[0.0; 10]).is_err());
    }

    #[test]
    fn heading_frame_round_trip() {
        let mut x = FeatureX {
            joint_rotation_params: vec![Vec3::zeros(); 2],
            joint_angular_velocity: vec![Vec3::zeros(); 2],
            root_delta: Vec3::new(0.01, 0.0, -0.03),
        };
        let q = yaw_rotation(1.1) * exp_map(&Vec3::new(0.05, 0.0, 0.02));
        x.joint_rotation_params[0] = log_map_near(&q, &Vec3::zeros());
        let (h, heading) = to_heading_frame(&x, 0);
        assert_relative_eq!(heading, 1.1, epsilon = 1e-12);
        assert_relative_eq!(
            yaw_of(&exp_map(&h.joint_rotation_params[0])),
            0.0,
            epsilon = 1e-12
        );
        let back = from_heading_frame(&h, 0, heading);
        assert_relative_eq!(back.root_delta, x.root_delta, epsilon = 1e-12);
        let qb = exp_map(&back.joint_rotation_params[0]);
        assert!(qb.angle_to(&q) < 1e-12);
    }
}
