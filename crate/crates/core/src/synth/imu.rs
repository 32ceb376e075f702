use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::motion::kinematics::{positions_from_world, world_rotations};
use crate::motion::rotation::log_map;
use crate::motion::{ImuSample, ImuStream, MotionClip, Quat, Skeleton, Vec3};

/// A sensor rigidly attached to a joint, `offset` meters away in the joint's
/// local frame and rotated by `orientation` relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorMount {
    pub joint: usize,
    pub offset: Vec3,
    pub orientation: Quat,
}

impl SensorMount {
    pub fn at(skeleton: &Skeleton, joint: &str, offset: Vec3) -> Result<Self> {
        Ok(Self {
            joint: skeleton.require(joint)?,
            offset,
            orientation: Quat::identity(),
        })
    }

    /// Default placement on the outside of a joint, 4 cm off the bone.
    pub fn named(skeleton: &Skeleton, joint: &str) -> Result<Self> {
        let index = skeleton.require(joint)?;
        let side = if joint.starts_with("left") { 1.0 } else { -1.0 };
        let offset = if skeleton.joint(index).parent.is_none() {
            Vec3::new(0.0, 0.0, -0.1)
        } else {
            Vec3::new(0.04 * side, 0.0, 0.0)
        };
        Ok(Self {
            joint: index,
            offset,
            orientation: Quat::identity(),
        })
    }
}

/// White measurement noise, standard deviations in m/s² and rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    pub accel_std: f64,
    pub gyro_std: f64,
    pub seed: u64,
}

/// Gravity vector in world coordinates (y up), m/s².
pub const GRAVITY: Vec3 = Vec3::new(0.0, -9.81, 0.0);

/// Accelerometer: the mount point's second difference plus `gravity`,
/// rotated into the sensor frame. Gyroscope: the relative rotation between
/// consecutive frames as a rotation vector times fps, in the sensor frame.
pub fn simulate_imu(
    clip: &MotionClip,
    mount: &SensorMount,
    gravity: Vec3,
    noise: Option<&ImuNoise>,
) -> Result<ImuStream> {
    let n = clip.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "IMU simulation needs at least 3 frames, clip has {n}"
        )));
    }
    if clip.fps < 10.0 {
        return Err(Error::Config(format!(
            "IMU simulation needs at least 10 fps, got {}",
            clip.fps
        )));
    }
    let skel = clip.skeleton.as_ref();
    if mount.joint >= skel.len() {
        return Err(Error::Skeleton(format!(
            "sensor joint {} outside skeleton of {} joints",
            mount.joint,
            skel.len()
        )));
    }
    let mut points = Vec::with_capacity(n);
    let mut orientations = Vec::with_capacity(n);
    for pose in &clip.frames {
        let world = world_rotations(skel, pose);
        let pos = positions_from_world(skel, pose, &world);
        let r = world[mount.joint];
        points.push(pos[mount.joint] + r * mount.offset);
        orientations.push(r * mount.orientation);
    }
    let fps = clip.fps;
    let mut samples = Vec::with_capacity(n);
    for t in 0..n {
        let acc = if t == 0 {
            points[2] - 2.0 * points[1] + points[0]
        } else if t == n - 1 {
            points[n - 1] - 2.0 * points[n - 2] + points[n - 3]
        } else {
            points[t + 1] - 2.0 * points[t] + points[t - 1]
        } * (fps * fps);
        let r = orientations[t];
        let accel = r.inverse() * (acc + gravity);
        let (a, b) = if t + 1 < n { (t, t + 1) } else { (t - 1, t) };
        let gyro = log_map(&(orientations[a].inverse() * orientations[b])) * fps;
        samples.push(ImuSample { accel, gyro });
    }
    if let Some(noise) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let accel_n = Normal::new(0.0, noise.accel_std)
            .map_err(|e| Error::Config(format!("accelerometer noise: {e}")))?;
        let gyro_n =
            Normal::new(0.0, noise.gyro_std).map_err(|e| Error::Config(format!("gyroscope noise: {e}")))?;
        for s in &mut samples {
            for i in 0..3 {
                s.accel[i] += accel_n.sample(&mut rng);
            }
            for i in 0..3 {
                s.gyro[i] += gyro_n.sample(&mut rng);
            }
        }
    }
    Ok(ImuStream { fps, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::{exp_map, geodesic};
    use crate::motion::{Skeleton, SkeletonPose};
    use crate::synth::{generate_gait, GaitSpec, MotionType};
    use nalgebra::UnitQuaternion;
    use std::sync::Arc;

    fn skel() -> Arc<Skeleton> {
        Arc::new(Skeleton::biped18())
    }

    fn still_clip(frames: usize) -> MotionClip {
        let s = skel();
        let mut pose = SkeletonPose::identity(s.len());
        pose.root_position = Vec3::new(0.0, 0.9, 0.0);
        MotionClip::new(s, 30.0, vec![pose; frames]).unwrap()
    }

    #[test]
    fn stationary_reads_gravity() {
        let clip = still_clip(10);
        let mount = SensorMount::at(&clip.skeleton, "hips", Vec3::zeros()).unwrap();
        let imu = simulate_imu(&clip, &mount, GRAVITY, None).unwrap();
        for s in &imu.samples {
            assert!((s.accel - GRAVITY).norm() < 1e-12);
            assert_eq!(s.gyro, Vec3::zeros());
        }
    }

    #[test]
    fn mount_orientation_rotates_gravity() {
        let clip = still_clip(5);
        let mut mount = SensorMount::at(&clip.skeleton, "hips", Vec3::zeros()).unwrap();
        mount.orientation = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2);
        let imu = simulate_imu(&clip, &mount, GRAVITY, None).unwrap();
        let expected = mount.orientation.inverse() * GRAVITY;
        assert!((imu.samples[2].accel - expected).norm() < 1e-12);
        assert!((expected.x + 9.81).abs() < 1e-12);
    }

    #[test]
    fn uniform_rotation_gives_constant_gyro() {
        let s = skel();
        let axis = Vec3::new(0.3, 1.0, -0.2).normalize();
        let speed = 2.5;
        let frames = (0..40)
            .map(|t| {
                let mut p = SkeletonPose::identity(s.len());
                p.joint_rotations[0] = exp_map(&(axis * speed * t as f64 / 60.0));
                p
            })
            .collect();
        let clip = MotionClip::new(s, 60.0, frames).unwrap();
        let mount = SensorMount::at(&clip.skeleton, "hips", Vec3::zeros()).unwrap();
        let imu = simulate_imu(&clip, &mount, GRAVITY, None).unwrap();
        for smp in &imu.samples {
            assert!((smp.gyro.norm() - speed).abs() < 1e-6);
            assert!((smp.gyro - axis * speed).norm() < 1e-6);
        }
    }

    #[test]
    fn gyro_integrates_back_to_orientation() {
        let clip = generate_gait(&GaitSpec::new(MotionType::Walk).cycles(1), &skel()).unwrap();
        let mount = SensorMount::named(&clip.skeleton, "right_ankle").unwrap();
        let imu = simulate_imu(&clip, &mount, GRAVITY, None).unwrap();
        let truth: Vec<Quat> = clip
            .frames
            .iter()
            .map(|p| world_rotations(&clip.skeleton, p)[mount.joint])
            .collect();
        let mut r = truth[0];
        for (sample, want) in imu.samples.iter().zip(&truth[1..]) {
            r *= exp_map(&(sample.gyro / clip.fps));
            assert!(geodesic(&r, want) < 0.02);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let clip = generate_gait(&GaitSpec::new(MotionType::Walk).cycles(1), &skel()).unwrap();
        let mount = SensorMount::named(&clip.skeleton, "right_ankle").unwrap();
        let noise = ImuNoise {
            accel_std: 0.1,
            gyro_std: 0.01,
            seed: 3,
        };
        let a = simulate_imu(&clip, &mount, GRAVITY, Some(&noise)).unwrap();
        let b = simulate_imu(&clip, &mount, GRAVITY, Some(&noise)).unwrap();
        assert_eq!(a, b);
        let clean = simulate_imu(&clip, &mount, GRAVITY, None).unwrap();
        assert_ne!(a, clean);
        assert_eq!(clean, simulate_imu(&clip, &mount, GRAVITY, None).unwrap());
    }

    #[test]
    fn short_or_slow_clips_are_rejected() {
        let clip = still_clip(2);
        let mount = SensorMount::at(&clip.skeleton, "hips", Vec3::zeros()).unwrap();
        assert!(simulate_imu(&clip, &mount, GRAVITY, None).is_err());
        let mut clip = still_clip(5);
        clip.fps = 5.0;
        assert!(simulate_imu(&clip, &mount, GRAVITY, None).is_err());
        assert!(SensorMount::at(&clip.skeleton, "tail", Vec3::zeros()).is_err());
    }
}
