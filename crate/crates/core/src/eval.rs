//! Reconstruction error against ground truth and step() timing.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::HierarchicalModel;
use crate::motion::kinematics::forward_kinematics;
use crate::motion::{FeatureY, MotionClip, SkeletonPose, Vec3};
use crate::reconstruction::{ReconstructConfig, ReconstructionState};
use crate::segmentation::GaitPhase;

/// Frames excluded from timing.
pub const BENCH_WARMUP: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub joints: Vec<String>,
    /// Per joint, cm².
    pub joint_mse_cm2: Vec<f64>,
    /// Per joint, cm.
    pub joint_rmse_cm: Vec<f64>,
    pub mse_cm2: f64,
    pub rmse_cm: f64,
    /// Fraction of frames whose recognized phase matches ground truth; set
    /// by [`phase_accuracy`].
    pub phase_accuracy: Option<f64>,
}

fn root_pinned(clip: &MotionClip, pose: &SkeletonPose) -> Vec<Vec3> {
    let mut p = pose.clone();
    p.root_position = Vec3::zeros();
    forward_kinematics(&clip.skeleton, &p)
}

/// Joint-position error with both roots pinned to the origin. Compares the
/// first `min(len)` frames.
pub fn mse_eval(pred: &MotionClip, truth: &MotionClip) -> Result<EvalReport> {
    if pred.skeleton.joints() != truth.skeleton.joints() {
        return Err(Error::Skeleton(
            "predicted and true clips use different skeletons".into(),
        ));
    }
    if (pred.fps - truth.fps).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "fps differ: {} vs {}",
            pred.fps, truth.fps
        )));
    }
    let frames = pred.len().min(truth.len());
    let j = truth.skeleton.len();
    let mut sums = vec![0.0; j];
    for (a, b) in pred.frames.iter().zip(&truth.frames).take(frames) {
        let pa = root_pinned(pred, a);
        let pb = root_pinned(truth, b);
        for (s, (x, y)) in sums.iter_mut().zip(pa.iter().zip(&pb)) {
            *s += (x - y).norm_squared() * 1e4;
        }
    }
    let n = frames.max(1) as f64;
    let joint_mse_cm2: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mse_cm2 = joint_mse_cm2.iter().sum::<f64>() / j.max(1) as f64;
    Ok(EvalReport {
        frames,
        joints: truth.skeleton.joints().iter().map(|x| x.name.clone()).collect(),
        joint_rmse_cm: joint_mse_cm2.iter().map(|m| m.sqrt()).collect(),
        joint_mse_cm2,
        mse_cm2,
        rmse_cm: mse_cm2.sqrt(),
        phase_accuracy: None,
    })
}

/// Fraction of frames from `skip` on whose predicted phase matches the
/// truth at that frame or at a neighbouring frame.
pub fn phase_accuracy(pred: &[GaitPhase], truth: &[GaitPhase], skip: usize) -> f64 {
    let n = pred.len().min(truth.len());
    if n <= skip {
        return 0.0;
    }
    let hits = (skip..n)
        .filter(|&t| {
            let lo = t.saturating_sub(1);
            let hi = (t + 1).min(n - 1);
            (lo..=hi).any(|u| truth[u] == pred[t])
        })
        .count();
    hits as f64 / (n - skip) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Frames stored in the chains.
    pub database_frames: usize,
    pub segments: usize,
    pub timed_frames: usize,
    pub fps: f64,
    /// Mean seconds per step().
    pub latency_s: f64,
}

/// Times `step()` over `ys` after a warm-up. Foot lock and crossfade run
/// as usual but the clock only covers the calls themselves.
pub fn bench(model: Arc<HierarchicalModel>, ys: &[FeatureY]) -> Result<BenchReport> {
    if ys.len() <= BENCH_WARMUP {
        return Err(Error::Data(format!(
            "benchmark needs more than {BENCH_WARMUP} frames, got {}",
            ys.len()
        )));
    }
    let mut config = ReconstructConfig::for_model(&model);
    config.foot_lock = false;
    let database_frames = model.n_states();
    let segments = model.segment_count();
    let mut state = ReconstructionState::new(model, config)?;
    for y in &ys[..BENCH_WARMUP] {
        state.step(y)?;
    }
    let timed = &ys[BENCH_WARMUP..];
    let start = Instant::now();
    for y in timed {
        std::hint::black_box(state.step(y)?);
    }
    let latency_s = (start.elapsed().as_secs_f64() / timed.len() as f64).max(f64::MIN_POSITIVE);
    Ok(BenchReport {
        database_frames,
        segments,
        timed_frames: timed.len(),
        fps: 1.0 / latency_s,
        latency_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_hierarchy, GaussianState, PhaseGroup, ZScore};
    use crate::motion::rotation::yaw_rotation;
    use crate::motion::skeleton::Joint;
    use crate::motion::{FeatureX, Skeleton};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(rng: &mut ChaCha8Rng, n: usize) -> MotionClip {
        let sk = Arc::new(Skeleton::biped18());
        let frames = (0..n)
            .map(|_| {
                let mut p = SkeletonPose::identity(sk.len());
                p.root_position = Vec3::new(rng.random_range(-1.0..1.0), 0.9, rng.random_range(-1.0..1.0));
                for q in &mut p.joint_rotations {
                    *q = crate::motion::rotation::exp_map(&Vec3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ));
                }
                p
            })
            .collect();
        MotionClip::new(sk, 30.0, frames).unwrap()
    }

    #[test]
    fn identical_clips_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clip = random_clip(&mut rng, 10);
        let r = mse_eval(&clip, &clip).unwrap();
        assert_eq!(r.mse_cm2, 0.0);
        assert_eq!(r.frames, 10);
        assert_eq!(r.joint_rmse_cm.len(), 18);
    }

    #[test]
    fn root_translation_is_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clip = random_clip(&mut rng, 10);
        let mut shifted = clip.clone();
        for f in &mut shifted.frames {
            f.root_position.x += 0.01;
        }
        assert_eq!(mse_eval(&shifted, &clip).unwrap().mse_cm2, 0.0);
    }

    #[test]
    fn two_joint_chain_by_hand() {
        let len = 0.3;
        let sk = Arc::new(
            Skeleton::new(vec![
                Joint {
                    name: "root".into(),
                    parent: None,
                    offset: Vec3::zeros(),
                },
                Joint {
                    name: "tip".into(),
                    parent: Some(0),
                    offset: Vec3::new(len, 0.0, 0.0),
                },
            ])
            .unwrap(),
        );
        // a chord of 2 cm at radius `len`
        let angle = 2.0 * (0.01 / len).asin();
        let still = SkeletonPose::identity(2);
        let mut turned = still.clone();
        turned.joint_rotations[0] = yaw_rotation(angle);
        let truth = MotionClip::new(sk.clone(), 30.0, vec![still.clone(); 4]).unwrap();
        let pred = MotionClip::new(sk, 30.0, vec![turned.clone(), turned, still.clone(), still]).unwrap();
        let r = mse_eval(&pred, &truth).unwrap();
        // 2 cm on one of two joints for half the frames
        assert_relative_eq!(r.mse_cm2, 4.0 / (2.0 * 2.0), epsilon = 1e-9);
        assert_relative_eq!(r.joint_mse_cm2[1], 2.0, epsilon = 1e-9);
        assert_eq!(r.joint_mse_cm2[0], 0.0);
    }

    #[test]
    fn mse_is_symmetric_and_uses_shorter_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_clip(&mut rng, 12);
        let b = random_clip(&mut rng, 9);
        let ab = mse_eval(&a, &b).unwrap();
        let ba = mse_eval(&b, &a).unwrap();
        assert_eq!(ab.frames, 9);
        assert_relative_eq!(ab.mse_cm2, ba.mse_cm2, epsilon = 1e-12);
        assert!(ab.mse_cm2 > 0.0);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_clip(&mut rng, 3);
        let mut b = a.clone();
        b.fps = 60.0;
        assert!(mse_eval(&a, &b).is_err());
        let other = MotionClip::new(
            Arc::new(
                Skeleton::new(vec![Joint {
                    name: "root".into(),
                    parent: None,
                    offset: Vec3::zeros(),
                }])
                .unwrap(),
            ),
            30.0,
            vec![SkeletonPose::identity(1)],
        )
        .unwrap();
        assert!(mse_eval(&a, &other).is_err());
    }

    #[test]
    fn phase_accuracy_allows_one_frame_of_slack() {
        use GaitPhase::*;
        let truth = [IcLr, IcLr, LrMst, LrMst, LrMst, MstTst];
        assert_eq!(phase_accuracy(&truth, &truth, 0), 1.0);
        let late = [IcLr, IcLr, IcLr, LrMst, LrMst, LrMst];
        assert_eq!(phase_accuracy(&late, &truth, 0), 1.0);
        let wrong = [IcLr, IcLr, IcLr, IcLr, LrMst, LrMst];
        assert_relative_eq!(phase_accuracy(&wrong, &truth, 0), 5.0 / 6.0);
        assert_relative_eq!(phase_accuracy(&wrong, &truth, 4), 1.0);
        assert_eq!(phase_accuracy(&wrong, &truth, 6), 0.0);
    }

    fn toy_model() -> Arc<HierarchicalModel> {
        let dx = FeatureX::dim_for(18);
        let d = dx + 6;
        let group = PhaseGroup {
            family: "t".into(),
            phase: GaitPhase::Idle,
            members: vec![vec![vec![0.0; d]]],
            root_heights: vec![vec![0.9]],
            src_segment_ids: vec![0],
        };
        let g = GaussianState::new(DVector::zeros(d), DMatrix::identity(d, d), dx).unwrap();
        let z = ZScore {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        };
        Arc::new(build_hierarchy(Skeleton::biped18(), 30.0, vec![group], vec![g], z, dx, 5, 3, 0.1).unwrap())
    }

    #[test]
    fn toy_benchmark_is_fast() {
        let model = toy_model();
        let ys = vec![FeatureY::from_slice(&[0.0, -9.81, 0.0, 0.0, 0.0, 0.0]).unwrap(); 200];
        let r = bench(model, &ys).unwrap();
        assert_eq!(r.timed_frames, 170);
        assert_eq!(r.segments, 1);
        assert!(r.latency_s > 0.0 && r.latency_s < 1e-3, "{}", r.latency_s);
        assert_relative_eq!(r.fps * r.latency_s, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn benchmark_needs_more_than_warmup() {
        let ys = vec![FeatureY::from_slice(&[0.0; 6]).unwrap(); BENCH_WARMUP];
        assert!(bench(toy_model(), &ys).is_err());
    }
}
