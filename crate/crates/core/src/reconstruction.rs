//! Online reconstruction: sensor frame in, full-body pose out.
//!
//! Each step advances the forward lattice, recognizes the phase, blends the
//! conditional means of the K most probable frame states of that phase and
//! turns the result into a pose. Phase switches are crossfaded and planted
//! feet are pinned with two-bone IK.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hmm::{init_forward, recognize_phase, ChainRef, HierarchicalModel, LogForwardLattice};
use crate::motion::features::{from_heading_frame, pose_from_feature};
use crate::motion::kinematics::{forward_kinematics, solve_leg, world_rotations};
use crate::motion::rotation::{canonical, nlerp, yaw_of};
use crate::motion::skeleton::Side;
use crate::motion::{FeatureX, FeatureY, Quat, Skeleton, SkeletonPose, Vec3};
use crate::segmentation::{contact_state, ContactState, GaitPhase, SegmentParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    /// Frame states blended per output frame; capped by the model's K.
    pub k: usize,
    /// Sensor frames kept for re-initialization after tracking loss.
    pub w: usize,
    pub foot_lock: bool,
    /// Longest crossfade, frames.
    pub blend_frames: usize,
    /// Root speed (m/s) at which the crossfade halves.
    pub blend_ref_speed: f64,
    pub contact: SegmentParams,
    /// Heading of the first output frame, radians.
    pub initial_heading: f64,
}

impl ReconstructConfig {
    pub fn for_model(model: &HierarchicalModel) -> Self {
        Self {
            k: model.k,
            w: model.w,
            foot_lock: true,
            blend_frames: 8,
            blend_ref_speed: 1.0,
            contact: SegmentParams::default(),
            initial_heading: 0.0,
        }
    }
}

/// Blend weights of the candidate frame states.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpWeights {
    /// `(flat state index, state address, weight)`, heaviest first.
    pub entries: Vec<(usize, ChainRef, f64)>,
}

impl InterpWeights {
    /// The `k` heaviest states of `phase`, weights proportional to forward
    /// mass and summing to one. Ties keep model order.
    pub fn top_k(model: &HierarchicalModel, lattice: &LogForwardLattice, phase: usize, k: usize) -> Self {
        let (a, b) = model.phase_range(phase);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for s in a..b {
            let v = lattice.log_alpha[s];
            if best.len() == k && v <= best[k - 1].1 {
                continue;
            }
            let pos = best.iter().position(|(_, w)| v > *w).unwrap_or(best.len());
            best.insert(pos, (s, v));
            best.truncate(k);
        }
        let top = best.first().map_or(0.0, |b| b.1);
        let mut entries: Vec<(usize, ChainRef, f64)> = best
            .iter()
            .map(|(s, v)| (*s, model.state_ref(*s), (v - top).exp()))
            .collect();
        let total: f64 = entries.iter().map(|e| e.2).sum();
        for e in &mut entries {
            e.2 /= total;
        }
        Self { entries }
    }
}

/// Convex combination of candidate conditional means and covariances.
pub fn interpolate_models(
    candidates: &[(DVector<f64>, DMatrix<f64>, f64)],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Data("no candidates to interpolate".into()))?;
    let mut mean = DVector::zeros(first.0.len());
    let mut cov = DMatrix::zeros(first.1.nrows(), first.1.ncols());
    for (m, c, w) in candidates {
        mean.axpy(*w, m, 1.0);
        cov += c * *w;
    }
    Ok((mean, cov))
}

/// Blends two poses: `alpha = 0` gives `prev`, `alpha = 1` gives `new`.
pub fn crossfade(prev: &SkeletonPose, new: &SkeletonPose, alpha: f64) -> SkeletonPose {
    SkeletonPose {
        root_position: prev.root_position * (1.0 - alpha) + new.root_position * alpha,
        joint_rotations: prev
            .joint_rotations
            .iter()
            .zip(&new.joint_rotations)
            .map(|(a, b)| nlerp(a, b, alpha))
            .collect(),
    }
}

/// Crossfade length for a root speed: shorter for faster motion, between 2
/// and `max_frames` frames.
pub fn blend_length(speed: f64, max_frames: usize, ref_speed: f64) -> usize {
    let max = max_frames.max(2);
    let n = (max as f64 / (1.0 + speed.max(0.0) / ref_speed)).round() as usize;
    n.clamp(2, max)
}

/// Pins every foot with an anchor to it and lifts ankles below the ground.
/// `anchors` are updated from `contacts`: a new contact anchors the foot
/// where it is (on the ground), a released contact clears the anchor.
pub fn foot_lock(
    skeleton: &Skeleton,
    pose: &SkeletonPose,
    contacts: &ContactState,
    anchors: &mut [Option<Vec3>; 2],
) -> Result<SkeletonPose> {
    let mut out = pose.clone();
    let positions = forward_kinematics(skeleton, pose);
    let world = world_rotations(skeleton, pose);
    let facing = {
        let h = yaw_of(&pose.joint_rotations[skeleton.root()]);
        Vec3::new(h.sin(), 0.0, h.cos())
    };
    for (i, side) in [Side::Right, Side::Left].into_iter().enumerate() {
        let leg = skeleton.leg(side)?;
        let down = match side {
            Side::Right => contacts.rh,
            Side::Left => contacts.lh,
        };
        let ankle = positions[leg.ankle];
        if down {
            if anchors[i].is_none() {
                anchors[i] = Some(Vec3::new(ankle.x, ankle.y.max(0.0), ankle.z));
            }
        } else {
            anchors[i] = None;
        }
        let target = match anchors[i] {
            Some(a) => Some(a),
            None if ankle.y < 0.0 => Some(Vec3::new(ankle.x, 0.0, ankle.z)),
            None => None,
        };
        if let Some(t) = target {
            if (t - ankle).norm() > 0.0 {
                solve_leg(skeleton, &mut out, leg, &t, &facing, Some(world[leg.ankle]));
            }
        }
    }
    Ok(out)
}

/// What one step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub pose: SkeletonPose,
    /// Recognized phase index into the model's phases.
    pub phase: usize,
    pub phase_label: GaitPhase,
    pub posterior: f64,
    pub weights: InterpWeights,
    /// Blended body feature in the heading frame, before crossfade and
    /// foot lock.
    pub feature: FeatureX,
    /// Whether tracking was lost and the lattice restarted on this frame.
    pub reset: bool,
}

#[derive(Debug, Clone)]
struct Blend {
    /// Per-joint local offsets `new⁻¹ · old` captured at the switch.
    offsets: Vec<Quat>,
    frame: usize,
    frames: usize,
}

/// Streaming reconstruction session over a shared model.
#[derive(Debug, Clone)]
pub struct ReconstructionState {
    model: Arc<HierarchicalModel>,
    config: ReconstructConfig,
    lattice: LogForwardLattice,
    window: VecDeque<Vec<f64>>,
    active_phase: Option<usize>,
    last_pose: Option<SkeletonPose>,
    last_feature: Option<FeatureX>,
    raw_prev: Option<SkeletonPose>,
    anchors: [Option<Vec3>; 2],
    heading: f64,
    frames_since_reset: usize,
    blend: Option<Blend>,
}

impl ReconstructionState {
    pub fn new(model: Arc<HierarchicalModel>, config: ReconstructConfig) -> Result<Self> {
        if config.k == 0 || config.w == 0 {
            return Err(Error::Config("K and W must be at least 1".into()));
        }
        let lattice = init_forward(&model);
        Ok(Self {
            heading: config.initial_heading,
            model,
            config,
            lattice,
            window: VecDeque::new(),
            active_phase: None,
            last_pose: None,
            last_feature: None,
            raw_prev: None,
            anchors: [None, None],
            frames_since_reset: 0,
            blend: None,
        })
    }

    pub fn model(&self) -> &HierarchicalModel {
        &self.model
    }

    pub fn lattice(&self) -> &LogForwardLattice {
        &self.lattice
    }

    pub fn frames_since_reset(&self) -> usize {
        self.frames_since_reset
    }

    pub fn last_pose(&self) -> Option<&SkeletonPose> {
        self.last_pose.as_ref()
    }

    /// Advances the lattice, restarting from the window on tracking loss.
    /// Returns whether a restart happened.
    fn advance(&mut self, y: &[f64]) -> Result<bool> {
        match self.model.forward_step(&mut self.lattice, y) {
            Ok(()) => Ok(false),
            Err(Error::TrackingLost) => {
                log::warn!(
                    "tracking lost after {} frames; restarting",
                    self.frames_since_reset
                );
                self.frames_since_reset = 0;
                let mut lattice = init_forward(&self.model);
                let mut ok = true;
                for w in &self.window {
                    if self.model.forward_step(&mut lattice, w).is_err() {
                        ok = false;
                        break;
                    }
                }
                self.lattice = if ok { lattice } else { init_forward(&self.model) };
                Ok(true)
            }
            Err(e) => Err(e),
        }
    }

    /// Consumes one sensor frame and emits one pose.
    pub fn step(&mut self, y: &FeatureY) -> Result<StepOutput> {
        let model = self.model.clone();
        let raw = y.to_vec();
        if raw.len() != model.dy {
            return Err(Error::Data(format!(
                "sensor frame has {} channels, model expects {}",
                raw.len(),
                model.dy
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sensor frame".into()));
        }
        let ys = model.zscore.apply(&raw, model.dx);
        self.window.push_back(ys.clone());
        while self.window.len() > self.config.w {
            self.window.pop_front();
        }
        let reset = self.advance(&ys)?;
        if reset && self.lattice.steps == 0 {
            // nothing explains the window: hold the last pose
            if let Some(p) = self.last_pose.clone() {
                return Ok(StepOutput {
                    pose: p,
                    phase: self.active_phase.unwrap_or(0),
                    phase_label: model.phases[self.active_phase.unwrap_or(0)].phase,
                    posterior: 0.0,
                    weights: InterpWeights { entries: vec![] },
                    feature: self
                        .last_feature
                        .clone()
                        .unwrap_or_else(|| FeatureX::zeros(model.skeleton.len())),
                    reset,
                });
            }
            return Err(Error::TrackingLost);
        }
        let (phase, post) = recognize_phase(&model, &self.lattice);
        let k = self.config.k.min(model.k).max(1);
        let weights = InterpWeights::top_k(&model, &self.lattice, phase, k);

        // blended standardized body features and root height, as offsets
        // from the heaviest candidate so equal candidates blend exactly
        let candidates: Vec<(DVector<f64>, f64, f64)> = weights
            .entries
            .iter()
            .map(|(s, r, w)| {
                let chain = model.chain(*r);
                let z = &chain.means[r.frame];
                let c = model.conditioner(model.assignment(*s));
                (
                    c.mean_around(&z[..model.dx], &z[model.dx..], &ys),
                    chain.root_heights[r.frame],
                    *w,
                )
            })
            .collect();
        let (x0, h0, _) = &candidates[0];
        let mut x = x0.clone();
        let mut height = *h0;
        for (m, h, w) in &candidates[1..] {
            x.axpy(*w, &(m - x0), 1.0);
            height += w * (h - h0);
        }
        let x = model.zscore.undo(x.as_slice(), 0);
        let feature = FeatureX::from_slice(&x)?;
        let root = model.skeleton.root();
        if self.last_pose.is_some() {
            self.heading += feature.joint_angular_velocity[root].y / model.fps;
        }
        let world = from_heading_frame(&feature, root, self.heading);
        let prev_root = self
            .last_pose
            .as_ref()
            .map_or_else(|| Vec3::new(0.0, height, 0.0), |p| p.root_position);
        let mut pose = pose_from_feature(&world, &prev_root);
        pose.root_position.y = height;
        if !pose.is_finite() {
            return Err(Error::Conditioning("regressed pose is not finite".into()));
        }

        // crossfade every phase switch
        if let (Some(old), Some(last)) = (self.active_phase, self.last_pose.as_ref()) {
            if old != phase {
                let speed = (pose.root_position - last.root_position).norm() * model.fps;
                self.blend = Some(Blend {
                    offsets: pose
                        .joint_rotations
                        .iter()
                        .zip(&last.joint_rotations)
                        .map(|(n, o)| canonical(n.inverse() * o))
                        .collect(),
                    frame: 0,
                    frames: blend_length(speed, self.config.blend_frames, self.config.blend_ref_speed),
                });
            }
        }
        if let Some(b) = self.blend.as_mut() {
            b.frame += 1;
            let alpha = b.frame as f64 / b.frames as f64;
            let from = SkeletonPose {
                root_position: pose.root_position,
                joint_rotations: pose
                    .joint_rotations
                    .iter()
                    .zip(&b.offsets)
                    .map(|(n, o)| n * o)
                    .collect(),
            };
            pose = crossfade(&from, &pose, alpha);
            if b.frame >= b.frames {
                self.blend = None;
            }
        }

        let raw_pose = pose.clone();
        if self.config.foot_lock {
            let contacts = contact_state(
                &model.skeleton,
                &pose,
                self.raw_prev.as_ref(),
                model.fps,
                &self.config.contact,
            )?;
            pose = foot_lock(&model.skeleton, &pose, &contacts, &mut self.anchors)?;
        }
        self.raw_prev = Some(raw_pose);
        self.active_phase = Some(phase);
        self.last_pose = Some(pose.clone());
        self.last_feature = Some(feature.clone());
        self.frames_since_reset += 1;
        Ok(StepOutput {
            pose,
            phase,
            phase_label: model.phases[phase].phase,
            posterior: post[phase],
            weights,
            feature,
            reset,
        })
    }
}

/// Runs a fresh session over a whole sensor stream.
pub fn reconstruct_stream(
    model: Arc<HierarchicalModel>,
    config: ReconstructConfig,
    ys: &[FeatureY],
) -> Result<Vec<StepOutput>> {
    let mut state = ReconstructionState::new(model, config)?;
    ys.iter().map(|y| state.step(y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{build_hierarchy, GaussianState, PhaseGroup, ZScore};
    use crate::motion::rotation::{geodesic, yaw_rotation};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DY: usize = 6;

    fn dx() -> usize {
        FeatureX::dim_for(18)
    }

    fn random_x(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dx()).map(|_| rng.random_range(-0.2..0.2)).collect()
    }

    /// One phase whose chains are the given `(x, y)` single frames.
    fn model(frames: &[(Vec<f64>, Vec<f64>)], cov: DMatrix<f64>, k: usize) -> Arc<HierarchicalModel> {
        let d = dx() + DY;
        let group = PhaseGroup {
            family: "t".into(),
            phase: GaitPhase::IcLr,
            members: frames
                .iter()
                .map(|(x, y)| vec![x.iter().chain(y).copied().collect()])
                .collect(),
            root_heights: frames.iter().map(|_| vec![0.9]).collect(),
            src_segment_ids: (0..frames.len()).collect(),
        };
        let g = GaussianState::new(DVector::zeros(d), cov, dx()).unwrap();
        let z = ZScore {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        };
        Arc::new(
            build_hierarchy(
                Skeleton::biped18(),
                30.0,
                vec![group],
                vec![g],
                z,
                dx(),
                k,
                3,
                0.5,
            )
            .unwrap(),
        )
    }

    fn spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0) * scale);
        &a * a.transpose() + DMatrix::identity(d, d)
    }

    fn feature_y(y: &[f64]) -> FeatureY {
        FeatureY::from_slice(y).unwrap()
    }

    #[test]
    fn single_candidate_emits_its_conditional_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_x(&mut rng);
        let y: Vec<f64> = (0..DY).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = model(&[(x.clone(), y.clone())], spd(&mut rng, dx() + DY, 0.05), 1);
        let mut cfg = ReconstructConfig::for_model(&m);
        cfg.foot_lock = false;
        let mut state = ReconstructionState::new(m.clone(), cfg).unwrap();
        let obs: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let out = state.step(&feature_y(&obs)).unwrap();
        let expected = m.conditioner(m.assignment(0)).mean_around(&x, &y, &obs);
        assert_eq!(out.weights.entries.len(), 1);
        assert_eq!(out.weights.entries[0].2, 1.0);
        let got = out.feature.to_vec();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_mass_candidates_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m1 = random_x(&mut rng);
        let m2 = random_x(&mut rng);
        let y = vec![0.3; DY];
        let m = model(
            &[(m1.clone(), y.clone()), (m2.clone(), y.clone())],
            DMatrix::identity(dx() + DY, dx() + DY),
            5,
        );
        let mut cfg = ReconstructConfig::for_model(&m);
        cfg.foot_lock = false;
        let mut state = ReconstructionState::new(m, cfg).unwrap();
        let out = state.step(&feature_y(&y)).unwrap();
        let w: Vec<f64> = out.weights.entries.iter().map(|e| e.2).collect();
        assert_eq!(w, vec![0.5, 0.5]);
        for ((g, a), b) in out.feature.to_vec().iter().zip(&m1).zip(&m2) {
            assert_relative_eq!(*g, (a + b) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_are_normalized_and_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<(Vec<f64>, Vec<f64>)> = (0..9)
            .map(|_| {
                (
                    random_x(&mut rng),
                    (0..DY).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let m = model(&frames, DMatrix::identity(dx() + DY, dx() + DY), 4);
        let mut state = ReconstructionState::new(
            m,
            ReconstructConfig {
                k: 7,
                ..ReconstructConfig::for_model(&model(
                    &frames[..1],
                    DMatrix::identity(dx() + DY, dx() + DY),
                    4,
                ))
            },
        )
        .unwrap();
        for _ in 0..5 {
            let y: Vec<f64> = (0..DY).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = state.step(&feature_y(&y)).unwrap();
            assert_eq!(out.weights.entries.len(), 4);
            let sum: f64 = out.weights.entries.iter().map(|e| e.2).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(out.weights.entries.windows(2).all(|w| w[0].2 >= w[1].2));
        }
    }

    #[test]
    fn stream_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
            .map(|_| {
                (
                    random_x(&mut rng),
                    (0..DY).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let m = model(&frames, spd(&mut rng, dx() + DY, 0.02), 2);
        let ys: Vec<FeatureY> = (0..20)
            .map(|_| feature_y(&(0..DY).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let a = reconstruct_stream(m.clone(), ReconstructConfig::for_model(&m), &ys).unwrap();
        let b = reconstruct_stream(m.clone(), ReconstructConfig::for_model(&m), &ys).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(
            &[(random_x(&mut rng), vec![0.0; DY])],
            DMatrix::identity(dx() + DY, dx() + DY),
            1,
        );
        let mut state = ReconstructionState::new(m.clone(), ReconstructConfig::for_model(&m)).unwrap();
        assert!(state.step(&feature_y(&[0.0; 12])).is_err());
        assert!(state
            .step(&feature_y(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]))
            .is_err());
        assert!(ReconstructionState::new(
            m.clone(),
            ReconstructConfig {
                k: 0,
                ..ReconstructConfig::for_model(&m)
            }
        )
        .is_err());
    }

    #[test]
    fn interpolation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mean = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let cov = spd(&mut rng, 4, 1.0);
        let (m, c) = interpolate_models(&[(mean.clone(), cov.clone(), 1.0)]).unwrap();
        assert_eq!(m, mean);
        assert_eq!(c, cov);

        let d = 6;
        let cands: Vec<_> = (0..4)
            .map(|i| {
                (
                    DVector::from_fn(d, |r, _| if r == i { 1.0 } else { 0.0 }),
                    DMatrix::identity(d, d),
                    0.25,
                )
            })
            .collect();
        let (m, _) = interpolate_models(&cands).unwrap();
        assert_eq!(m.as_slice(), &[0.25, 0.25, 0.25, 0.25, 0.0, 0.0]);

        assert!(interpolate_models(&[]).is_err());
    }

    #[test]
    fn interpolated_covariance_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = rng.random_range(1..8);
            let k = rng.random_range(1..6);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let cands: Vec<_> = raw
                .iter()
                .map(|w| {
                    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                    (
                        DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                        &a * a.transpose(),
                        w / total,
                    )
                })
                .collect();
            let (_, c) = interpolate_models(&cands).unwrap();
            assert_relative_eq!(c.clone(), c.transpose(), epsilon = 1e-12);
            assert!(SymmetricEigen::new(c).eigenvalues.min() >= -1e-10);
        }
    }

    fn rotated_pose(angle: f64) -> SkeletonPose {
        let mut p = SkeletonPose::identity(18);
        p.joint_rotations[1] = yaw_rotation(angle);
        p
    }

    #[test]
    fn crossfade_endpoints_and_midpoint() {
        let a = rotated_pose(0.0);
        let b = rotated_pose(std::f64::consts::FRAC_PI_2);
        assert_eq!(crossfade(&a, &b, 0.0), a);
        let end = crossfade(&a, &b, 1.0);
        assert!(geodesic(&end.joint_rotations[1], &b.joint_rotations[1]) < 1e-12);
        let mid = crossfade(&a, &b, 0.5);
        let angle = geodesic(&mid.joint_rotations[1], &a.joint_rotations[1]);
        assert!((angle.to_degrees() - 45.0).abs() < 0.5, "{}", angle.to_degrees());
        for t in [0.0, 0.3, 0.7, 1.0] {
            let same = crossfade(&b, &b, t);
            assert!(geodesic(&same.joint_rotations[1], &b.joint_rotations[1]) < 1e-12);
        }
    }

    #[test]
    fn blend_shortens_with_speed() {
        assert_eq!(blend_length(0.0, 8, 1.0), 8);
        assert_eq!(blend_length(1.0, 8, 1.0), 4);
        assert_eq!(blend_length(100.0, 8, 1.0), 2);
        assert_eq!(blend_length(0.0, 1, 1.0), 2);
        let mut last = usize::MAX;
        for v in 0..40 {
            let n = blend_length(v as f64 * 0.1, 12, 1.0);
            assert!(n <= last);
            last = n;
        }
    }

    fn standing() -> (Skeleton, SkeletonPose) {
        let sk = Skeleton::biped18();
        let mut p = SkeletonPose::identity(sk.len());
        p.root_position = Vec3::new(0.0, Skeleton::STANDING_ROOT_HEIGHT, 0.0);
        (sk, p)
    }

    fn both_down() -> ContactState {
        ContactState {
            rh: true,
            rt: true,
            lh: true,
            lt: true,
            rce: false,
            lce: false,
        }
    }

    #[test]
    fn foot_at_anchor_is_unchanged() {
        let (sk, p) = standing();
        let pos = forward_kinematics(&sk, &p);
        let r = sk.leg(Side::Right).unwrap().ankle;
        let l = sk.leg(Side::Left).unwrap().ankle;
        let mut anchors = [Some(pos[r]), Some(pos[l])];
        let out = foot_lock(&sk, &p, &both_down(), &mut anchors).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn sunken_foot_is_lifted_to_ground() {
        let (sk, mut p) = standing();
        p.root_position.y -= 0.01;
        let mut anchors = [None, None];
        let out = foot_lock(&sk, &p, &ContactState::default(), &mut anchors).unwrap();
        let pos = forward_kinematics(&sk, &out);
        for side in [Side::Right, Side::Left] {
            assert_relative_eq!(pos[sk.leg(side).unwrap().ankle].y, 0.0, epsilon = 1e-9);
        }
        assert_eq!(anchors, [None, None]);
    }

    #[test]
    fn reachable_anchor_is_hit() {
        let (sk, p) = standing();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let leg = sk.leg(Side::Right).unwrap();
        for _ in 0..100 {
            let hip = forward_kinematics(&sk, &p)[leg.hip];
            let dir = Vec3::new(rng.random_range(-0.5..0.5), -1.0, rng.random_range(-0.5..0.5)).normalize();
            let target = hip + dir * rng.random_range(0.3..0.8);
            let mut anchors = [Some(target), None];
            let contacts = ContactState {
                rh: true,
                ..Default::default()
            };
            let out = foot_lock(&sk, &p, &contacts, &mut anchors).unwrap();
            let got = forward_kinematics(&sk, &out)[leg.ankle];
            assert!((got - target).norm() < 1e-6, "{}", (got - target).norm());
        }
    }

    #[test]
    fn anchor_is_taken_at_first_contact_and_released() {
        let (sk, p) = standing();
        let leg = sk.leg(Side::Right).unwrap();
        let mut anchors = [None, None];
        let contacts = ContactState {
            rh: true,
            ..Default::default()
        };
        foot_lock(&sk, &p, &contacts, &mut anchors).unwrap();
        let anchor = anchors[0].unwrap();
        assert_relative_eq!(anchor, forward_kinematics(&sk, &p)[leg.ankle], epsilon = 1e-12);
        // the body moves on; the locked foot stays put
        let mut moved = p.clone();
        moved.root_position += Vec3::new(0.0, -0.08, 0.05);
        let out = foot_lock(&sk, &moved, &contacts, &mut anchors).unwrap();
        assert!((forward_kinematics(&sk, &out)[leg.ankle] - anchor).norm() < 1e-6);
        foot_lock(&sk, &moved, &ContactState::default(), &mut anchors).unwrap();
        assert_eq!(anchors[0], None);
    }
}
