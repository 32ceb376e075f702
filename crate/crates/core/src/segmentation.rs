//! Gait-phase segmentation.
//!
//! Walking and running are split into the eight phases of one gait cycle
//! using heel/toe ground contact and ankle crossing events; jumps and hops
//! are split at contact changes and at the apex of the root's flight.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::kinematics::forward_kinematics;
use crate::motion::rotation::yaw_of;
use crate::motion::skeleton::{Leg, Side};
use crate::motion::{FeatureY, JointObservation, MotionClip, Skeleton, SkeletonPose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GaitPhase {
    IcLr,
    LrMst,
    MstTst,
    TstPsw,
    PswIsw,
    IswMsw,
    MswTsw,
    TswIc,
    AirborneUp,
    AirborneDown,
    Idle,
}

impl GaitPhase {
    /// The eight gait-cycle phases in cyclic order.
    pub const GAIT: [GaitPhase; 8] = [
        GaitPhase::IcLr,
        GaitPhase::LrMst,
        GaitPhase::MstTst,
        GaitPhase::TstPsw,
        GaitPhase::PswIsw,
        GaitPhase::IswMsw,
        GaitPhase::MswTsw,
        GaitPhase::TswIc,
    ];

    pub const ALL: [GaitPhase; 11] = [
        GaitPhase::IcLr,
        GaitPhase::LrMst,
        GaitPhase::MstTst,
        GaitPhase::TstPsw,
        GaitPhase::PswIsw,
        GaitPhase::IswMsw,
        GaitPhase::MswTsw,
        GaitPhase::TswIc,
        GaitPhase::AirborneUp,
        GaitPhase::AirborneDown,
        GaitPhase::Idle,
    ];

    pub fn is_gait(self) -> bool {
        self.gait_index().is_some()
    }

    pub fn gait_index(self) -> Option<usize> {
        GaitPhase::GAIT.iter().position(|p| *p == self)
    }

    /// Position in the fixed ordering used for tie breaks.
    pub fn order(self) -> usize {
        GaitPhase::ALL.iter().position(|p| *p == self).unwrap()
    }

    /// Successor phase: the next gait phase in the cycle, descent after
    /// ascent, ground after descent.
    pub fn successor(self) -> GaitPhase {
        match self.gait_index() {
            Some(i) => GaitPhase::GAIT[(i + 1) % 8],
            None => match self {
                GaitPhase::AirborneUp => GaitPhase::AirborneDown,
                GaitPhase::AirborneDown => GaitPhase::Idle,
                _ => GaitPhase::AirborneUp,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitPhase::IcLr => "IC_LR",
            GaitPhase::LrMst => "LR_MST",
            GaitPhase::MstTst => "MST_TST",
            GaitPhase::TstPsw => "TST_PSW",
            GaitPhase::PswIsw => "PSW_ISW",
            GaitPhase::IswMsw => "ISW_MSW",
            GaitPhase::MswTsw => "MSW_TSW",
            GaitPhase::TswIc => "TSW_IC",
            GaitPhase::AirborneUp => "AIRBORNE_UP",
            GaitPhase::AirborneDown => "AIRBORNE_DOWN",
            GaitPhase::Idle => "IDLE",
        }
    }
}

impl fmt::Display for GaitPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GaitPhase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GaitPhase::ALL
            .iter()
            .copied()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Data(format!("unknown gait phase '{s}'")))
    }
}

/// Thresholds for contact detection and flight splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    /// Meters.
    pub height_eps: f64,
    /// m/s.
    pub vel_eps: f64,
    /// Peak vertical root speed (m/s) a contact-free interval needs to count
    /// as a flight.
    pub min_flight_speed: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            height_eps: 0.03,
            vel_eps: 0.15,
            min_flight_speed: 0.3,
        }
    }
}

/// Heel/toe ground contact per foot plus ankle crossing events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContactState {
    pub rh: bool,
    pub rt: bool,
    pub lh: bool,
    pub lt: bool,
    pub rce: bool,
    pub lce: bool,
}

impl ContactState {
    /// The same state with left and right swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            rh: self.lh,
            rt: self.lt,
            lh: self.rh,
            lt: self.rt,
            rce: self.lce,
            lce: self.rce,
        }
    }

    pub fn any_contact(&self) -> bool {
        self.rh || self.rt || self.lh || self.lt
    }

    /// Start condition of a right-leading cycle: right heel down while the
    /// left foot is rolling off its toe.
    fn cycle_start(&self) -> bool {
        self.rh && self.lt && !self.lh
    }

    /// Whether the end condition of `phase` holds, right-leading.
    fn ends(&self, phase: GaitPhase) -> bool {
        let s = self;
        match phase {
            GaitPhase::IcLr => s.rh && s.rt && !s.lt,
            GaitPhase::LrMst => s.rh && s.rt && s.lce,
            GaitPhase::MstTst => s.rt && !s.rh && !s.lh && !s.lt,
            GaitPhase::TstPsw => s.rt && s.lh,
            GaitPhase::PswIsw => !s.rt && s.lh && s.lt,
            GaitPhase::IswMsw => s.rce && s.lh && s.lt,
            GaitPhase::MswTsw => !s.rh && !s.rt && s.lt && !s.lh,
            GaitPhase::TswIc => s.rh && s.lt,
            _ => false,
        }
    }
}

fn facing(heading: f64) -> Vec3 {
    Vec3::new(heading.sin(), 0.0, heading.cos())
}

/// Leg joints and root index used by the contact test.
#[derive(Debug, Clone, Copy)]
struct Feet {
    root: usize,
    right: Leg,
    left: Leg,
}

impl Feet {
    fn new(skeleton: &Skeleton) -> Result<Self> {
        Ok(Self {
            root: skeleton.root(),
            right: skeleton.leg(Side::Right)?,
            left: skeleton.leg(Side::Left)?,
        })
    }

    fn state(
        &self,
        pose: &SkeletonPose,
        positions: &[Vec3],
        prev: Option<&[Vec3]>,
        fps: f64,
        params: &SegmentParams,
    ) -> ContactState {
        let touching = |j: usize| {
            let p = positions[j];
            let speed = prev.map_or(0.0, |q| (p - q[j]).norm() * fps);
            p.y < params.height_eps && speed < params.vel_eps
        };
        let f = facing(yaw_of(&pose.joint_rotations[self.root]));
        let lead = (positions[self.right.ankle] - positions[self.left.ankle]).dot(&f);
        ContactState {
            rh: touching(self.right.ankle),
            rt: touching(self.right.toe),
            lh: touching(self.left.ankle),
            lt: touching(self.left.toe),
            rce: lead > 0.0,
            lce: lead < 0.0,
        }
    }
}

/// Ground contact and crossing state of `pose`. Contact requires the heel
/// (ankle joint) or toe joint to be below `height_eps` and, when
/// `prev_pose` is given, slower than `vel_eps` over one frame at `fps`.
/// `rce` holds when the right ankle is ahead of the left ankle along the
/// hips' ground-projected facing direction; `lce` symmetrically.
pub fn contact_state(
    skeleton: &Skeleton,
    pose: &SkeletonPose,
    prev_pose: Option<&SkeletonPose>,
    fps: f64,
    params: &SegmentParams,
) -> Result<ContactState> {
    let feet = Feet::new(skeleton)?;
    let p = forward_kinematics(skeleton, pose);
    let q = prev_pose.map(|pp| forward_kinematics(skeleton, pp));
    Ok(feet.state(pose, &p, q.as_deref(), fps, params))
}

/// Contact state of every frame of `clip`; frame 0 has no velocity term.
pub fn contact_states(clip: &MotionClip, params: &SegmentParams) -> Result<Vec<ContactState>> {
    let skel = clip.skeleton.as_ref();
    let feet = Feet::new(skel)?;
    let positions: Vec<Vec<Vec3>> = clip.frames.iter().map(|p| forward_kinematics(skel, p)).collect();
    Ok((0..clip.len())
        .map(|t| {
            let prev = if t > 0 {
                Some(positions[t - 1].as_slice())
            } else {
                None
            };
            feet.state(&clip.frames[t], &positions[t], prev, clip.fps, params)
        })
        .collect())
}

/// A labelled frame span `[start, end)` of a clip with its poses and
/// paired motion/sensor features.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSegment {
    pub phase: GaitPhase,
    pub start: usize,
    pub end: usize,
    pub poses: Vec<SkeletonPose>,
    pub observations: Vec<JointObservation>,
}

impl PhaseSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn sensors(&self) -> Vec<FeatureY> {
        self.observations.iter().map(|o| o.y.clone()).collect()
    }
}

fn check_inputs(clip: &MotionClip, observations: &[JointObservation]) -> Result<()> {
    if observations.len() != clip.len() {
        return Err(Error::Alignment(format!(
            "clip has {} frames but {} feature frames were given",
            clip.len(),
            observations.len()
        )));
    }
    Ok(())
}

fn build_segments(
    clip: &MotionClip,
    observations: &[JointObservation],
    spans: &[(GaitPhase, usize, usize)],
) -> Vec<PhaseSegment> {
    spans
        .iter()
        .filter(|(_, s, e)| e > s)
        .map(|&(phase, start, end)| PhaseSegment {
            phase,
            start,
            end,
            poses: clip.frames[start..end].to_vec(),
            observations: observations[start..end].to_vec(),
        })
        .collect()
}

/// Finite-state scan over per-frame contact states.
///
/// The scan locks onto the first frame where one heel touches down while the
/// other foot is on its toe only; earlier frames are `Idle`. Whichever side
/// touches down first leads; the conditions are mirrored for a left lead.
/// From then on a segment ends at the first frame (after its first frame)
/// where its end condition holds, and the successor phase begins there.
/// Returns `(phase, start, end)` spans, or `None` when no lock was found.
pub fn scan_gait_phases(states: &[ContactState]) -> Option<Vec<(GaitPhase, usize, usize)>> {
    let n = states.len();
    let (lock, mirror) = states.iter().enumerate().find_map(|(t, s)| {
        if s.cycle_start() {
            Some((t, false))
        } else if s.mirrored().cycle_start() {
            Some((t, true))
        } else {
            None
        }
    })?;
    let mut spans = Vec::new();
    if lock > 0 {
        spans.push((GaitPhase::Idle, 0, lock));
    }
    let mut phase = GaitPhase::IcLr;
    let mut start = lock;
    for (t, s) in states.iter().enumerate().skip(lock + 1) {
        if t <= start {
            continue;
        }
        let s = if mirror { s.mirrored() } else { *s };
        if s.ends(phase) {
            spans.push((phase, start, t));
            phase = phase.successor();
            start = t;
        }
    }
    spans.push((phase, start, n));
    Some(spans)
}

/// Splits a walking or running clip into gait phases.
///
/// When no cycle start is detected the clip becomes one `Idle` segment,
/// unless `expect_gait` is set, in which case that is an error.
pub fn segment_gait(
    clip: &MotionClip,
    observations: &[JointObservation],
    params: &SegmentParams,
    expect_gait: bool,
) -> Result<Vec<PhaseSegment>> {
    check_inputs(clip, observations)?;
    let states = contact_states(clip, params)?;
    let spans = match scan_gait_phases(&states) {
        Some(spans) => {
            let gait = spans.iter().filter(|(p, _, _)| p.is_gait()).count();
            if gait < 2 && expect_gait {
                let start = spans.last().map_or(0, |s| s.1);
                return Err(Error::Segmentation {
                    start,
                    end: clip.len(),
                    msg: "gait cycle start found but no phase boundary after it".into(),
                });
            }
            spans
        }
        None if expect_gait => {
            return Err(Error::Segmentation {
                start: 0,
                end: clip.len(),
                msg: "no heel strike with the opposite foot on its toe".into(),
            })
        }
        None => vec![(GaitPhase::Idle, 0, clip.len())],
    };
    log::debug!("segmented {} frames into {} spans", clip.len(), spans.len());
    Ok(build_segments(clip, observations, &spans))
}

/// Labels contact-free intervals by root height: rising until the highest
/// root frame, falling after it. Frames with any foot contact, and flights
/// whose peak vertical root speed stays below `min_flight_speed`, are
/// `Idle`.
pub fn scan_flight_phases(
    contact: &[bool],
    root_height: &[f64],
    fps: f64,
    min_flight_speed: f64,
) -> Vec<(GaitPhase, usize, usize)> {
    let n = contact.len();
    let mut labels = vec![GaitPhase::Idle; n];
    let mut t = 0;
    while t < n {
        if contact[t] {
            t += 1;
            continue;
        }
        let a = t;
        while t < n && !contact[t] {
            t += 1;
        }
        let b = t;
        let peak_speed = (a..b)
            .map(|k| {
                let lo = k.saturating_sub(1);
                let hi = (k + 1).min(n - 1);
                if hi == lo {
                    0.0
                } else {
                    (root_height[hi] - root_height[lo]) * fps / (hi - lo) as f64
                }
            })
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if peak_speed < min_flight_speed {
            continue;
        }
        let mut apex = a;
        for k in a..b {
            if root_height[k] > root_height[apex] {
                apex = k;
            }
        }
        for (k, slot) in labels.iter_mut().enumerate().take(b).skip(a) {
            *slot = if k < apex {
                GaitPhase::AirborneUp
            } else {
                GaitPhase::AirborneDown
            };
        }
    }
    let mut spans: Vec<(GaitPhase, usize, usize)> = Vec::new();
    for (k, p) in labels.into_iter().enumerate() {
        match spans.last_mut() {
            Some(last) if last.0 == p => last.2 = k + 1,
            _ => spans.push((p, k, k + 1)),
        }
    }
    spans
}

/// Splits a jump or hop clip at contact changes and flight apexes.
pub fn segment_by_speed(
    clip: &MotionClip,
    observations: &[JointObservation],
    params: &SegmentParams,
) -> Result<Vec<PhaseSegment>> {
    check_inputs(clip, observations)?;
    let states = contact_states(clip, params)?;
    let contact: Vec<bool> = states.iter().map(|s| s.any_contact()).collect();
    let heights: Vec<f64> = clip.frames.iter().map(|p| p.root_position.y).collect();
    let spans = scan_flight_phases(&contact, &heights, clip.fps, params.min_flight_speed);
    Ok(build_segments(clip, observations, &spans))
}

/// Gait segmentation when a cycle is found, flight segmentation otherwise.
pub fn segment_auto(
    clip: &MotionClip,
    observations: &[JointObservation],
    params: &SegmentParams,
) -> Result<Vec<PhaseSegment>> {
    let gait = segment_gait(clip, observations, params, false)?;
    if gait.iter().any(|s| s.phase.is_gait()) {
        return Ok(gait);
    }
    segment_by_speed(clip, observations, params)
}
