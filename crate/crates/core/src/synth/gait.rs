use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::motion::kinematics::{forward_kinematics, solve_leg};
use crate::motion::rotation::{canonical, yaw_of, yaw_rotation};
use crate::motion::skeleton::{Leg, Side};
use crate::motion::{MotionClip, Quat, Skeleton, SkeletonPose, Vec3};
use crate::segmentation::GaitPhase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionType {
    Walk,
    Run,
    Jump,
    Hop,
    Idle,
}

impl MotionType {
    pub fn is_gait(self) -> bool {
        matches!(self, MotionType::Walk | MotionType::Run)
    }

    pub fn is_flight(self) -> bool {
        matches!(self, MotionType::Jump | MotionType::Hop)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionType::Walk => "walk",
            MotionType::Run => "run",
            MotionType::Jump => "jump",
            MotionType::Hop => "hop",
            MotionType::Idle => "idle",
        }
    }
}

impl fmt::Display for MotionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "walk" => Ok(MotionType::Walk),
            "run" => Ok(MotionType::Run),
            "jump" => Ok(MotionType::Jump),
            "hop" => Ok(MotionType::Hop),
            "idle" => Ok(MotionType::Idle),
            other => Err(Error::Config(format!("unsupported motion type '{other}'"))),
        }
    }
}

/// Per-cycle variation. `stride`, `duration` and `arm_swing` are relative
/// standard deviations; `trunk` is an absolute lean deviation in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitNoise {
    pub stride: f64,
    pub duration: f64,
    pub arm_swing: f64,
    pub trunk: f64,
}

impl GaitNoise {
    pub const NONE: GaitNoise = GaitNoise {
        stride: 0.0,
        duration: 0.0,
        arm_swing: 0.0,
        trunk: 0.0,
    };
}

impl Default for GaitNoise {
    fn default() -> Self {
        Self {
            stride: 0.05,
            duration: 0.04,
            arm_swing: 0.15,
            trunk: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitSpec {
    pub motion_type: MotionType,
    /// Seconds per cycle (one stride, one jump or one hop).
    pub cycle_duration: f64,
    /// Meters travelled per cycle.
    pub stride_length: f64,
    /// Heading drift, rad/s.
    pub turn_rate: f64,
    pub cycles: usize,
    pub fps: f64,
    pub noise: GaitNoise,
    pub seed: u64,
}

impl GaitSpec {
    /// Defaults for `motion_type` with no per-cycle variation.
    pub fn new(motion_type: MotionType) -> Self {
        let (cycle_duration, stride_length) = match motion_type {
            MotionType::Walk => (1.1, 1.0),
            MotionType::Run => (0.8, 1.1),
            MotionType::Jump => (1.2, 0.4),
            MotionType::Hop => (0.9, 0.3),
            MotionType::Idle => (1.0, 0.0),
        };
        Self {
            motion_type,
            cycle_duration,
            stride_length,
            turn_rate: 0.0,
            cycles: 4,
            fps: 30.0,
            noise: GaitNoise::NONE,
            seed: 0,
        }
    }

    pub fn cycles(mut self, cycles: usize) -> Self {
        self.cycles = cycles;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn noise(mut self, noise: GaitNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn turn_rate(mut self, rate: f64) -> Self {
        self.turn_rate = rate;
        self
    }

    pub fn fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.cycle_duration > 0.0) {
            return Err(Error::Config("cycle_duration must be positive".into()));
        }
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be at least 1".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        if !(self.stride_length >= 0.0) || !self.turn_rate.is_finite() {
            return Err(Error::Config("stride and turn rate must be finite".into()));
        }
        let n = self.noise;
        if [n.stride, n.duration, n.arm_swing, n.trunk]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::Config("noise standard deviations must be >= 0".into()));
        }
        Ok(())
    }
}

/// One take-off/apex/landing triple, frame indices into the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlightEvent {
    pub takeoff: usize,
    pub apex: usize,
    pub landing: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedGait {
    pub clip: MotionClip,
    /// Phase each frame belongs to according to the generator's own event
    /// times. Walk and run frames carry gait phases; jump and hop frames
    /// carry `AirborneUp`/`AirborneDown`/`Idle`.
    pub schedule: Vec<GaitPhase>,
    pub flights: Vec<FlightEvent>,
}

impl GeneratedGait {
    /// `(start_frame, phase)` for every change in the schedule.
    pub fn boundaries(&self) -> Vec<(usize, GaitPhase)> {
        let mut out: Vec<(usize, GaitPhase)> = Vec::new();
        for (t, p) in self.schedule.iter().enumerate() {
            if out.last().is_none_or(|(_, q)| q != p) {
                out.push((t, *p));
            }
        }
        out
    }
}

pub fn generate_gait(spec: &GaitSpec, skeleton: &Arc<Skeleton>) -> Result<MotionClip> {
    Ok(generate_with_schedule(spec, skeleton)?.clip)
}

pub fn generate_with_schedule(spec: &GaitSpec, skeleton: &Arc<Skeleton>) -> Result<GeneratedGait> {
    generate_mixed(std::slice::from_ref(spec), skeleton)
}

/// Generates consecutive pieces as one continuous clip; styles blend across
/// piece boundaries. Mixing is supported among walk/run pieces; other types
/// must stand alone. The first spec's seed, fps and turn rate apply.
pub fn generate_mixed(specs: &[GaitSpec], skeleton: &Arc<Skeleton>) -> Result<GeneratedGait> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Config("no gait spec given".into()))?;
    for s in specs {
        s.validate()?;
    }
    if specs.len() > 1 && specs.iter().any(|s| !s.motion_type.is_gait()) {
        return Err(Error::Config(
            "only walk and run pieces can be mixed in one clip".into(),
        ));
    }
    let rig = Rig::new(skeleton)?;
    let plan = Plan::new(specs, &rig);
    let fps = first.fps;
    let frames_total = (plan.total_duration() * fps + 1e-9).floor() as usize;
    let frames_total = frames_total.max(1);
    let frames: Vec<SkeletonPose> = (0..frames_total)
        .map(|k| plan.pose_at(k as f64 / fps, &rig))
        .collect();
    let clip = MotionClip::new(skeleton.clone(), fps, frames)?;
    let (schedule, flights) = plan.schedule(frames_total, fps, &rig);
    Ok(GeneratedGait {
        clip,
        schedule,
        flights,
    })
}

struct Rig {
    skeleton: Arc<Skeleton>,
    right: Leg,
    left: Leg,
    spine: usize,
    neck: usize,
    head: usize,
    shoulders: [usize; 2],
    elbows: [usize; 2],
    foot_length: f64,
    lateral: f64,
}

impl Rig {
    fn new(skeleton: &Arc<Skeleton>) -> Result<Self> {
        let s = skeleton.as_ref();
        let right = s.leg(Side::Right)?;
        let left = s.leg(Side::Left)?;
        Ok(Self {
            skeleton: skeleton.clone(),
            right,
            left,
            spine: s.require("spine")?,
            neck: s.require("neck")?,
            head: s.require("head")?,
            shoulders: [s.require("right_shoulder")?, s.require("left_shoulder")?],
            elbows: [s.require("right_elbow")?, s.require("left_elbow")?],
            foot_length: s.joint(right.toe).offset.norm(),
            lateral: s.joint(left.hip).offset.x.abs(),
        })
    }

    fn leg(&self, side: Side) -> Leg {
        match side {
            Side::Right => self.right,
            Side::Left => self.left,
        }
    }
}

/// Body style knobs; interpolated between cycles.
#[derive(Debug, Clone, Copy)]
struct Style {
    root_height: f64,
    bob: f64,
    lift: f64,
    arm_swing: f64,
    elbow: f64,
    lean: f64,
    pelvis_yaw: f64,
    pelvis_roll: f64,
    strike_pitch: f64,
    toe_off_pitch: f64,
    ahead: f64,
}

impl Style {
    fn for_type(t: MotionType) -> Self {
        match t {
            MotionType::Run => Style {
                root_height: 0.80,
                bob: 0.03,
                lift: 0.12,
                arm_swing: 0.55,
                elbow: 1.1,
                lean: 0.12,
                pelvis_yaw: 0.12,
                pelvis_roll: 0.04,
                strike_pitch: -0.25,
                toe_off_pitch: 0.7,
                ahead: 0.25,
            },
            MotionType::Jump | MotionType::Hop => Style {
                root_height: 0.86,
                bob: 0.10,
                lift: 0.0,
                arm_swing: 0.6,
                elbow: 0.4,
                lean: 0.1,
                pelvis_yaw: 0.0,
                pelvis_roll: 0.0,
                strike_pitch: 0.0,
                toe_off_pitch: 0.0,
                ahead: 0.0,
            },
            MotionType::Idle => Style {
                root_height: Skeleton::STANDING_ROOT_HEIGHT - 0.01,
                bob: 0.0,
                lift: 0.0,
                arm_swing: 0.0,
                elbow: 0.15,
                lean: 0.02,
                pelvis_yaw: 0.0,
                pelvis_roll: 0.0,
                strike_pitch: 0.0,
                toe_off_pitch: 0.0,
                ahead: 0.0,
            },
            MotionType::Walk => Style {
                root_height: 0.83,
                bob: 0.012,
                lift: 0.06,
                arm_swing: 0.30,
                elbow: 0.25,
                lean: 0.04,
                pelvis_yaw: 0.08,
                pelvis_roll: 0.03,
                strike_pitch: -0.30,
                toe_off_pitch: 0.60,
                ahead: 0.25,
            },
        }
    }

    fn lerp(&self, o: &Style, t: f64) -> Style {
        let l = |a: f64, b: f64| a + (b - a) * t;
        Style {
            root_height: l(self.root_height, o.root_height),
            bob: l(self.bob, o.bob),
            lift: l(self.lift, o.lift),
            arm_swing: l(self.arm_swing, o.arm_swing),
            elbow: l(self.elbow, o.elbow),
            lean: l(self.lean, o.lean),
            pelvis_yaw: l(self.pelvis_yaw, o.pelvis_yaw),
            pelvis_roll: l(self.pelvis_roll, o.pelvis_roll),
            strike_pitch: l(self.strike_pitch, o.strike_pitch),
            toe_off_pitch: l(self.toe_off_pitch, o.toe_off_pitch),
            ahead: l(self.ahead, o.ahead),
        }
    }
}

// Foot-local event fractions of a walking/running stride, measured from
// that foot's heel strike.
const TOE_FLAT: f64 = 0.05;
const HEEL_OFF: f64 = 0.40;
const TOE_OFF: f64 = 0.62;

#[derive(Debug, Clone, Copy)]
struct Cycle {
    start: f64,
    duration: f64,
    stride: f64,
    style: Style,
    /// Root ground position at the cycle start.
    origin: Vec3,
}

/// Continuous-time description of the whole clip.
struct Plan {
    kind: MotionType,
    cycles: Vec<Cycle>,
    turn_rate: f64,
    fps: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn facing(heading: f64) -> Vec3 {
    Vec3::new(heading.sin(), 0.0, heading.cos())
}

/// The character's left, perpendicular to `facing(heading)`.
fn left_of(heading: f64) -> Vec3 {
    Vec3::new(heading.cos(), 0.0, -heading.sin())
}

fn rot_x(a: f64) -> Quat {
    canonical(UnitQuaternion::from_axis_angle(&Vec3::x_axis(), a))
}

fn rot_z(a: f64) -> Quat {
    canonical(UnitQuaternion::from_axis_angle(&Vec3::z_axis(), a))
}

/// Where a foot is and how it is oriented.
#[derive(Debug, Clone, Copy)]
struct FootState {
    heel: Vec3,
    pitch: f64,
    yaw: f64,
}

impl Plan {
    fn new(specs: &[GaitSpec], _rig: &Rig) -> Self {
        let first = &specs[0];
        let mut rng = ChaCha8Rng::seed_from_u64(first.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut cycles = Vec::new();
        let mut start = 0.0;
        for spec in specs {
            let base = Style::for_type(spec.motion_type);
            for _ in 0..spec.cycles {
                let n = spec.noise;
                let stride_scale = (1.0 + n.stride * unit.sample(&mut rng)).max(0.2);
                let dur_scale = (1.0 + n.duration * unit.sample(&mut rng)).max(0.2);
                let arm_scale = (1.0 + n.arm_swing * unit.sample(&mut rng)).max(0.0);
                let lean = n.trunk * unit.sample(&mut rng);
                let mut style = base;
                style.arm_swing *= arm_scale;
                style.lean += lean;
                let duration = spec.cycle_duration * dur_scale;
                let stride = spec.stride_length * stride_scale;
                cycles.push(Cycle {
                    start,
                    duration,
                    stride,
                    style,
                    origin: Vec3::zeros(),
                });
                start += duration;
            }
        }
        let mut plan = Plan {
            kind: first.motion_type,
            cycles,
            turn_rate: first.turn_rate,
            fps: first.fps,
        };
        // root ground positions at cycle starts, integrated in closed form
        let mut origin = Vec3::zeros();
        for i in 0..plan.cycles.len() {
            plan.cycles[i].origin = origin;
            origin = plan.cycle_end(&plan.cycles[i]);
        }
        plan
    }

    fn total_duration(&self) -> f64 {
        let last = self.cycles.last().unwrap();
        last.start + last.duration
    }

    fn heading(&self, t: f64) -> f64 {
        self.turn_rate * t
    }

    /// Index of the cycle containing `t`; times outside the clip use the
    /// first or last cycle extended.
    fn cycle_index(&self, t: f64) -> usize {
        self.cycles
            .iter()
            .rposition(|c| c.start <= t + 1e-12)
            .unwrap_or_default()
    }

    /// Cycle record for a possibly virtual index (before the first or after
    /// the last cycle), extrapolated with the neighbouring cycle's values.
    fn cycle(&self, i: isize) -> Cycle {
        let n = self.cycles.len() as isize;
        if i < 0 {
            let mut c = self.cycles[0];
            c.start -= c.duration * (-i) as f64;
            c.origin = if self.kind.is_flight() {
                c.origin - facing(self.heading(c.start)) * (c.stride * (-i) as f64)
            } else {
                self.path_within(&c, c.start)
            };
            c
        } else if i >= n {
            let last = self.cycles[(n - 1) as usize];
            let k = (i - n + 1) as f64;
            let mut c = last;
            c.start += last.duration * k;
            c.origin = self.cycle_end(&self.cycle(i - 1));
            c
        } else {
            self.cycles[i as usize]
        }
    }

    fn cycle_end(&self, c: &Cycle) -> Vec3 {
        if self.kind.is_flight() {
            c.origin + facing(self.heading(c.start)) * c.stride
        } else {
            self.path_within(c, c.start + c.duration)
        }
    }

    /// Ground position of the root at time `t` assuming `c`'s constant speed.
    fn path_within(&self, c: &Cycle, t: f64) -> Vec3 {
        let speed = if self.kind.is_flight() {
            0.0
        } else {
            c.stride / c.duration
        };
        let h0 = self.heading(c.start);
        let h1 = self.heading(t);
        let dt = t - c.start;
        let delta = if self.turn_rate.abs() < 1e-12 {
            facing(h0) * (speed * dt)
        } else {
            let w = self.turn_rate;
            Vec3::new(
                speed / w * (h0.cos() - h1.cos()),
                0.0,
                speed / w * (h1.sin() - h0.sin()),
            )
        };
        c.origin + delta
    }

    /// Root ground position (y = 0).
    fn root_ground(&self, t: f64) -> Vec3 {
        let i = self.cycle_index(t);
        let c = self.cycle(i as isize);
        if self.kind.is_flight() {
            // the root only travels while airborne
            let u = ((t - c.start) / c.duration).clamp(0.0, 1.0);
            let tau = ((u - 0.5) / 0.5).clamp(0.0, 1.0);
            return c.origin + facing(self.heading(c.start)) * (c.stride * tau);
        }
        self.path_within(&c, t)
    }

    fn phase_u(&self, t: f64) -> (usize, f64) {
        let i = self.cycle_index(t);
        let c = self.cycle(i as isize);
        (i, ((t - c.start) / c.duration).clamp(0.0, 1.0))
    }

    fn style(&self, t: f64) -> Style {
        let (i, u) = self.phase_u(t);
        let a = self.cycle(i as isize).style;
        let b = self.cycle(i as isize + 1).style;
        a.lerp(&b, smoothstep(u))
    }

    fn root_height(&self, t: f64, style: &Style) -> f64 {
        let (_, u) = self.phase_u(t);
        match self.kind {
            MotionType::Jump | MotionType::Hop => {
                let apex = if self.kind == MotionType::Jump { 0.15 } else { 0.10 };
                if u < 0.5 {
                    let s = (PI * u / 0.5).sin();
                    style.root_height - style.bob * s * s
                } else {
                    let tau = (u - 0.5) / 0.5;
                    style.root_height + apex * 4.0 * tau * (1.0 - tau)
                }
            }
            MotionType::Idle => style.root_height,
            _ => style.root_height - style.bob * (2.0 * TAU * u).cos(),
        }
    }

    fn pelvis_yaw(&self, t: f64, style: &Style) -> f64 {
        let (_, u) = self.phase_u(t);
        self.heading(t) + style.pelvis_yaw * (TAU * u).cos()
    }

    /// Heel strike times of `side`: right strikes open each cycle, left
    /// strikes fall at mid-cycle.
    fn strike(&self, side: Side, k: isize) -> (f64, Cycle) {
        let c = self.cycle(k);
        let t = match side {
            Side::Right => c.start,
            Side::Left => c.start + 0.5 * c.duration,
        };
        (t, c)
    }

    /// Index `k` of the last strike of `side` at or before `t`.
    fn strike_index(&self, side: Side, t: f64) -> isize {
        let mut k = self.cycle_index(t) as isize + 1;
        while self.strike(side, k).0 > t + 1e-12 {
            k -= 1;
        }
        k
    }

    fn plant(&self, side: Side, k: isize, rig: &Rig) -> (Vec3, f64) {
        let (t, c) = self.strike(side, k);
        let h = self.heading(t);
        let sign = match side {
            Side::Right => -1.0,
            Side::Left => 1.0,
        };
        let pos =
            self.root_ground(t) + facing(h) * (c.style.ahead * c.stride) + left_of(h) * (sign * rig.lateral);
        (pos, h)
    }

    /// Walking/running foot trajectory.
    fn gait_foot(&self, side: Side, t: f64, rig: &Rig) -> FootState {
        let k = self.strike_index(side, t);
        let (t0, c0) = self.strike(side, k);
        let (t1, c1) = self.strike(side, k + 1);
        let d = t1 - t0;
        let s = (t - t0) / d;
        let (p0, yaw0) = self.plant(side, k, rig);
        let (p1, yaw1) = self.plant(side, k + 1, rig);
        let strike0 = c0.style.strike_pitch;
        let off_pitch = c0.style.toe_off_pitch;
        let foot_at = |toe: Vec3, pitch: f64, yaw: f64| -> Vec3 {
            toe - yaw_rotation(yaw) * rot_x(pitch) * Vec3::new(0.0, 0.0, rig.foot_length)
        };
        if s < TOE_FLAT {
            let x = s / TOE_FLAT;
            FootState {
                heel: p0,
                pitch: strike0 * (1.0 - (0.5 * PI * x).sin()),
                yaw: yaw0,
            }
        } else if s < HEEL_OFF {
            FootState {
                heel: p0,
                pitch: 0.0,
                yaw: yaw0,
            }
        } else if s < TOE_OFF {
            let tau = (s - HEEL_OFF) / (TOE_OFF - HEEL_OFF);
            let pitch = off_pitch * (0.5 * PI * tau).sin();
            let toe = p0 + yaw_rotation(yaw0) * Vec3::new(0.0, 0.0, rig.foot_length);
            FootState {
                heel: foot_at(toe, pitch, yaw0),
                pitch,
                yaw: yaw0,
            }
        } else {
            // swing; touches down one frame early and waits for the strike
            let arrive = 1.0 - 1.0 / (self.fps * d);
            let toe = p0 + yaw_rotation(yaw0) * Vec3::new(0.0, 0.0, rig.foot_length);
            let start = foot_at(toe, off_pitch, yaw0);
            let strike1 = c1.style.strike_pitch;
            if s >= arrive {
                return FootState {
                    heel: p1,
                    pitch: strike1,
                    yaw: yaw1,
                };
            }
            let tau = (s - TOE_OFF) / (arrive - TOE_OFF);
            let mut heel = start + (p1 - start) * tau;
            heel.y = start.y * (1.0 - tau) + c0.style.lift * (PI * tau).sin();
            FootState {
                heel,
                pitch: off_pitch + (strike1 - off_pitch) * tau,
                yaw: yaw0 + (yaw1 - yaw0) * tau,
            }
        }
    }

    /// Jump/hop foot trajectory: planted during the crouch, carried by the
    /// root through the flight.
    fn flight_foot(&self, side: Side, t: f64, rig: &Rig) -> FootState {
        let i = self.cycle_index(t);
        let c = self.cycle(i as isize);
        let u = ((t - c.start) / c.duration).clamp(0.0, 1.0);
        let h = self.heading(c.start);
        let sign = match side {
            Side::Right => -1.0,
            Side::Left => 1.0,
        };
        let style = self.style(t);
        let ground = self.root_ground(t) + left_of(h) * (sign * rig.lateral);
        let held_up = self.kind == MotionType::Hop && side == Side::Left;
        if held_up {
            let y = self.root_height(t, &style) - style.root_height + 0.25;
            return FootState {
                heel: ground - facing(h) * 0.15 + Vec3::new(0.0, y.max(0.2), 0.0),
                pitch: 0.35,
                yaw: h,
            };
        }
        if u < 0.5 {
            FootState {
                heel: ground,
                pitch: 0.0,
                yaw: h,
            }
        } else {
            let tau = (u - 0.5) / 0.5;
            let y = self.root_height(t, &style) - style.root_height + 0.05 * (PI * tau).sin();
            FootState {
                heel: ground + Vec3::new(0.0, y, 0.0),
                pitch: 0.3 * (PI * tau).sin(),
                yaw: h,
            }
        }
    }

    fn foot(&self, side: Side, t: f64, rig: &Rig) -> FootState {
        match self.kind {
            MotionType::Walk | MotionType::Run => self.gait_foot(side, t, rig),
            MotionType::Jump | MotionType::Hop => self.flight_foot(side, t, rig),
            MotionType::Idle => {
                let sign = match side {
                    Side::Right => -1.0,
                    Side::Left => 1.0,
                };
                FootState {
                    heel: left_of(0.0) * (sign * rig.lateral),
                    pitch: 0.0,
                    yaw: 0.0,
                }
            }
        }
    }

    fn pose_at(&self, t: f64, rig: &Rig) -> SkeletonPose {
        let skel = rig.skeleton.as_ref();
        let style = self.style(t);
        let (_, u) = self.phase_u(t);
        let mut pose = SkeletonPose::identity(skel.len());
        let ground = match self.kind {
            MotionType::Idle => Vec3::zeros(),
            _ => self.root_ground(t),
        };
        let yaw = self.pelvis_yaw(t, &style);
        pose.root_position = ground + Vec3::new(0.0, self.root_height(t, &style), 0.0);
        let roll = style.pelvis_roll * (TAU * u).sin();
        pose.joint_rotations[skel.root()] = canonical(yaw_rotation(yaw) * rot_z(roll));

        let (arm_r, arm_l, elbow_wave) = match self.kind {
            MotionType::Jump | MotionType::Hop => {
                let a = -style.arm_swing * (TAU * u).sin();
                (a, a, 0.0)
            }
            MotionType::Idle => (0.0, 0.0, 0.0),
            _ => {
                let a = style.arm_swing * (TAU * u).cos();
                (a, -a, 0.2 * style.arm_swing * (TAU * u).sin())
            }
        };
        let spine_yaw = -0.5 * style.pelvis_yaw * (TAU * u).cos();
        pose.joint_rotations[rig.spine] = canonical(yaw_rotation(spine_yaw) * rot_x(style.lean));
        pose.joint_rotations[rig.neck] = rot_x(-0.7 * style.lean);
        pose.joint_rotations[rig.head] = rot_x(-0.3 * style.lean);
        pose.joint_rotations[rig.shoulders[0]] = canonical(rot_z(-0.08) * rot_x(arm_r));
        pose.joint_rotations[rig.shoulders[1]] = canonical(rot_z(0.08) * rot_x(arm_l));
        pose.joint_rotations[rig.elbows[0]] = rot_x(-(style.elbow + elbow_wave));
        pose.joint_rotations[rig.elbows[1]] = rot_x(-(style.elbow - elbow_wave));

        let pole = facing(yaw);
        for side in [Side::Right, Side::Left] {
            let f = self.foot(side, t, rig);
            let foot_world = canonical(yaw_rotation(f.yaw) * rot_x(f.pitch));
            solve_leg(skel, &mut pose, rig.leg(side), &f.heel, &pole, Some(foot_world));
        }
        pose
    }

    fn schedule(&self, frames: usize, fps: f64, rig: &Rig) -> (Vec<GaitPhase>, Vec<FlightEvent>) {
        match self.kind {
            MotionType::Walk | MotionType::Run => (self.gait_schedule(frames, fps, rig), Vec::new()),
            MotionType::Jump | MotionType::Hop => self.flight_schedule(frames, fps),
            MotionType::Idle => (vec![GaitPhase::Idle; frames], Vec::new()),
        }
    }

    /// First frame at or after a contact-gaining event at time `t`.
    fn gain_frame(t: f64, fps: f64) -> i64 {
        (t * fps - 1e-9).ceil() as i64
    }

    /// First frame strictly after a contact-losing or crossing event.
    fn loss_frame(t: f64, fps: f64) -> i64 {
        (t * fps + 1e-9).floor() as i64 + 1
    }

    /// Signed distance of `side`'s ankle ahead of the other ankle along the
    /// hips' facing.
    fn ankle_lead(&self, side: Side, t: f64, rig: &Rig) -> f64 {
        let pose = self.pose_at(t, rig);
        let skel = rig.skeleton.as_ref();
        let p = forward_kinematics(skel, &pose);
        let f = facing(yaw_of(&pose.joint_rotations[skel.root()]));
        let a = p[rig.leg(side).ankle];
        let b = p[rig.leg(side.other()).ankle];
        (a - b).dot(&f)
    }

    fn crossing_time(&self, side: Side, lo: f64, hi: f64, rig: &Rig) -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        if self.ankle_lead(side, lo, rig) > 0.0 {
            return lo;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.ankle_lead(side, mid, rig) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn gait_schedule(&self, frames: usize, fps: f64, rig: &Rig) -> Vec<GaitPhase> {
        let mut marks: Vec<(i64, GaitPhase)> = Vec::new();
        for k in 0..=self.cycles.len() as isize {
            let (tr, _) = self.strike(Side::Right, k);
            let (tr_next, _) = self.strike(Side::Right, k + 1);
            let (tl_prev, _) = self.strike(Side::Left, k - 1);
            let (tl, _) = self.strike(Side::Left, k);
            let (tl_next, _) = self.strike(Side::Left, k + 1);
            let dr = tr_next - tr;
            let dl_prev = tl - tl_prev;
            let dl = tl_next - tl;
            let left_toe_off = tl_prev + TOE_OFF * dl_prev;
            let right_heel_off = tr + HEEL_OFF * dr;
            let right_toe_off = tr + TOE_OFF * dr;
            let left_heel_off = tl + HEEL_OFF * dl;
            if tr > self.total_duration() {
                break;
            }
            let lce = self.crossing_time(Side::Left, left_toe_off, right_heel_off, rig);
            let rce = self.crossing_time(Side::Right, right_toe_off, left_heel_off, rig);
            marks.push((Self::gain_frame(tr, fps), GaitPhase::IcLr));
            marks.push((Self::loss_frame(left_toe_off, fps), GaitPhase::LrMst));
            marks.push((Self::loss_frame(lce, fps), GaitPhase::MstTst));
            marks.push((Self::loss_frame(right_heel_off, fps), GaitPhase::TstPsw));
            marks.push((Self::gain_frame(tl, fps), GaitPhase::PswIsw));
            marks.push((Self::loss_frame(right_toe_off, fps), GaitPhase::IswMsw));
            marks.push((Self::loss_frame(rce, fps), GaitPhase::MswTsw));
            marks.push((Self::loss_frame(left_heel_off, fps), GaitPhase::TswIc));
        }
        fill_schedule(&marks, frames, GaitPhase::Idle)
    }

    fn flight_schedule(&self, frames: usize, fps: f64) -> (Vec<GaitPhase>, Vec<FlightEvent>) {
        let mut marks: Vec<(i64, GaitPhase)> = Vec::new();
        let mut flights = Vec::new();
        marks.push((0, GaitPhase::Idle));
        for c in &self.cycles {
            let takeoff = c.start + 0.5 * c.duration;
            let apex = c.start + 0.75 * c.duration;
            let landing = c.start + c.duration;
            let f_take = Self::loss_frame(takeoff, fps);
            // the frame nearest the apex starts the descent
            let f_apex = (apex * fps).round() as i64;
            // a landing frame still carries the descent speed
            let f_land = Self::loss_frame(landing, fps);
            marks.push((f_take, GaitPhase::AirborneUp));
            marks.push((f_apex, GaitPhase::AirborneDown));
            marks.push((f_land, GaitPhase::Idle));
            if (f_land as usize) <= frames {
                flights.push(FlightEvent {
                    takeoff: f_take as usize,
                    apex: f_apex as usize,
                    landing: f_land as usize,
                });
            }
        }
        (fill_schedule(&marks, frames, GaitPhase::Idle), flights)
    }
}

fn fill_schedule(marks: &[(i64, GaitPhase)], frames: usize, before: GaitPhase) -> Vec<GaitPhase> {
    let mut marks = marks.to_vec();
    marks.sort_by_key(|(f, _)| *f);
    let mut out = vec![before; frames];
    for (i, (f, p)) in marks.iter().enumerate() {
        let start = (*f).max(0) as usize;
        let end = marks
            .get(i + 1)
            .map_or(frames as i64, |(g, _)| *g)
            .clamp(0, frames as i64) as usize;
        for slot in out.iter_mut().take(end).skip(start) {
            *slot = *p;
        }
    }
    out
}
