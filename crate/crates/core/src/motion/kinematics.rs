//! Forward kinematics and the analytic two-bone leg solver.

use super::rotation::{canonical, frame_rotation};
use super::skeleton::Leg;
use super::{Quat, Skeleton, SkeletonPose, Vec3};

/// World-frame rotation of every joint.
pub fn world_rotations(skeleton: &Skeleton, pose: &SkeletonPose) -> Vec<Quat> {
    let mut world: Vec<Quat> = Vec::with_capacity(skeleton.len());
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let local = pose.joint_rotations[i];
        let w = match joint.parent {
            Some(p) => world[p] * local,
            None => local,
        };
        world.push(w);
    }
    world
}

/// World position of every joint, meters.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &SkeletonPose) -> Vec<Vec3> {
    let world = world_rotations(skeleton, pose);
    positions_from_world(skeleton, pose, &world)
}

pub(crate) fn positions_from_world(skeleton: &Skeleton, pose: &SkeletonPose, world: &[Quat]) -> Vec<Vec3> {
    let mut pos: Vec<Vec3> = Vec::with_capacity(skeleton.len());
    for joint in skeleton.joints() {
        let p = match joint.parent {
            Some(p) => pos[p] + world[p] * joint.offset,
            None => pose.root_position,
        };
        pos.push(p);
    }
    pos
}

/// Result of a two-bone solve.
#[derive(Debug, Clone, Copy)]
pub struct TwoBoneSolution {
    pub knee: Vec3,
    pub end: Vec3,
    /// False when the target lay beyond reach and the chain was fully
    /// extended toward it.
    pub reached: bool,
}

/// Places the middle joint of a two-bone chain rooted at `base` so that the
/// end lands on `target`, bending toward `pole`.
pub fn solve_two_bone(base: &Vec3, target: &Vec3, upper: f64, lower: f64, pole: &Vec3) -> TwoBoneSolution {
    let to_target = target - base;
    let mut dist = to_target.norm();
    let dir = if dist > 1e-12 {
        to_target / dist
    } else {
        Vec3::new(0.0, -1.0, 0.0)
    };
    let max_reach = upper + lower;
    let min_reach = (upper - lower).abs() + 1e-9;
    let reached = dist <= max_reach && dist >= min_reach;
    dist = dist.clamp(min_reach, max_reach);

    let mut bend = pole - dir * dir.dot(pole);
    if bend.norm() < 1e-9 {
        let helper = if dir.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        bend = helper - dir * dir.dot(&helper);
    }
    let bend = bend.normalize();

    let along = (upper * upper - lower * lower + dist * dist) / (2.0 * dist);
    let height = (upper * upper - along * along).max(0.0).sqrt();
    let knee = base + dir * along + bend * height;
    let end = if reached { *target } else { base + dir * dist };
    TwoBoneSolution { knee, end, reached }
}

/// Re-poses a leg so the ankle reaches `target`, with the knee bending
/// toward `pole`. When `foot` is given the ankle's world rotation is set to
/// it; otherwise the foot keeps its current world orientation.
/// Returns whether the target was reachable.
pub fn solve_leg(
    skeleton: &Skeleton,
    pose: &mut SkeletonPose,
    leg: Leg,
    target: &Vec3,
    pole: &Vec3,
    foot: Option<Quat>,
) -> bool {
    let world = world_rotations(skeleton, pose);
    let positions = positions_from_world(skeleton, pose, &world);
    let hip_parent = skeleton.joint(leg.hip).parent.expect("hip joint has a parent");
    let foot_world = foot.unwrap_or(world[leg.ankle]);

    let thigh_rest = skeleton.joint(leg.knee).offset;
    let shin_rest = skeleton.joint(leg.ankle).offset;
    let sol = solve_two_bone(
        &positions[leg.hip],
        target,
        thigh_rest.norm(),
        shin_rest.norm(),
        pole,
    );

    let forward_rest = Vec3::z();
    let thigh_world = frame_rotation(&thigh_rest, &forward_rest, &(sol.knee - positions[leg.hip]), pole);
    let shin_world = frame_rotation(&shin_rest, &forward_rest, &(sol.end - sol.knee), pole);

    pose.joint_rotations[leg.hip] = canonical(world[hip_parent].inverse() * thigh_world);
    pose.joint_rotations[leg.knee] = canonical(thigh_world.inverse() * shin_world);
    pose.joint_rotations[leg.ankle] = canonical(shin_world.inverse() * foot_world);
    sol.reached
}
