//! Segment registration: root canonicalization and dynamic time warping.
//!
//! Every segment of a phase is moved so its first frame sits at the ground
//! origin facing +z, then warped onto a reference segment of the same phase.
//! The same warp resamples the body poses and the sensor features so the two
//! stay in correspondence.

use crate::error::{Error, Result};
use crate::motion::kinematics::forward_kinematics;
use crate::motion::rotation::{canonical, weighted_average, yaw_of, yaw_rotation};
use crate::motion::{FeatureX, FeatureY, ImuSample, JointObservation, Skeleton, SkeletonPose, Vec3};
use crate::segmentation::{GaitPhase, PhaseSegment};

/// Monotone alignment path of `(source frame, reference frame)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpMap {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpMap {
    pub fn identity(len: usize) -> Self {
        Self {
            pairs: (0..len).map(|i| (i, i)).collect(),
        }
    }

    /// Checks the path runs from `(0, 0)` to `(src_len - 1, ref_len - 1)`
    /// in unit steps.
    pub fn validate(&self, src_len: usize, ref_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Alignment(msg));
        let (Some(first), Some(last)) = (self.pairs.first(), self.pairs.last()) else {
            return bad("empty warp".into());
        };
        if *first != (0, 0) {
            return bad(format!("warp starts at {first:?}"));
        }
        if src_len == 0 || ref_len == 0 || *last != (src_len - 1, ref_len - 1) {
            return bad(format!(
                "warp ends at {last:?}, expected ({}, {})",
                src_len as i64 - 1,
                ref_len as i64 - 1
            ));
        }
        for w in self.pairs.windows(2) {
            let step = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!(step, (1, 0) | (0, 1) | (1, 1)) {
                return bad(format!("invalid warp step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn source_len(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.0 + 1)
    }

    pub fn reference_len(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.1 + 1)
    }
}

/// A ground-plane rigid transform: rotation by `yaw` about +y followed by a
/// translation of `(translation[0], 0, translation[1])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTransform {
    pub yaw: f64,
    pub translation: [f64; 2],
}

impl RootTransform {
    pub const IDENTITY: RootTransform = RootTransform {
        yaw: 0.0,
        translation: [0.0, 0.0],
    };

    pub fn apply(&self, pose: &SkeletonPose, root: usize) -> SkeletonPose {
        let r = yaw_rotation(self.yaw);
        let mut out = pose.clone();
        out.root_position = r * pose.root_position + Vec3::new(self.translation[0], 0.0, self.translation[1]);
        out.joint_rotations[root] = canonical(r * pose.joint_rotations[root]);
        out
    }

    pub fn inverse(&self) -> RootTransform {
        let r = yaw_rotation(-self.yaw);
        let t = r * Vec3::new(self.translation[0], 0.0, self.translation[1]);
        RootTransform {
            yaw: -self.yaw,
            translation: [-t.x, -t.z],
        }
    }
}

/// Moves `poses` so the first frame's root lies above the ground origin with
/// zero hip yaw. Returns the canonical poses and the transform that maps
/// them back onto the input.
pub fn canonicalize_root(poses: &[SkeletonPose], root: usize) -> Result<(Vec<SkeletonPose>, RootTransform)> {
    let first = poses
        .first()
        .ok_or_else(|| Error::Data("cannot canonicalize an empty segment".into()))?;
    let back = RootTransform {
        yaw: yaw_of(&first.joint_rotations[root]),
        translation: [first.root_position.x, first.root_position.z],
    };
    let forward = back.inverse();
    Ok((poses.iter().map(|p| forward.apply(p, root)).collect(), back))
}

/// Cumulative DTW cost table over Euclidean frame distances.
fn dtw_table(src: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m) = (src.len(), reference.len());
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut d = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let c = dist(&src[i], &reference[j]);
            d[i][j] = if i == 0 && j == 0 {
                c
            } else {
                let diag = if i > 0 && j > 0 {
                    d[i - 1][j - 1]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 { d[i][j - 1] } else { f64::INFINITY };
                let up = if i > 0 { d[i - 1][j] } else { f64::INFINITY };
                diag.min(left).min(up) + c
            };
        }
    }
    d
}

/// Minimum-cost monotone alignment of `src` onto `reference` and its summed
/// Euclidean frame cost. The path is traced back from the last cell; ties
/// prefer the diagonal step, then advancing the reference only, then
/// advancing the source only.
pub fn dtw_register(src: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<(WarpMap, f64)> {
    if src.is_empty() || reference.is_empty() {
        return Err(Error::Alignment("DTW needs two non-empty sequences".into()));
    }
    let dim = reference[0].len();
    if src.iter().chain(reference).any(|f| f.len() != dim) {
        return Err(Error::Alignment(
            "DTW sequences differ in feature dimension".into(),
        ));
    }
    let d = dtw_table(src, reference);
    let (mut i, mut j) = (src.len() - 1, reference.len() - 1);
    let cost = d[i][j];
    let mut pairs = vec![(i, j)];
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 {
            d[i - 1][j - 1]
        } else {
            f64::INFINITY
        };
        let left = if j > 0 { d[i][j - 1] } else { f64::INFINITY };
        let up = if i > 0 { d[i - 1][j] } else { f64::INFINITY };
        if diag <= left && diag <= up {
            i -= 1;
            j -= 1;
        } else if left <= up {
            j -= 1;
        } else {
            i -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((WarpMap { pairs }, cost))
}

/// Frame types that can be averaged when several source frames map onto one
/// reference frame.
pub trait WarpAverage: Sized + Clone {
    fn average(items: &[&Self]) -> Self;
}

fn mean_vec3(items: impl Iterator<Item = Vec3>, n: usize) -> Vec3 {
    items.fold(Vec3::zeros(), |a, b| a + b) / n as f64
}

impl WarpAverage for Vec<f64> {
    fn average(items: &[&Self]) -> Self {
        let mut out = vec![0.0; items[0].len()];
        for it in items {
            for (o, v) in out.iter_mut().zip(it.iter()) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= items.len() as f64);
        out
    }
}

impl WarpAverage for FeatureX {
    fn average(items: &[&Self]) -> Self {
        let n = items.len();
        let joints = items[0].joint_count();
        FeatureX {
            joint_rotation_params: (0..joints)
                .map(|j| mean_vec3(items.iter().map(|x| x.joint_rotation_params[j]), n))
                .collect(),
            joint_angular_velocity: (0..joints)
                .map(|j| mean_vec3(items.iter().map(|x| x.joint_angular_velocity[j]), n))
                .collect(),
            root_delta: mean_vec3(items.iter().map(|x| x.root_delta), n),
        }
    }
}

impl WarpAverage for FeatureY {
    fn average(items: &[&Self]) -> Self {
        let n = items.len();
        FeatureY {
            sensors: (0..items[0].sensors.len())
                .map(|s| ImuSample {
                    accel: mean_vec3(items.iter().map(|y| y.sensors[s].accel), n),
                    gyro: mean_vec3(items.iter().map(|y| y.sensors[s].gyro), n),
                })
                .collect(),
        }
    }
}

impl WarpAverage for JointObservation {
    fn average(items: &[&Self]) -> Self {
        let xs: Vec<&FeatureX> = items.iter().map(|o| &o.x).collect();
        let ys: Vec<&FeatureY> = items.iter().map(|o| &o.y).collect();
        JointObservation {
            x: FeatureX::average(&xs),
            y: FeatureY::average(&ys),
        }
    }
}

impl WarpAverage for SkeletonPose {
    fn average(items: &[&Self]) -> Self {
        if items.len() == 1 {
            return items[0].clone();
        }
        let w = 1.0 / items.len() as f64;
        SkeletonPose {
            root_position: mean_vec3(items.iter().map(|p| p.root_position), items.len()),
            joint_rotations: (0..items[0].joint_rotations.len())
                .map(|j| {
                    let rots: Vec<_> = items.iter().map(|p| (p.joint_rotations[j], w)).collect();
                    weighted_average(&rots)
                })
                .collect(),
        }
    }
}

/// Resamples `slice` onto the reference timeline: output frame `j` is the
/// average of the source frames the warp maps to `j`.
pub fn apply_warp<T: WarpAverage>(slice: &[T], warp: &WarpMap, target_len: usize) -> Result<Vec<T>> {
    warp.validate(slice.len(), target_len)?;
    let mut buckets: Vec<Vec<&T>> = vec![Vec::new(); target_len];
    for &(i, j) in &warp.pairs {
        buckets[j].push(&slice[i]);
    }
    Ok(buckets.iter().map(|b| T::average(b)).collect())
}

/// A segment warped onto its phase reference.
#[derive(Debug, Clone)]
pub struct RegisteredSegment {
    pub segment: PhaseSegment,
    pub warp: WarpMap,
    /// Maps the canonical poses back onto the source clip.
    pub transform: RootTransform,
    /// Canonical poses resampled to the reference length.
    pub poses: Vec<SkeletonPose>,
    /// Features resampled to the reference length.
    pub observations: Vec<JointObservation>,
}

/// All segments of one phase registered to a common reference.
#[derive(Debug, Clone)]
pub struct RegisteredGroup {
    pub phase: GaitPhase,
    /// Index into `members` of the reference segment.
    pub reference: usize,
    pub members: Vec<RegisteredSegment>,
}

impl RegisteredGroup {
    pub fn reference_len(&self) -> usize {
        self.members[self.reference].poses.len()
    }
}

/// Index of the median-length segment, lower median, earliest on ties.
pub fn median_reference(lengths: &[usize]) -> usize {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    order[(order.len() - 1) / 2]
}

/// Per-frame DTW features: sensor channels followed by root-relative joint
/// positions of the canonical pose.
fn dtw_features(skeleton: &Skeleton, poses: &[SkeletonPose], obs: &[JointObservation]) -> Vec<Vec<f64>> {
    poses
        .iter()
        .zip(obs)
        .map(|(p, o)| {
            let mut f = o.y.to_vec();
            let pos = forward_kinematics(skeleton, p);
            for q in &pos {
                let r = q - p.root_position;
                f.extend_from_slice(&[r.x, r.y, r.z]);
            }
            f
        })
        .collect()
}

/// Z-scores every channel across all frames of all sequences; constant
/// channels become zero.
fn zscore_in_place(seqs: &mut [Vec<Vec<f64>>]) {
    let dim = match seqs.iter().flatten().next() {
        Some(f) => f.len(),
        None => return,
    };
    let count = seqs.iter().map(|s| s.len()).sum::<usize>() as f64;
    let mut mean = vec![0.0; dim];
    for f in seqs.iter().flatten() {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / count;
        }
    }
    let mut var = vec![0.0; dim];
    for f in seqs.iter().flatten() {
        for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    for f in seqs.iter_mut().flatten() {
        for ((v, m), s) in f.iter_mut().zip(&mean).zip(&std) {
            *v = if *s > 1e-12 { (*v - m) / s } else { 0.0 };
        }
    }
}

/// Canonicalizes and warps every segment of one phase onto the
/// median-length member.
pub fn register_group(skeleton: &Skeleton, segments: Vec<PhaseSegment>) -> Result<RegisteredGroup> {
    let phase = segments
        .first()
        .ok_or_else(|| Error::Data("cannot register an empty phase group".into()))?
        .phase;
    if segments.iter().any(|s| s.phase != phase) {
        return Err(Error::Data("phase group mixes different phases".into()));
    }
    let root = skeleton.root();
    let mut canon = Vec::with_capacity(segments.len());
    for s in &segments {
        canon.push(canonicalize_root(&s.poses, root)?);
    }
    let mut feats: Vec<Vec<Vec<f64>>> = segments
        .iter()
        .zip(&canon)
        .map(|(s, (poses, _))| dtw_features(skeleton, poses, &s.observations))
        .collect();
    zscore_in_place(&mut feats);
    let lengths: Vec<usize> = segments.iter().map(|s| s.len()).collect();
    let reference = median_reference(&lengths);
    let target = lengths[reference];
    let mut members = Vec::with_capacity(segments.len());
    for ((seg, (poses, transform)), f) in segments.into_iter().zip(canon).zip(&feats) {
        let (warp, _) = dtw_register(f, &feats[reference])?;
        let poses = apply_warp(&poses, &warp, target)?;
        let observations = apply_warp(&seg.observations, &warp, target)?;
        members.push(RegisteredSegment {
            segment: seg,
            warp,
            transform,
            poses,
            observations,
        });
    }
    Ok(RegisteredGroup {
        phase,
        reference,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::exp_map;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every monotone path's forward-summed cost, minimum taken.
    fn brute_force(src: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
        fn walk(i: usize, j: usize, acc: f64, c: &[Vec<f64>], best: &mut f64) {
            let acc = acc + c[i][j];
            if i + 1 == c.len() && j + 1 == c[0].len() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < c.len() && j + 1 < c[0].len() {
                walk(i + 1, j + 1, acc, c, best);
            }
            if j + 1 < c[0].len() {
                walk(i, j + 1, acc, c, best);
            }
            if i + 1 < c.len() {
                walk(i + 1, j, acc, c, best);
            }
        }
        let c: Vec<Vec<f64>> = src
            .iter()
            .map(|a| {
                reference
                    .iter()
                    .map(|b| {
                        a.iter()
                            .zip(b)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        let mut best = f64::INFINITY;
        walk(0, 0, 0.0, &c, &mut best);
        best
    }

    fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn path_cost(src: &[Vec<f64>], reference: &[Vec<f64>], w: &WarpMap) -> f64 {
        w.pairs.iter().fold(0.0, |acc, &(i, j)| {
            acc + src[i]
                .iter()
                .zip(&reference[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
    }

    #[test]
    fn dtw_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(1..=7);
            let m = rng.random_range(1..=7);
            let a = random_seq(&mut rng, n, 2);
            let b = random_seq(&mut rng, m, 2);
            let (w, cost) = dtw_register(&a, &b).unwrap();
            w.validate(n, m).unwrap();
            assert_eq!(cost, brute_force(&a, &b));
            assert_eq!(path_cost(&a, &b, &w), cost);
        }
    }

    #[test]
    fn self_alignment_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_seq(&mut rng, 9, 3);
        let (w, cost) = dtw_register(&a, &a).unwrap();
        assert_eq!(w, WarpMap::identity(9));
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn doubling_maps_each_frame_twice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_seq(&mut rng, 6, 2);
        let doubled: Vec<Vec<f64>> = a.iter().flat_map(|f| [f.clone(), f.clone()]).collect();
        let (w, cost) = dtw_register(&a, &doubled).unwrap();
        assert_eq!(cost, 0.0);
        for i in 0..6 {
            let hits: Vec<usize> = w.pairs.iter().filter(|p| p.0 == i).map(|p| p.1).collect();
            assert_eq!(hits, vec![2 * i, 2 * i + 1]);
        }
        let (back, _) = dtw_register(&doubled, &a).unwrap();
        let undone = apply_warp(&doubled, &back, 6).unwrap();
        for (u, o) in undone.iter().zip(&a) {
            for (x, y) in u.iter().zip(o) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ties_prefer_diagonal_then_reference_step() {
        let z = vec![vec![0.0]; 3];
        let (w, _) = dtw_register(&z, &z[..2]).unwrap();
        assert_eq!(w.pairs, vec![(0, 0), (1, 0), (2, 1)]);
        let (w, _) = dtw_register(&z[..2], &z).unwrap();
        assert_eq!(w.pairs, vec![(0, 0), (0, 1), (1, 2)]);
    }

    #[test]
    fn warp_rejects_mismatched_slices() {
        let w = WarpMap::identity(3);
        assert!(apply_warp(&vec![vec![0.0]; 4], &w, 3).is_err());
        assert!(apply_warp(&vec![vec![0.0]; 3], &w, 4).is_err());
        assert!(dtw_register(&[], &[vec![1.0]]).is_err());
        assert!(dtw_register(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
        let gap = WarpMap {
            pairs: vec![(0, 0), (2, 1)],
        };
        assert!(gap.validate(3, 2).is_err());
    }

    fn random_pose(rng: &mut ChaCha8Rng, joints: usize) -> SkeletonPose {
        let mut v = || {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        };
        SkeletonPose {
            root_position: v() * 3.0,
            joint_rotations: (0..joints).map(|_| exp_map(&v())).collect(),
        }
    }

    fn pose_close(a: &SkeletonPose, b: &SkeletonPose, tol: f64) -> bool {
        (a.root_position - b.root_position).norm() < tol
            && a.joint_rotations
                .iter()
                .zip(&b.joint_rotations)
                .all(|(p, q)| (p.coords - q.coords).norm() < tol)
    }

    #[test]
    fn canonicalize_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses: Vec<SkeletonPose> = (0..5).map(|_| random_pose(&mut rng, 4)).collect();
        let (canon, back) = canonicalize_root(&poses, 0).unwrap();
        assert!(canon[0].root_position.x.abs() < 1e-12 && canon[0].root_position.z.abs() < 1e-12);
        assert!(yaw_of(&canon[0].joint_rotations[0]).abs() < 1e-12);
        assert_eq!(canon[0].root_position.y, poses[0].root_position.y);
        for (c, p) in canon.iter().zip(&poses) {
            assert!(pose_close(&back.apply(c, 0), p, 1e-12));
        }
        let (again, t) = canonicalize_root(&canon, 0).unwrap();
        assert!(t.yaw.abs() < 1e-12 && t.translation.iter().all(|v| v.abs() < 1e-12));
        for (a, c) in again.iter().zip(&canon) {
            assert!(pose_close(a, c, 1e-12));
        }
    }

    #[test]
    fn canonical_form_ignores_ground_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let poses: Vec<SkeletonPose> = (0..4).map(|_| random_pose(&mut rng, 3)).collect();
            let t = RootTransform {
                yaw: rng.random_range(-3.0..3.0),
                translation: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            };
            let moved: Vec<SkeletonPose> = poses.iter().map(|p| t.apply(p, 0)).collect();
            let (a, _) = canonicalize_root(&poses, 0).unwrap();
            let (b, _) = canonicalize_root(&moved, 0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(pose_close(x, y, 1e-9));
            }
        }
    }

    #[test]
    fn median_reference_picks_middle_length() {
        assert_eq!(median_reference(&[5, 9, 7]), 2);
        assert_eq!(median_reference(&[4, 4, 6, 8]), 1);
        assert_eq!(median_reference(&[3]), 0);
    }

    proptest! {
        #[test]
        fn random_warps_fill_target(steps in proptest::collection::vec(0u8..3, 0..30)) {
            let mut pairs = vec![(0usize, 0usize)];
            for s in steps {
                let (i, j) = *pairs.last().unwrap();
                pairs.push(match s { 0 => (i + 1, j), 1 => (i, j + 1), _ => (i + 1, j + 1) });
            }
            let w = WarpMap { pairs };
            let src: Vec<Vec<f64>> = (0..w.source_len()).map(|i| vec![i as f64]).collect();
            let out = apply_warp(&src, &w, w.reference_len()).unwrap();
            prop_assert_eq!(out.len(), w.reference_len());
        }

        #[test]
        fn dtw_cost_zero_iff_equal(a in proptest::collection::vec(-2i8..2, 1..8), b in proptest::collection::vec(-2i8..2, 1..8)) {
            let a: Vec<Vec<f64>> = a.iter().map(|v| vec![*v as f64]).collect();
            let b: Vec<Vec<f64>> = b.iter().map(|v| vec![*v as f64]).collect();
            let (_, cost) = dtw_register(&a, &a).unwrap();
            prop_assert_eq!(cost, 0.0);
            let (_, cost) = dtw_register(&a, &b).unwrap();
            if a == b { prop_assert_eq!(cost, 0.0); }
        }
    }
}
