//! Quaternion helpers. Rotations are unit quaternions kept in the `w >= 0`
//! hemisphere and featurized as exponential maps (rotation vectors).

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

pub type Quat = UnitQuaternion<f64>;
pub type Vec3 = Vector3<f64>;

/// Flips `q` into the `w >= 0` hemisphere.
pub fn canonical(q: Quat) -> Quat {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

pub fn exp_map(v: &Vec3) -> Quat {
    canonical(UnitQuaternion::from_scaled_axis(*v))
}

/// Logarithm of `q` choosing the branch closest to `prev`.
///
/// Every rotation vector `axis * (angle + 2 pi k)` maps to the same rotation;
/// this picks the `k` (and the identity's free axis) nearest the previous
/// frame so per-joint parameter tracks stay continuous.
pub fn log_map_near(q: &Quat, prev: &Vec3) -> Vec3 {
    let q = canonical(*q);
    let v = q.scaled_axis();
    let angle = v.norm();
    let prev_norm = prev.norm();
    if angle < 1e-12 {
        if prev_norm < PI {
            return Vec3::zeros();
        }
        let k = (prev_norm / TAU).round();
        return prev * (k * TAU / prev_norm);
    }
    let axis = v / angle;
    let along = prev.dot(&axis);
    let k0 = ((along - angle) / TAU).round();
    let mut best = axis * angle;
    let mut best_dist = f64::INFINITY;
    for k in [k0 - 1.0, k0, k0 + 1.0] {
        let cand = axis * (angle + k * TAU);
        let dist = (cand - prev).norm_squared();
        if dist < best_dist {
            best_dist = dist;
            best = cand;
        }
    }
    best
}

pub fn log_map(q: &Quat) -> Vec3 {
    log_map_near(q, &Vec3::zeros())
}

/// Rotation about the world vertical (+y) axis.
pub fn yaw_rotation(angle: f64) -> Quat {
    canonical(UnitQuaternion::from_axis_angle(&Vec3::y_axis(), angle))
}

/// Vertical twist angle of `q`, so that `q = yaw(angle) * swing` with the
/// swing axis lying in the ground plane.
pub fn yaw_of(q: &Quat) -> f64 {
    let q = canonical(*q);
    if q.w.abs() < 1e-15 && q.j.abs() < 1e-15 {
        return 0.0;
    }
    2.0 * q.j.atan2(q.w)
}

/// Normalized linear blend of two rotations in a common hemisphere.
pub fn nlerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    let qa = a.into_inner();
    let mut qb = b.into_inner();
    if qa.dot(&qb) < 0.0 {
        qb = -qb;
    }
    let mixed: Quaternion<f64> = qa * (1.0 - t) + qb * t;
    canonical(UnitQuaternion::new_normalize(mixed))
}

/// Weighted hemisphere-consistent average of rotations. The first rotation
/// fixes the hemisphere.
pub fn weighted_average(rots: &[(Quat, f64)]) -> Quat {
    let Some((first, _)) = rots.first() else {
        return Quat::identity();
    };
    let reference = first.into_inner();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (q, w) in rots {
        let mut q = q.into_inner();
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        acc += q * *w;
    }
    if acc.norm() < 1e-300 {
        return *first;
    }
    canonical(UnitQuaternion::new_normalize(acc))
}

/// Geodesic angle between two rotations, radians.
pub fn geodesic(a: &Quat, b: &Quat) -> f64 {
    a.angle_to(b)
}

/// Rotation taking the orthonormal frame `(rest_dir, rest_ref)` onto
/// `(dir, reference)`. `rest_ref` and `reference` are orthogonalized
/// against their directions first.
pub fn frame_rotation(rest_dir: &Vec3, rest_ref: &Vec3, dir: &Vec3, reference: &Vec3) -> Quat {
    let a = basis(rest_dir, rest_ref);
    let d = basis(dir, reference);
    let m = d * a.transpose();
    canonical(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(m),
    ))
}

fn basis(dir: &Vec3, reference: &Vec3) -> Matrix3<f64> {
    let e0 = dir.normalize();
    let mut r = reference - e0 * e0.dot(reference);
    if r.norm() < 1e-9 {
        // reference parallel to dir: any perpendicular will do
        let helper = if e0.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        r = helper - e0 * e0.dot(&helper);
    }
    let e1 = r.normalize();
    let e2 = e0.cross(&e1);
    Matrix3::from_columns(&[e0, e1, e2])
}
