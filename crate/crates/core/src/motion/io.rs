//! Motion and IMU CSV files.
//!
//! Motion: `frame, root_x, root_y, root_z, q0_w, q0_x, q0_y, q0_z, q1_w, ...`
//! IMU: `frame, ax, ay, az, gx, gy, gz`.
//! Both carry a mandatory header row; floats use `.` as decimal separator and
//! are written in shortest round-trip form.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Quaternion, UnitQuaternion};

use super::rotation::canonical;
use super::{ImuSample, ImuStream, MotionClip, Skeleton, SkeletonPose, Vec3};
use crate::error::{Error, Result};

pub fn motion_header(joints: usize) -> String {
    let mut h = String::from("frame,root_x,root_y,root_z");
    for j in 0..joints {
        write!(h, ",q{j}_w,q{j}_x,q{j}_y,q{j}_z").unwrap();
    }
    h
}

pub const IMU_HEADER: &str = "frame,ax,ay,az,gx,gy,gz";

pub fn write_motion_csv(poses: &[SkeletonPose]) -> String {
    let joints = poses.first().map_or(0, |p| p.joint_rotations.len());
    let mut out = motion_header(joints);
    out.push('\n');
    for (t, p) in poses.iter().enumerate() {
        write!(
            out,
            "{t},{},{},{}",
            p.root_position.x, p.root_position.y, p.root_position.z
        )
        .unwrap();
        for q in &p.joint_rotations {
            write!(out, ",{},{},{},{}", q.w, q.i, q.j, q.k).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_imu_csv(imu: &ImuStream) -> String {
    let mut out = String::from(IMU_HEADER);
    out.push('\n');
    for (t, s) in imu.samples.iter().enumerate() {
        writeln!(
            out,
            "{t},{},{},{},{},{},{}",
            s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        )
        .unwrap();
    }
    out
}

fn read_rows(path: &Path, reader: impl Read, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.len() != width {
        return Err(parse_err(
            1,
            format!("header has {} columns, expected {width}", header.len()),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("row has {} columns, expected {width}", rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(width);
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: '{field}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", c + 1)));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(rows)
}

pub fn parse_motion_csv(path: &Path, text: &str, skeleton: Arc<Skeleton>, fps: f64) -> Result<MotionClip> {
    let n = skeleton.len();
    let rows = read_rows(path, text.as_bytes(), 4 + 4 * n)?;
    let frames = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rotations = (0..n)
                .map(|j| {
                    let b = 4 + 4 * j;
                    let q = Quaternion::new(r[b], r[b + 1], r[b + 2], r[b + 3]);
                    if q.norm() < 1e-9 {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: i as u64 + 2,
                            msg: format!("joint {j}: zero quaternion"),
                        });
                    }
                    let unit = if (q.norm_squared() - 1.0).abs() < 1e-12 {
                        UnitQuaternion::new_unchecked(q)
                    } else {
                        UnitQuaternion::new_normalize(q)
                    };
                    Ok(canonical(unit))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SkeletonPose {
                root_position: Vec3::new(r[1], r[2], r[3]),
                joint_rotations: rotations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MotionClip::new(skeleton, fps, frames)
}

pub fn parse_imu_csv(path: &Path, text: &str, fps: f64) -> Result<ImuStream> {
    let rows = read_rows(path, text.as_bytes(), 7)?;
    Ok(ImuStream {
        fps,
        samples: rows
            .iter()
            .map(|r| ImuSample {
                accel: Vec3::new(r[1], r[2], r[3]),
                gyro: Vec3::new(r[4], r[5], r[6]),
            })
            .collect(),
    })
}

pub fn read_motion_csv(path: &Path, skeleton: Arc<Skeleton>, fps: f64) -> Result<MotionClip> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion_csv(path, &text, skeleton, fps)
}

pub fn read_imu_csv(path: &Path, fps: f64) -> Result<ImuStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_imu_csv(path, &text, fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::exp_map;

    #[test]
    fn motion_csv_round_trip_is_exact() {
        let s = Arc::new(Skeleton::biped18());
        let frames: Vec<SkeletonPose> = (0..3)
            .map(|t| {
                let mut p = SkeletonPose::identity(18);
                p.root_position = Vec3::new(0.1 * t as f64, 0.9, 1.0 / 3.0);
                p.joint_rotations[2] = exp_map(&Vec3::new(0.3, 0.1 * t as f64, -0.2));
                p
            })
            .collect();
        let text = write_motion_csv(&frames);
        let clip = parse_motion_csv(Path::new("m.csv"), &text, s, 30.0).unwrap();
        assert_eq!(clip.frames, frames);
    }

    #[test]
    fn generated_clip_text_round_trips() {
        use crate::synth::{generate_gait, GaitNoise, GaitSpec, MotionType};
        let s = Arc::new(Skeleton::biped18());
        let spec = GaitSpec::new(MotionType::Walk)
            .cycles(1)
            .seed(3)
            .noise(GaitNoise::default());
        let clip = generate_gait(&spec, &s).unwrap();
        let text = write_motion_csv(&clip.frames);
        let back = parse_motion_csv(Path::new("m.csv"), &text, s, 30.0).unwrap();
        assert_eq!(write_motion_csv(&back.frames), text);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{IMU_HEADER}\n0,1,2,3,4,5,6\n1,1,2,x,4,5,6\n");
        match parse_imu_csv(Path::new("s.csv"), &text, 30.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_reports_line() {
        let text = format!("{IMU_HEADER}\n0,1,2,3,4,5,6\n1,1,2\n");
        match parse_imu_csv(Path::new("s.csv"), &text, 30.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_imu_csv(Path::new("/nonexistent/s.csv"), 30.0).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
