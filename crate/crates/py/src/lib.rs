//! Python bindings: skeletons, clips, IMU streams, training, streaming
//! reconstruction and evaluation.

use std::path::Path;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gaitrecon::eval::mse_eval;
use gaitrecon::hmm::{EmConfig, HierarchicalModel};
use gaitrecon::motion::io::{parse_imu_csv, parse_motion_csv, write_imu_csv, write_motion_csv};
use gaitrecon::motion::{forward_kinematics, sensor_features, ImuSample, Vec3};
use gaitrecon::reconstruction::{ReconstructConfig, ReconstructionState};
use gaitrecon::synth::{
    generate_with_schedule, simulate_imu, GaitNoise, GaitSpec, ImuNoise, MotionType, SensorMount, GRAVITY,
};
use gaitrecon::train::{train, TrainConfig, TrainingClip};
use gaitrecon::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Singular { .. } | Error::Conditioning(_) | Error::TrackingLost => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

const INLINE: &str = "<string>";

#[pyclass(name = "Skeleton", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySkeleton(Arc<gaitrecon::motion::Skeleton>);

#[pymethods]
impl PySkeleton {
    /// The built-in 18-joint biped.
    #[staticmethod]
    fn biped18() -> Self {
        Self(Arc::new(gaitrecon::motion::Skeleton::biped18()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        gaitrecon::motion::Skeleton::from_json_str(text)
            .map(|s| Self(Arc::new(s)))
            .map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.0.joints().iter().map(|j| j.name.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "MotionClip", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMotionClip(gaitrecon::motion::MotionClip);

#[pymethods]
impl PyMotionClip {
    #[staticmethod]
    #[pyo3(signature = (text, skeleton, fps = 30.0))]
    fn from_csv(text: &str, skeleton: &PySkeleton, fps: f64) -> PyResult<Self> {
        parse_motion_csv(Path::new(INLINE), text, skeleton.0.clone(), fps)
            .map(Self)
            .map_err(py_err)
    }

    fn to_csv(&self) -> String {
        write_motion_csv(&self.0.frames)
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.0.fps
    }

    #[getter]
    fn skeleton(&self) -> PySkeleton {
        PySkeleton(self.0.skeleton.clone())
    }

    /// World joint positions of one frame, meters.
    fn joint_positions(&self, frame: usize) -> PyResult<Vec<[f64; 3]>> {
        let pose = self.0.frames.get(frame).ok_or_else(|| {
            PyValueError::new_err(format!("frame {frame} outside clip of {}", self.0.len()))
        })?;
        Ok(forward_kinematics(&self.0.skeleton, pose)
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "ImuStream", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImuStream(gaitrecon::motion::ImuStream);

#[pymethods]
impl PyImuStream {
    #[staticmethod]
    #[pyo3(signature = (text, fps = 30.0))]
    fn from_csv(text: &str, fps: f64) -> PyResult<Self> {
        parse_imu_csv(Path::new(INLINE), text, fps)
            .map(Self)
            .map_err(py_err)
    }

    /// Rows of `[ax, ay, az, gx, gy, gz]` in m/s² and rad/s.
    #[staticmethod]
    #[pyo3(signature = (rows, fps = 30.0))]
    fn from_rows(rows: Vec<[f64; 6]>, fps: f64) -> Self {
        Self(gaitrecon::motion::ImuStream {
            fps,
            samples: rows
                .iter()
                .map(|r| ImuSample {
                    accel: Vec3::new(r[0], r[1], r[2]),
                    gyro: Vec3::new(r[3], r[4], r[5]),
                })
                .collect(),
        })
    }

    fn rows(&self) -> Vec<[f64; 6]> {
        self.0
            .samples
            .iter()
            .map(|s| [s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z])
            .collect()
    }

    fn to_csv(&self) -> String {
        write_imu_csv(&self.0)
    }

    fn resample(&self, len: usize) -> PyResult<Self> {
        self.0.resample(len).map(Self).map_err(py_err)
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.0.fps
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Synthesize a clip with simulated sensors. Returns the clip, one stream per
/// mount and the ground-truth phase label of every frame.
#[pyfunction]
#[pyo3(signature = (
    motion_type = "walk", cycles = 4, seed = 0, fps = 30.0,
    mounts = vec!["right_ankle".to_string()], gait_noise = false,
    accel_noise = 0.0, gyro_noise = 0.0,
))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    motion_type: &str,
    cycles: usize,
    seed: u64,
    fps: f64,
    mounts: Vec<String>,
    gait_noise: bool,
    accel_noise: f64,
    gyro_noise: f64,
) -> PyResult<(PyMotionClip, Vec<PyImuStream>, Vec<String>)> {
    let ty: MotionType = motion_type.parse().map_err(py_err)?;
    let mut spec = GaitSpec::new(ty).cycles(cycles).fps(fps).seed(seed);
    if gait_noise {
        spec = spec.noise(GaitNoise::default());
    }
    let skeleton = Arc::new(gaitrecon::motion::Skeleton::biped18());
    let g = generate_with_schedule(&spec, &skeleton).map_err(py_err)?;
    let mut streams = Vec::with_capacity(mounts.len());
    for (i, joint) in mounts.iter().enumerate() {
        let mount = SensorMount::named(&skeleton, joint).map_err(py_err)?;
        let noise = (accel_noise > 0.0 || gyro_noise > 0.0).then_some(ImuNoise {
            accel_std: accel_noise,
            gyro_std: gyro_noise,
            seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
        });
        let imu = simulate_imu(&g.clip, &mount, GRAVITY, noise.as_ref()).map_err(py_err)?;
        streams.push(PyImuStream(imu));
    }
    let phases = g.schedule.iter().map(|p| p.to_string()).collect();
    Ok((PyMotionClip(g.clip), streams, phases))
}

#[pyclass(name = "Model", frozen)]
struct PyModel(Arc<HierarchicalModel>);

#[pymethods]
impl PyModel {
    /// Train from `(clip, streams, family)` triples.
    #[staticmethod]
    #[pyo3(signature = (clips, k = 5, window = 3, states = 8, seed = 0))]
    fn train(
        py: Python<'_>,
        clips: Vec<(PyRef<'_, PyMotionClip>, Vec<PyRef<'_, PyImuStream>>, String)>,
        k: usize,
        window: usize,
        states: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let clips: Vec<TrainingClip> = clips
            .iter()
            .map(|(m, s, family)| {
                TrainingClip::new(m.0.clone(), s.iter().map(|x| x.0.clone()).collect()).family(family)
            })
            .collect();
        let fps = clips.first().map_or(30.0, |c| c.motion.fps);
        let config = TrainConfig {
            fps,
            k,
            w: window,
            em: EmConfig {
                n_states: states,
                seed,
                ..EmConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, _) = py.detach(|| train(&clips, &config)).map_err(py_err)?;
        Ok(Self(Arc::new(model)))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        HierarchicalModel::from_json(text)
            .map(|m| Self(Arc::new(m)))
            .map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.0.n_states()
    }

    #[getter]
    fn segments(&self) -> usize {
        self.0.segment_count()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.0.fps
    }

    /// `(family, phase)` of every phase model.
    #[getter]
    fn phases(&self) -> Vec<(String, String)> {
        self.0
            .phases
            .iter()
            .map(|p| (p.family.clone(), p.phase.to_string()))
            .collect()
    }
}

#[pyclass(name = "Reconstructor")]
struct PyReconstructor {
    state: ReconstructionState,
    skeleton: Arc<gaitrecon::motion::Skeleton>,
}

#[pymethods]
impl PyReconstructor {
    #[new]
    #[pyo3(signature = (model, foot_lock = true))]
    fn new(model: &PyModel, foot_lock: bool) -> PyResult<Self> {
        let mut config = ReconstructConfig::for_model(&model.0);
        config.foot_lock = foot_lock;
        let skeleton = Arc::new(model.0.skeleton.clone());
        let state = ReconstructionState::new(model.0.clone(), config).map_err(py_err)?;
        Ok(Self { state, skeleton })
    }

    /// Feed one frame of readings, six values per sensor. Returns a dict with
    /// the pose and the recognized phase.
    fn step<'py>(&mut self, py: Python<'py>, reading: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        if reading.is_empty() || !reading.len().is_multiple_of(6) {
            return Err(PyValueError::new_err(format!(
                "expected six values per sensor, got {}",
                reading.len()
            )));
        }
        let y = gaitrecon::motion::FeatureY {
            sensors: reading
                .chunks(6)
                .map(|c| ImuSample {
                    accel: Vec3::new(c[0], c[1], c[2]),
                    gyro: Vec3::new(c[3], c[4], c[5]),
                })
                .collect(),
        };
        let out = self.state.step(&y).map_err(py_err)?;
        let d = PyDict::new(py);
        let model = self.state.model();
        d.set_item("family", &model.phases[out.phase].family)?;
        d.set_item("phase", out.phase_label.to_string())?;
        d.set_item("posterior", out.posterior)?;
        d.set_item("reset", out.reset)?;
        let r = out.pose.root_position;
        d.set_item("root_position", [r.x, r.y, r.z])?;
        let rotations: Vec<[f64; 4]> = out
            .pose
            .joint_rotations
            .iter()
            .map(|q| [q.w, q.i, q.j, q.k])
            .collect();
        d.set_item("rotations", rotations)?;
        let positions: Vec<[f64; 3]> = forward_kinematics(&self.skeleton, &out.pose)
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect();
        d.set_item("positions", positions)?;
        Ok(d)
    }

    /// Reconstruct whole streams. Returns the clip and per-frame phase labels.
    fn run(&mut self, streams: Vec<PyRef<'_, PyImuStream>>) -> PyResult<(PyMotionClip, Vec<String>)> {
        let streams: Vec<_> = streams.iter().map(|s| s.0.clone()).collect();
        let ys = sensor_features(&streams).map_err(py_err)?;
        let mut poses = Vec::with_capacity(ys.len());
        let mut phases = Vec::with_capacity(ys.len());
        for y in &ys {
            let out = self.state.step(y).map_err(py_err)?;
            phases.push(out.phase_label.to_string());
            poses.push(out.pose);
        }
        let fps = self.state.model().fps;
        let clip = gaitrecon::motion::MotionClip::new(self.skeleton.clone(), fps, poses).map_err(py_err)?;
        Ok((PyMotionClip(clip), phases))
    }
}

/// Root-pinned joint position error between two clips, centimeters.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PyMotionClip, truth: &PyMotionClip) -> PyResult<Bound<'py, PyDict>> {
    let r = mse_eval(&pred.0, &truth.0).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("frames", r.frames)?;
    d.set_item("rmse_cm", r.rmse_cm)?;
    d.set_item("mse_cm2", r.mse_cm2)?;
    d.set_item("joints", r.joints)?;
    d.set_item("joint_rmse_cm", r.joint_rmse_cm)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "gaitrecon")]
fn gaitrecon_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyMotionClip>()?;
    m.add_class::<PyImuStream>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyReconstructor>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
