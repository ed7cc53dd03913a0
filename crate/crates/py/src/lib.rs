//! Python module `egomotion`.
//!
//! Points and matrices cross the boundary as nested lists; poses, clouds,
//! trajectories, sequences and models are wrapped in classes.

use std::path::PathBuf;

use egomotion::evaluation::{self, Dim};
use egomotion::geometry::{self, EulerAngles, RelativePose, RotMat3, Vec3};
use egomotion::neural::attention::{attention_param_count as count_attention, AttentionMode};
use egomotion::neural::checkpoint::Checkpoint;
use egomotion::neural::dataset::{encode_frames, subsample_frames, Normalizer};
use egomotion::neural::gradcheck::layer_suite;
use egomotion::neural::train::{infer_sequence, train as train_network, TrainConfig, TrainState};
use egomotion::neural::{Network, NetworkConfig, Profile};
use egomotion::registration::{self, IcpParams, Method, RansacParams, RegistrationResult};
use egomotion::sensing::{self, PanoramicSpec};
use egomotion::simulator::{generate_sequence, SimConfig, SimulatedSequence, TrajectorySpec, WorldModel};
use egomotion::{rng, Error};
use nalgebra::Matrix3;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for egomotion::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

/// Rigid body pose (rotation then translation), mapping body to world coordinates.
#[pyclass(name = "Pose", module = "egomotion", from_py_object)]
#[derive(Clone)]
pub struct PyPose(pub geometry::PoseSE3);

#[pymethods]
impl PyPose {
    /// `euler` is `[roll, pitch, yaw]` in radians, applied as Rz·Ry·Rx.
    #[new]
    #[pyo3(signature = (translation = [0.0; 3], euler = [0.0; 3]))]
    fn new(translation: [f64; 3], euler: [f64; 3]) -> Self {
        Self(geometry::PoseSE3::from_euler(vec3(translation), EulerAngles::new(euler[0], euler[1], euler[2])))
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(geometry::PoseSE3::identity())
    }

    #[staticmethod]
    fn from_matrix(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        let m = Matrix3::from_fn(|i, j| rotation[i][j]);
        Ok(Self(geometry::PoseSE3::new(RotMat3::new(m).py()?, vec3(translation))))
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        arr3(&self.0.translation)
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows(self.0.rotation.matrix())
    }

    /// `[roll, pitch, yaw]`.
    #[getter]
    fn euler(&self) -> [f64; 3] {
        let e = self.0.rotation.to_euler().angles;
        [e.roll, e.pitch, e.yaw]
    }

    /// `self ∘ other`: `other` is applied first.
    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        arr3(&self.0.transform_point(&vec3(p)))
    }

    fn transform_points(&self, points: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        points.into_iter().map(|p| self.transform_point(p)).collect()
    }

    fn max_abs_diff(&self, other: &PyPose) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    fn __repr__(&self) -> String {
        let t = self.translation();
        let e = self.euler();
        format!(
            "Pose(translation=[{}, {}, {}], euler=[{}, {}, {}])",
            t[0], t[1], t[2], e[0], e[1], e[2]
        )
    }
}

#[pyfunction]
fn euler_to_rotmat(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    rows(geometry::euler_to_rotmat(EulerAngles::new(roll, pitch, yaw)).matrix())
}

/// `(roll, pitch, yaw, gimbal_lock)`.
#[pyfunction]
fn rotmat_to_euler(m: [[f64; 3]; 3]) -> PyResult<(f64, f64, f64, bool)> {
    let r = RotMat3::new(Matrix3::from_fn(|i, j| m[i][j])).py()?;
    let d = geometry::rotmat_to_euler(&r);
    Ok((d.angles.roll, d.angles.pitch, d.angles.yaw, d.gimbal_lock))
}

/// Relative pose from `a` to `b` as `[tx, ty, tz, roll, pitch, yaw]`.
#[pyfunction]
fn relative_between(a: &PyPose, b: &PyPose) -> [f64; 6] {
    geometry::relative_between(&a.0, &b.0).0.to_vector()
}

#[pyfunction]
fn relative_to_pose(rel: [f64; 6]) -> PyPose {
    PyPose(RelativePose::from_vector(&rel).to_pose())
}

#[pyfunction]
fn wrap_angle(a: f64) -> f64 {
    geometry::wrap_angle(a)
}

#[pyclass(name = "PointCloud", module = "egomotion", from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud(pub sensing::PointCloud);

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, timestamp = 0.0))]
    fn new(points: Vec<[f64; 3]>, timestamp: f64) -> Self {
        Self(sensing::PointCloud::new(points.into_iter().map(vec3).collect(), timestamp))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(sensing::PointCloud::load(&path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(arr3).collect()
    }

    #[getter]
    fn timestamp(&self) -> f64 {
        self.0.timestamp
    }

    fn transformed(&self, pose: &PyPose) -> Self {
        Self(self.0.transformed(&pose.0))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points, t={})", self.0.len(), self.0.timestamp)
    }
}

/// Panoramic inverse-range image as `rows` lists of `cols` values in [0, 255].
#[pyfunction]
#[pyo3(signature = (cloud, rows = 32, cols = 128, h_fov_deg = 120.0, v_fov_deg = 60.0, max_range = 10.0))]
fn encode_panoramic(
    cloud: &PyPointCloud,
    rows: usize,
    cols: usize,
    h_fov_deg: f64,
    v_fov_deg: f64,
    max_range: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let spec = PanoramicSpec::from_fov(h_fov_deg.to_radians(), v_fov_deg.to_radians(), rows, cols, max_range);
    let img = sensing::encode_panoramic(&cloud.0, &spec).py()?;
    Ok(img.values.chunks(cols).map(<[f64]>::to_vec).collect())
}

fn registration_dict<'py>(py: Python<'py>, r: RegistrationResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("transform", PyPose(r.transform))?;
    d.set_item("objective", r.objective)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("inlier_count", r.inlier_count)?;
    d.set_item("history", r.history)?;
    d.set_item("init_fallback", r.init_fallback)?;
    Ok(d)
}

/// Least-squares rigid transform with `b ≈ R·a + t`.
#[pyfunction]
fn rigid_solve(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<PyPose> {
    let a: Vec<Vec3> = a.into_iter().map(vec3).collect();
    let b: Vec<Vec3> = b.into_iter().map(vec3).collect();
    Ok(PyPose(registration::rigid_solve(&a, &b).py()?))
}

/// Register `curr` onto `prev`; the transform is the motion from the previous to the current frame.
#[pyfunction]
#[pyo3(signature = (curr, prev, method = "icp", init = None, max_iters = 50, tolerance = 1e-8, reject_dist = 0.5, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn register<'py>(
    py: Python<'py>,
    curr: &PyPointCloud,
    prev: &PyPointCloud,
    method: &str,
    init: Option<PyPose>,
    max_iters: usize,
    tolerance: f64,
    reject_dist: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = IcpParams {
        max_iters,
        tolerance,
        reject_dist,
    };
    let method: Method = parse(method)?;
    let r = match (method, init) {
        (Method::Icp, Some(init)) => registration::icp(&curr.0, &prev.0, &init.0, &params),
        (Method::Icp, None) => registration::icp(&curr.0, &prev.0, &geometry::PoseSE3::identity(), &params),
        (Method::RansacIcp, _) => registration::ransac_icp(&curr.0, &prev.0, &params, &RansacParams::default(), seed),
        (Method::ImuIcp, _) => Err(Error::InvalidInput("imu-icp needs IMU samples; use Sequence.register".into())),
    };
    registration_dict(py, r.py()?)
}

#[pyclass(name = "Trajectory", module = "egomotion", from_py_object)]
#[derive(Clone)]
pub struct PyTrajectory(pub evaluation::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(entries: Vec<(f64, PyPose)>) -> PyResult<Self> {
        Ok(Self(evaluation::Trajectory::new(entries.into_iter().map(|(t, p)| (t, p.0)).collect()).py()?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(evaluation::Trajectory::load(&path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.0.timestamps()
    }

    #[getter]
    fn poses(&self) -> Vec<PyPose> {
        self.0.poses().into_iter().map(PyPose).collect()
    }

    /// Consecutive relative poses as `[tx, ty, tz, roll, pitch, yaw]`.
    fn relatives(&self) -> Vec<[f64; 6]> {
        self.0.relatives().iter().map(RelativePose::to_vector).collect()
    }

    fn path_length(&self) -> f64 {
        self.0.path_length()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Trajectory({} entries)", self.0.len())
    }
}

#[pyfunction]
fn compose_trajectory(start: &PyPose, rels: Vec<[f64; 6]>, timestamps: Vec<f64>) -> PyResult<PyTrajectory> {
    let rels: Vec<RelativePose> = rels.iter().map(|v| RelativePose::from_vector(v)).collect();
    Ok(PyTrajectory(evaluation::compose_trajectory(start.0, &rels, &timestamps).py()?))
}

/// ATE statistics; `align` is `first`, `full` or `none`.
#[pyfunction]
#[pyo3(signature = (estimate, reference, dim = "3D", align = "none"))]
fn ate<'py>(
    py: Python<'py>,
    estimate: &PyTrajectory,
    reference: &PyTrajectory,
    dim: &str,
    align: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let dim: Dim = parse(dim)?;
    let est = match align {
        "first" => evaluation::align_first_frame(&estimate.0, &reference.0).py()?,
        "full" => evaluation::align_full(&estimate.0, &reference.0, None).py()?,
        "none" => estimate.0.clone(),
        other => return Err(PyValueError::new_err(format!("unknown alignment {other:?}"))),
    };
    let r = evaluation::ate(&est, &reference.0, dim).py()?;
    let d = PyDict::new(py);
    d.set_item("mean", r.mean)?;
    d.set_item("std", r.std)?;
    d.set_item("max", r.max)?;
    d.set_item("drift_percent", r.drift_percent)?;
    d.set_item("per_frame", r.per_frame.clone())?;
    d.set_item("frames", r.frames.clone())?;
    d.set_item("cdf", evaluation::cdf_export(&r))?;
    Ok(d)
}

#[pyclass(name = "Sequence", module = "egomotion", from_py_object)]
#[derive(Clone)]
pub struct PySequence(pub SimulatedSequence);

#[pymethods]
impl PySequence {
    /// Simulate a sequence through `x y z [yaw_deg]` waypoints separated by `;`.
    #[staticmethod]
    #[pyo3(signature = (waypoints = "-2 -0.5 1.2 0; 2 -0.5 1.2 0", seed = 0, frame_rate = 20.0, speed = 1.0, room = (8.0, 6.0, 3.0)))]
    fn simulate(waypoints: &str, seed: u64, frame_rate: f64, speed: f64, room: (f64, f64, f64)) -> PyResult<Self> {
        let spec = TrajectorySpec::new(TrajectorySpec::parse_waypoints(waypoints).py()?, frame_rate, speed).py()?;
        let world = WorldModel::furnished_room(room.0, room.1, room.2);
        Ok(Self(generate_sequence(&world, &spec, &SimConfig::default(), seed).py()?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(SimulatedSequence::load(&path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.0.save(&path).py()
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.0.timestamps()
    }

    fn ground_truth(&self) -> PyResult<PyTrajectory> {
        Ok(PyTrajectory(self.0.ground_truth().py()?))
    }

    fn radar(&self, k: usize) -> PyResult<PyPointCloud> {
        let f = self.0.frames.get(k).ok_or_else(|| PyIndexError::new_err(format!("no frame {k}")))?;
        Ok(PyPointCloud(f.cloud.clone()))
    }

    fn dense(&self, k: usize) -> PyResult<Option<PyPointCloud>> {
        let f = self.0.frames.get(k).ok_or_else(|| PyIndexError::new_err(format!("no frame {k}")))?;
        Ok(f.dense.clone().map(PyPointCloud))
    }

    /// Chain pairwise registrations from the first ground-truth pose; `source` is `radar` or `dense`.
    #[pyo3(signature = (method = "icp", source = "radar", seed = 0))]
    fn register(&self, method: &str, source: &str, seed: u64) -> PyResult<PyTrajectory> {
        let outcomes = registration::register_sequence(
            &self.0.frames,
            parse(source)?,
            parse(method)?,
            &IcpParams::default(),
            &RansacParams::default(),
            seed,
        )
        .py()?;
        let mut pose = self.0.frames[0].ground_truth.unwrap_or_else(geometry::PoseSE3::identity);
        let mut entries = vec![(self.0.frames[0].timestamp(), pose)];
        for (f, o) in self.0.frames[1..].iter().zip(&outcomes) {
            pose = pose.compose(&o.relative);
            entries.push((f.timestamp(), pose));
        }
        Ok(PyTrajectory(evaluation::Trajectory::new(entries).py()?))
    }

    fn __len__(&self) -> usize {
        self.0.frames.len()
    }

    fn __repr__(&self) -> String {
        format!("Sequence({} frames, seed {})", self.0.frames.len(), self.0.seed)
    }
}

/// Odometry network with its input normalizer.
#[pyclass(name = "Model", module = "egomotion")]
pub struct PyModel(pub Checkpoint);

#[pymethods]
impl PyModel {
    /// Freshly initialised network; `profile` is `toy`, `paper` or `tiny`.
    #[new]
    #[pyo3(signature = (profile = "toy", seed = 0))]
    fn new(profile: &str, seed: u64) -> PyResult<Self> {
        let net = Network::new(NetworkConfig::profile(parse::<Profile>(profile)?), seed).py()?;
        Ok(Self(Checkpoint::new(net, Normalizer::default())))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Checkpoint::load(&path).py()?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[getter]
    fn profile(&self) -> String {
        self.0.network.config.profile.to_string()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.0.epoch
    }

    fn param_count(&self) -> usize {
        self.0.network.param_count()
    }

    /// Train on `sequences`, returning the mean loss of each epoch run.
    ///
    /// The normalizer is fitted on the first call and kept afterwards.
    #[pyo3(signature = (sequences, epochs = 200, lr = 1e-5, subsequence_length = 16, seed = 0))]
    fn train(&mut self, sequences: Vec<PySequence>, epochs: usize, lr: f64, subsequence_length: usize, seed: u64) -> PyResult<Vec<f64>> {
        let ck = &mut self.0;
        let data = sequences
            .iter()
            .map(|s| encode_frames(&s.0.frames, &ck.network.config))
            .collect::<egomotion::Result<Vec<_>>>()
            .py()?;
        if ck.epoch == 0 {
            ck.normalizer = Normalizer::fit(&data);
        }
        let tc = TrainConfig {
            lr,
            epochs: ck.epoch + epochs,
            subsequence_length,
            seed,
            ..TrainConfig::default()
        };
        let mut state = TrainState {
            optimizer: std::mem::take(&mut ck.optimizer),
            epoch: ck.epoch,
            history: Vec::new(),
        };
        let result = train_network(&mut ck.network, &data, &ck.normalizer, &tc, &mut state);
        ck.optimizer = state.optimizer;
        ck.epoch = state.epoch;
        ck.meta.set("train.subsequence_length", subsequence_length);
        Ok(result.py()?.iter().map(|r| r.mean_loss).collect())
    }

    /// Trajectory over every `subsample`-th frame, starting at its ground truth.
    #[pyo3(signature = (sequence, subsample = 1, chunk = None))]
    fn infer(&self, sequence: &PySequence, subsample: usize, chunk: Option<usize>) -> PyResult<PyTrajectory> {
        let ck = &self.0;
        let frames = subsample_frames(&sequence.0.frames, subsample).py()?;
        let encoded = encode_frames(&frames, &ck.network.config).py()?;
        let chunk = chunk.unwrap_or_else(|| ck.meta.get_or("train.subsequence_length", 16).unwrap_or(16));
        let rels = infer_sequence(&ck.network, &encoded, &ck.normalizer, chunk).py()?;
        let start = frames[0].ground_truth.unwrap_or_else(geometry::PoseSE3::identity);
        Ok(PyTrajectory(evaluation::compose_trajectory(start, &rels, &encoded.timestamps).py()?))
    }

    fn __repr__(&self) -> String {
        format!("Model(profile={}, parameters={}, epoch={})", self.profile(), self.param_count(), self.0.epoch)
    }
}

/// Pose loss over `[tx, ty, tz, roll, pitch, yaw]` rows with wrapped rotation residuals.
#[pyfunction]
#[pyo3(signature = (pred, truth, gamma = 0.001))]
fn pose_loss(pred: Vec<[f64; 6]>, truth: Vec<[f64; 6]>, gamma: f64) -> PyResult<f64> {
    egomotion::neural::pose_loss(&pred, &truth, gamma).py()
}

/// Attention weight count for modality lengths; `mode` is `mixed` or `single`.
#[pyfunction]
fn attention_param_count(mode: &str, n_m: u64, n_i: u64, n_v: u64) -> PyResult<u64> {
    let mode = match mode {
        "mixed" => AttentionMode::Mixed,
        "single" => AttentionMode::SingleStage,
        other => return Err(PyValueError::new_err(format!("unknown attention mode {other:?}"))),
    };
    Ok(count_attention(mode, n_m, n_i, n_v))
}

/// Finite-difference check of every layer: `(op, passed, max_rel_error)` per op.
#[pyfunction]
#[pyo3(signature = (seed = 0, profile = "tiny", max_per_param = None))]
fn gradcheck(seed: u64, profile: &str, max_per_param: Option<usize>) -> PyResult<Vec<(String, bool, f64)>> {
    let config = NetworkConfig::profile(parse(profile)?);
    let suite = layer_suite(seed, Some(config), max_per_param, None).py()?;
    Ok(suite
        .into_iter()
        .map(|e| (e.name.to_string(), e.passed(), e.report.max_rel_error))
        .collect())
}

/// Derived 64-bit seed for a named random stream.
#[pyfunction]
fn stream_seed(root: u64, name: &str) -> u64 {
    rng::stream_seed(root, name)
}

#[pymodule(name = "egomotion")]
pub fn egomotion_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(euler_to_rotmat, m)?)?;
    m.add_function(wrap_pyfunction!(rotmat_to_euler, m)?)?;
    m.add_function(wrap_pyfunction!(relative_between, m)?)?;
    m.add_function(wrap_pyfunction!(relative_to_pose, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_angle, m)?)?;
    m.add_function(wrap_pyfunction!(encode_panoramic, m)?)?;
    m.add_function(wrap_pyfunction!(rigid_solve, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(compose_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(pose_loss, m)?)?;
    m.add_function(wrap_pyfunction!(attention_param_count, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(stream_seed, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
