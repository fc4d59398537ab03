//! Python bindings for the `odlt` pose estimators.
//!
//! Points and pixels are passed as sequences of 3- and 2-element sequences
//! (lists, tuples or NumPy rows); matrices come back as nested lists.

use nalgebra::{Matrix3, Vector2, Vector3};
use odlt::evaluation::{generate_scene as gen_scene, SyntheticScenario};
use odlt::geometry::{quat_to_rotation, rotation_angle_deg as angle_deg, rotation_to_quat};
use odlt::solvers::{self, Method, SolverConfig};
use odlt::{CameraIntrinsics, Correspondence, Pose};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(
    odlt_py,
    SolverError,
    PyException,
    "A pose solver could not produce a result."
);

fn solver_err(e: odlt::Error) -> PyErr {
    match e {
        odlt::Error::InvalidConfig(_) | odlt::Error::SingularCalibration => PyValueError::new_err(e.to_string()),
        _ => SolverError::new_err(e.to_string()),
    }
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn from_rows(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

/// Pairs points with pixels, checking lengths and finiteness.
pub fn correspondences(points: &[[f64; 3]], pixels: &[[f64; 2]]) -> Result<Vec<Correspondence>, String> {
    if points.len() != pixels.len() {
        return Err(format!("{} points but {} pixels", points.len(), pixels.len()));
    }
    points
        .iter()
        .zip(pixels)
        .enumerate()
        .map(|(i, (p, u))| {
            Correspondence::new(Vector3::from(*p), Vector2::from(*u)).map_err(|e| format!("correspondence {i}: {e}"))
        })
        .collect()
}

fn build(points: Vec<[f64; 3]>, pixels: Vec<[f64; 2]>) -> PyResult<Vec<Correspondence>> {
    correspondences(&points, &pixels).map_err(PyValueError::new_err)
}

fn parse_method(name: &str) -> PyResult<Method> {
    name.parse().map_err(solver_err)
}

/// Pinhole calibration.
#[pyclass(name = "CameraIntrinsics", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyIntrinsics(CameraIntrinsics);

#[pymethods]
impl PyIntrinsics {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, skew = 0.0))]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> PyResult<Self> {
        CameraIntrinsics::with_skew(fx, fy, cx, cy, skew)
            .map(Self)
            .map_err(solver_err)
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }
    #[getter]
    fn skew(&self) -> f64 {
        self.0.skew
    }

    /// The 3x3 calibration matrix as nested lists.
    fn matrix(&self) -> [[f64; 3]; 3] {
        to_rows(&self.0.matrix())
    }

    /// Projects a world point seen by `pose` to pixels.
    fn project(&self, pose: &PyPose, point: [f64; 3]) -> PyResult<[f64; 2]> {
        let u = odlt::geometry::project_pose(&self.0, &pose.0, &Vector3::from(point)).map_err(solver_err)?;
        Ok([u.x, u.y])
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!(
            "CameraIntrinsics(fx={}, fy={}, cx={}, cy={}, skew={})",
            k.fx, k.fy, k.cx, k.cy, k.skew
        )
    }
}

/// World-to-camera rotation and camera center.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPose(Pose);

#[pymethods]
impl PyPose {
    #[new]
    fn new(rotation: [[f64; 3]; 3], center: [f64; 3]) -> PyResult<Self> {
        Pose::new(from_rows(rotation), Vector3::from(center))
            .map(Self)
            .map_err(solver_err)
    }

    /// Pose from a `(w, x, y, z)` quaternion and translation `t = -R c`.
    #[staticmethod]
    fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let r = quat_to_rotation(q).map_err(solver_err)?;
        Pose::from_rotation_translation(r, Vector3::from(translation))
            .map(Self)
            .map_err(solver_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(Pose::identity())
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        to_rows(self.0.rotation())
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        (*self.0.center()).into()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation().into()
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        rotation_to_quat(self.0.rotation())
    }

    /// Rotation angle in degrees between this pose and `other`.
    fn angle_to(&self, other: &PyPose) -> f64 {
        angle_deg(self.0.rotation(), other.0.rotation())
    }

    fn __repr__(&self) -> String {
        let c = self.0.center();
        let q = rotation_to_quat(self.0.rotation());
        format!(
            "Pose(q=[{:.6}, {:.6}, {:.6}, {:.6}], center=[{:.6}, {:.6}, {:.6}])",
            q[0], q[1], q[2], q[3], c.x, c.y, c.z
        )
    }
}

/// Output of one solve.
#[pyclass(name = "PnpResult", frozen, skip_from_py_object)]
struct PyPnpResult(solvers::PnpResult);

#[pymethods]
impl PyPnpResult {
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.name()
    }

    #[getter]
    fn pose(&self) -> PyPose {
        PyPose(self.0.pose)
    }

    #[getter]
    fn reprojection_rms(&self) -> f64 {
        self.0.reprojection_rms
    }

    #[getter]
    fn flags(&self) -> Vec<&'static str> {
        self.0.flags.iter().map(|f| f.name()).collect()
    }

    #[getter]
    fn runtime_ms(&self) -> f64 {
        self.0.timings.total().as_secs_f64() * 1e3
    }

    /// `(stage, milliseconds)` pairs in execution order.
    #[getter]
    fn stages(&self) -> Vec<(&'static str, f64)> {
        self.0
            .timings
            .stages
            .iter()
            .map(|(s, d)| (*s, d.as_secs_f64() * 1e3))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "PnpResult(method={}, rms={:.4} px)",
            self.0.method, self.0.reprojection_rms
        )
    }
}

/// Estimates the camera pose from 3D-2D correspondences.
#[pyfunction]
#[pyo3(signature = (points, pixels, intrinsics, method = "odlt+lost", sigma_u = 1.0, seed = 0, subset_size = 12, procrustes_iterations = 1))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    points: Vec<[f64; 3]>,
    pixels: Vec<[f64; 2]>,
    intrinsics: &PyIntrinsics,
    method: &str,
    sigma_u: f64,
    seed: u64,
    subset_size: usize,
    procrustes_iterations: usize,
) -> PyResult<PyPnpResult> {
    let cs = build(points, pixels)?;
    let cfg = SolverConfig {
        sigma_u,
        seed,
        subset_size,
        procrustes_iterations,
        ..SolverConfig::with_method(parse_method(method)?)
    };
    let k = intrinsics.0;
    py.detach(|| solvers::solve(&cs, &k, &cfg))
        .map(PyPnpResult)
        .map_err(solver_err)
}

/// Gauss-Newton refinement of the reprojection error from `init`.
#[pyfunction]
#[pyo3(signature = (points, pixels, intrinsics, init, max_iters = 10))]
fn refine_gauss_newton(
    points: Vec<[f64; 3]>,
    pixels: Vec<[f64; 2]>,
    intrinsics: &PyIntrinsics,
    init: &PyPose,
    max_iters: usize,
) -> PyResult<PyPnpResult> {
    let cs = build(points, pixels)?;
    let cfg = SolverConfig {
        gn_max_iters: max_iters,
        ..SolverConfig::with_method(Method::NdltGn)
    };
    solvers::refine_gauss_newton(&cs, &intrinsics.0, &init.0, &cfg)
        .map(PyPnpResult)
        .map_err(solver_err)
}

/// Uncalibrated 3x4 projection matrix from `dlt`, `ndlt` or `odlt`.
#[pyfunction]
#[pyo3(signature = (points, pixels, method = "odlt", sigma_u = 1.0))]
fn estimate_projection(
    points: Vec<[f64; 3]>,
    pixels: Vec<[f64; 2]>,
    method: &str,
    sigma_u: f64,
) -> PyResult<[[f64; 4]; 3]> {
    let cs = build(points, pixels)?;
    let cfg = SolverConfig {
        sigma_u,
        ..SolverConfig::with_method(parse_method(method)?)
    };
    let p = solvers::estimate_projection(&cs, &cfg).map_err(solver_err)?;
    let m = p.matrix();
    Ok([0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]]))
}

/// Synthetic scene: `(points, pixels, intrinsics, true_pose)`.
#[pyfunction]
#[pyo3(signature = (n, sigma = 1.0, scenario = "centered", seed = 0, trial = 0))]
#[allow(clippy::type_complexity)]
fn generate_scene(
    n: usize,
    sigma: f64,
    scenario: &str,
    seed: u64,
    trial: usize,
) -> PyResult<(Vec<[f64; 3]>, Vec<[f64; 2]>, PyIntrinsics, PyPose)> {
    let sc = match scenario {
        "centered" => SyntheticScenario::centered(n, sigma, 1, seed),
        "uncentered" => SyntheticScenario::uncentered(n, sigma, 1, seed),
        other => return Err(PyValueError::new_err(format!("unknown scenario '{other}'"))),
    };
    sc.validate().map_err(solver_err)?;
    let (cs, truth) = gen_scene(&sc, trial);
    Ok((
        cs.iter().map(|c| c.point.into()).collect(),
        cs.iter().map(|c| c.pixel.into()).collect(),
        PyIntrinsics(sc.intrinsics),
        PyPose(truth),
    ))
}

/// Angle in degrees of `a b^T` for two rotation matrices.
#[pyfunction]
fn rotation_angle_deg(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> f64 {
    angle_deg(&from_rows(a), &from_rows(b))
}

/// Names accepted by the `method` arguments.
#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(Method::name).collect()
}

/// Per-image PnP problems of a COLMAP text model:
/// `[(name, intrinsics, points, pixels, true_pose), ...]`.
#[pyfunction]
#[pyo3(signature = (model_dir, min_points = 6))]
#[allow(clippy::type_complexity)]
fn load_colmap(
    model_dir: std::path::PathBuf,
    min_points: usize,
) -> PyResult<Vec<(String, PyIntrinsics, Vec<[f64; 3]>, Vec<[f64; 2]>, PyPose)>> {
    let model = odlt::colmap::parse_model(&model_dir).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(odlt::colmap::build_problems(&model, min_points)
        .problems
        .into_iter()
        .map(|p| {
            (
                p.name,
                PyIntrinsics(p.intrinsics),
                p.correspondences.iter().map(|c| c.point.into()).collect(),
                p.correspondences.iter().map(|c| c.pixel.into()).collect(),
                PyPose(p.truth),
            )
        })
        .collect())
}

#[pymodule]
fn odlt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyPnpResult>()?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(refine_gauss_newton, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_projection, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_angle_deg, m)?)?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(load_colmap, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
