//! Python bindings. Images cross the boundary as `Image` objects holding
//! row-major `(height, width, channels)` f64 data; `Image.numpy()` returns a
//! numpy copy when numpy is installed.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use colordot::basis::{
    build_system_matrix, condition_number_reduced, fit_basis, reconstruct_image, BasisModel, ReconInput,
    ReconParams, Reconstructor, Regularization, ShadingMode, SystemMatrix, DEFAULT_BASIS_SIZE,
    DEFAULT_MAX_WINDOW_RADIUS, DEFAULT_SMOOTHNESS_WEIGHT,
};
use colordot::error::Error;
use colordot::image::{ImagePlane, Mask};
use colordot::loss::{total_loss, LossWeights};
use colordot::metrics::{depth_metrics, reflectance_metrics};
use colordot::pattern::{generate_pattern, DotPattern};
use colordot::record::{load_sample, save_sample};
use colordot::render::{
    render_scene_with, synthetic_reflectance_corpus, Axis, AxisPlane, RectifiedRig, ReflectanceMap, RenderOptions,
    Sample, Scene, SceneConfig, SceneObject, Shape,
};
use colordot::spectral::{CameraSensitivity, ProjectorPrimaries, Spectrum, WavelengthGrid};

create_exception!(colordot, ColordotError, PyValueError);

fn py_err(e: Error) -> PyErr {
    let text = format!("kind={}: {}", e.kind(), e);
    match e {
        Error::Io { .. } => PyIOError::new_err(text),
        _ => ColordotError::new_err(text),
    }
}

trait OrPyErr<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPyErr<T> for colordot::error::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Dense f64 image, `(height, width, channels)` row-major.
#[pyclass(name = "Image", module = "colordot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: ImagePlane,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ImagePlane::from_vec(width, height, channels, data).py()?,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.height(), self.inner.width(), self.inner.channels())
    }

    fn get(&self, u: usize, v: usize, c: usize) -> PyResult<f64> {
        let i = &self.inner;
        if u >= i.width() || v >= i.height() || c >= i.channels() {
            return Err(ColordotError::new_err(format!("index ({u}, {v}, {c}) out of bounds")));
        }
        Ok(i.get(u, v, c))
    }

    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    /// Copy as a numpy array of shape `(height, width, channels)`.
    fn numpy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let np = py.import("numpy")?;
        let flat = np.call_method1("asarray", (self.inner.data().to_vec(),))?;
        flat.call_method1("reshape", (self.shape(),))
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.shape();
        format!("Image(height={h}, width={w}, channels={c})")
    }
}

fn image(p: &ImagePlane) -> PyImage {
    PyImage { inner: p.clone() }
}

fn mask_from(values: Vec<bool>, width: usize, height: usize) -> PyResult<Mask> {
    Mask::from_vec(width, height, values).py()
}

/// Rectified camera–projector rig; the projector sits at `(baseline, 0, 0)`.
#[pyclass(name = "Rig", module = "colordot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRig {
    inner: RectifiedRig,
}

#[pymethods]
impl PyRig {
    #[new]
    #[pyo3(signature = (width=640, height=480, focal_px=500.0, baseline_m=0.1, principal_point=None, max_disparity_px=200.0))]
    fn new(
        width: usize,
        height: usize,
        focal_px: f64,
        baseline_m: f64,
        principal_point: Option<(f64, f64)>,
        max_disparity_px: f64,
    ) -> PyResult<Self> {
        let (cx, cy) = principal_point.unwrap_or((width as f64 / 2.0, height as f64 / 2.0));
        let inner = RectifiedRig {
            baseline_m,
            focal_px,
            principal_point: [cx, cy],
            width,
            height,
            max_disparity_px,
        };
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn focal_px(&self) -> f64 {
        self.inner.focal_px
    }

    #[getter]
    fn baseline_m(&self) -> f64 {
        self.inner.baseline_m
    }

    #[getter]
    fn principal_point(&self) -> (f64, f64) {
        (self.inner.principal_point[0], self.inner.principal_point[1])
    }

    fn disparity_for_depth(&self, depth: f64) -> PyResult<f64> {
        colordot::render::disparity_from_depth(depth, &self.inner).py()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Seeded random R/G/B dot pattern.
#[pyclass(name = "Pattern", module = "colordot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPattern {
    inner: DotPattern,
}

#[pymethods]
impl PyPattern {
    #[staticmethod]
    #[pyo3(signature = (width=640, height=480, seed=0))]
    fn generate(width: usize, height: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: generate_pattern(width, height, seed).py()?,
        })
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DotPattern::load_png(&path).py()?,
        })
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_png(&path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    /// Row-major label indices, 0 = R, 1 = G, 2 = B.
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().iter().map(|l| l.index() as u8).collect()
    }

    fn counts(&self) -> [usize; 3] {
        self.inner.counts()
    }

    /// The pattern as a ±1 one-hot image.
    fn signed(&self) -> PyImage {
        PyImage {
            inner: self.inner.to_signed_plane(),
        }
    }
}

/// Rendered record: image plus ground-truth disparity, depth, reflectance
/// and validity mask.
#[pyclass(name = "Sample", module = "colordot", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: Sample,
}

#[pymethods]
impl PySample {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_sample(&dir).py()?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_sample(&dir, &self.inner).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn image(&self) -> PyImage {
        image(&self.inner.image)
    }

    #[getter]
    fn disparity(&self) -> PyImage {
        image(&self.inner.disparity)
    }

    #[getter]
    fn depth(&self) -> PyImage {
        image(&self.inner.depth)
    }

    #[getter]
    fn reflectance(&self) -> PyImage {
        image(&self.inner.reflectance)
    }

    /// Row-major validity flags.
    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.mask.data().to_vec()
    }

    #[getter]
    fn rig(&self) -> PyRig {
        PyRig { inner: self.inner.meta.rig }
    }

    fn pattern(&self) -> PyResult<PyPattern> {
        Ok(PyPattern {
            inner: self.inner.pattern().py()?,
        })
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.inner.check_invariants().map_err(ColordotError::new_err)
    }

    fn __repr__(&self) -> String {
        format!("Sample({}x{}, {} valid)", self.width(), self.height(), self.inner.mask.count())
    }
}

fn default_spectra() -> PyResult<(ProjectorPrimaries, CameraSensitivity)> {
    let grid = WavelengthGrid::default();
    Ok((
        ProjectorPrimaries::default_for(grid).py()?,
        CameraSensitivity::default_for(grid).py()?,
    ))
}

/// Renders a scene config JSON file; relative paths resolve against its
/// directory.
#[pyfunction]
#[pyo3(signature = (path, pattern=None, noise_std=None, seed=None))]
fn render_config(
    path: PathBuf,
    pattern: Option<&PyPattern>,
    noise_std: Option<f64>,
    seed: Option<u64>,
) -> PyResult<PySample> {
    let config = SceneConfig::load(&path).py()?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let scene = config.build_scene(&base).py()?;
    let (primaries, sensitivity) = config.spectral_setup(&base).py()?;
    let pattern = match pattern {
        Some(p) => p.inner.clone(),
        None => generate_pattern(config.rig.width, config.rig.height, config.pattern_seed()).py()?,
    };
    let options = RenderOptions {
        noise_std: noise_std.unwrap_or(config.noise_std),
        seed: seed.unwrap_or(config.seed),
    };
    let inner = render_scene_with(&scene, &config.rig, &pattern, &primaries, &sensitivity, &options).py()?;
    Ok(PySample { inner })
}

/// Fronto-parallel plane at depth `z` with one reflectance (27 values on
/// the 410–670 nm grid).
#[pyfunction]
#[pyo3(signature = (z, reflectance, rig=None, pattern=None))]
fn render_plane(z: f64, reflectance: Vec<f64>, rig: Option<&PyRig>, pattern: Option<&PyPattern>) -> PyResult<PySample> {
    let rig = rig.map(|r| r.inner).unwrap_or_default();
    let grid = WavelengthGrid::default();
    let scene = Scene::new(
        grid,
        vec![Spectrum::reflectance(grid, reflectance).py()?],
        vec![SceneObject {
            shape: Shape::Plane(AxisPlane {
                axis: Axis::Z,
                offset: z,
                bounds: None,
            }),
            reflectance: ReflectanceMap::Uniform(0),
        }],
    )
    .py()?;
    let pattern = match pattern {
        Some(p) => p.inner.clone(),
        None => generate_pattern(rig.width, rig.height, 0).py()?,
    };
    let (primaries, sensitivity) = default_spectra()?;
    let inner = render_scene_with(&scene, &rig, &pattern, &primaries, &sensitivity, &RenderOptions::default()).py()?;
    Ok(PySample { inner })
}

/// Local contrast normalization.
#[pyfunction]
#[pyo3(signature = (img, window=11, eta=1e-4))]
fn lcn(img: &PyImage, window: usize, eta: f64) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: colordot::image::lcn(&img.inner, window, eta).py()?,
    })
}

/// Samples `field` at `u − D(u, v)` with linear interpolation.
#[pyfunction]
fn warp(field: &PyImage, disparity: &PyImage) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: colordot::image::warp_by_disparity(&field.inner, &disparity.inner).py()?,
    })
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ColordotError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Depth RMSE and θ accuracies over `mask`.
#[pyfunction]
fn depth_accuracy<'py>(py: Python<'py>, z_hat: &PyImage, z_gt: &PyImage, mask: Vec<bool>) -> PyResult<Bound<'py, PyAny>> {
    let m = mask_from(mask, z_gt.inner.width(), z_gt.inner.height())?;
    to_dict(py, &depth_metrics(&z_hat.inner, &z_gt.inner, &m).py()?)
}

/// Reflectance RMSE and MRAE over `mask`.
#[pyfunction]
fn reflectance_accuracy<'py>(
    py: Python<'py>,
    r_hat: &PyImage,
    r_gt: &PyImage,
    mask: Vec<bool>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = mask_from(mask, r_gt.inner.width(), r_gt.inner.height())?;
    to_dict(py, &reflectance_metrics(&r_hat.inner, &r_gt.inner, &m).py()?)
}

/// All loss terms and their weighted total for a prediction.
#[pyfunction]
fn losses<'py>(py: Python<'py>, sample: &PySample, d_hat: &PyImage, r_hat: &PyImage) -> PyResult<Bound<'py, PyAny>> {
    to_dict(
        py,
        &total_loss(&sample.inner, &d_hat.inner, &r_hat.inner, &LossWeights::default()).py()?,
    )
}

fn system_and_basis(k: usize, corpus_seed: u64) -> PyResult<(SystemMatrix, BasisModel)> {
    let (primaries, sensitivity) = default_spectra()?;
    let corpus = synthetic_reflectance_corpus(WavelengthGrid::default(), 256, corpus_seed).py()?;
    Ok((
        build_system_matrix(&sensitivity, &primaries).py()?,
        fit_basis(&corpus, k).py()?,
    ))
}

/// Raw and basis-regularized condition numbers with the default spectra.
#[pyfunction]
#[pyo3(signature = (k=DEFAULT_BASIS_SIZE, weight=DEFAULT_SMOOTHNESS_WEIGHT, corpus_seed=1))]
fn condition_numbers<'py>(py: Python<'py>, k: usize, weight: f64, corpus_seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (system, basis) = system_and_basis(k, corpus_seed)?;
    let d = PyDict::new(py);
    d.set_item("raw", system.condition_number().py()?)?;
    d.set_item("reduced", condition_number_reduced(&system, &basis, weight).py()?)?;
    d.set_item("rank", system.rank())?;
    d.set_item("K", basis.k())?;
    d.set_item("weight", weight)?;
    Ok(d.into_any())
}

/// Per-window basis reconstruction of a sample's reflectance. Returns the
/// reflectance image and the valid mask.
#[pyfunction]
#[pyo3(signature = (sample, disparity=None, k=DEFAULT_BASIS_SIZE, weight=DEFAULT_SMOOTHNESS_WEIGHT,
    shading="known", regularization="constrained", max_window_radius=DEFAULT_MAX_WINDOW_RADIUS, corpus_seed=1))]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    sample: &PySample,
    disparity: Option<&PyImage>,
    k: usize,
    weight: f64,
    shading: &str,
    regularization: &str,
    max_window_radius: usize,
    corpus_seed: u64,
) -> PyResult<(PyImage, Vec<bool>)> {
    let shading = match shading {
        "known" => ShadingMode::Known,
        "unknown" => ShadingMode::Unknown,
        other => return Err(ColordotError::new_err(format!("shading must be known|unknown, got {other}"))),
    };
    let regularization = match regularization {
        "constrained" => Regularization::Constrained,
        "penalized" => Regularization::Penalized,
        other => {
            return Err(ColordotError::new_err(format!(
                "regularization must be constrained|penalized, got {other}"
            )))
        }
    };
    let (system, basis) = system_and_basis(k, corpus_seed)?;
    let params = ReconParams {
        smoothness_weight: weight,
        shading,
        regularization,
        max_window_radius,
    };
    let recon = Reconstructor::new(system, basis, params).py()?;
    let s = &sample.inner;
    let pattern = s.pattern().py()?;
    let disparity = disparity.map(|d| &d.inner).unwrap_or(&s.disparity);
    let out = reconstruct_image(
        &ReconInput {
            image: &s.image,
            disparity,
            mask: &s.mask,
            pattern: &pattern,
            rig: &s.meta.rig,
            shading: None,
        },
        &recon,
    )
    .py()?;
    Ok((image(&out.reflectance), out.valid.data().to_vec()))
}

#[pymodule(name = "colordot")]
fn colordot_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ColordotError", m.py().get_type::<ColordotError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyRig>()?;
    m.add_class::<PyPattern>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(render_config, m)?)?;
    m.add_function(wrap_pyfunction!(render_plane, m)?)?;
    m.add_function(wrap_pyfunction!(lcn, m)?)?;
    m.add_function(wrap_pyfunction!(warp, m)?)?;
    m.add_function(wrap_pyfunction!(depth_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(reflectance_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(losses, m)?)?;
    m.add_function(wrap_pyfunction!(condition_numbers, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    Ok(())
}
