//! Linear spectral reconstruction from the nine (illumination × channel)
//! measurements of a 3×3 dot neighbourhood, regularized by a PCA basis and
//! a second-difference smoothness penalty.
//!
//! Reflectance is modelled as `r = β₀·mean + B·γ`, i.e. coefficients `β`
//! over the augmented basis `[mean | B]`. Keeping the mean as a free
//! coefficient keeps the solve linear in the intensities; with unknown
//! shading, `β₀` absorbs the shading scale.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask};
use crate::pattern::{DotLabel, DotPattern};
use crate::render::RectifiedRig;
use crate::spectral::{shading_factor, CameraSensitivity, ProjectorPrimaries, Spectrum, WavelengthGrid};

/// Default smoothness weight, chosen by a sweep over the default spectra.
pub const DEFAULT_SMOOTHNESS_WEIGHT: f64 = 1e-2;
pub const DEFAULT_BASIS_SIZE: usize = 8;

/// Ridge added to the partial-window objective so the minimizer is unique.
const PARTIAL_RIDGE: f64 = 1e-6;

fn relative_tolerance(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    sigma_max * m.nrows().max(m.ncols()) as f64 * f64::EPSILON
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Number of singular values above `σ_max · max(rows, cols) · ε`.
pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let tol = relative_tolerance(m, max);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest over smallest nonzero singular value.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("condition_number: matrix has non-finite entries".into()));
    }
    let sv = singular_values(m);
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Argument("condition_number of an all-zero matrix".into()));
    }
    let tol = relative_tolerance(m, max);
    let min = sv.iter().copied().filter(|&s| s > tol).fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// Second differences over bands, `(n−2) × n`.
pub fn smoothness_operator(bands: usize) -> DMatrix<f64> {
    let rows = bands.saturating_sub(2);
    DMatrix::from_fn(rows, bands, |i, j| match j.wrapping_sub(i) {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    })
}

/// Row `3·i + n` holds `c_n ⊙ l_i` for primary `i` and camera channel `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    grid: WavelengthGrid,
    matrix: DMatrix<f64>,
}

pub fn build_system_matrix(sensitivity: &CameraSensitivity, primaries: &ProjectorPrimaries) -> Result<SystemMatrix> {
    let grid = *sensitivity.grid();
    grid.check_same(primaries.grid(), "build_system_matrix")?;
    let matrix = DMatrix::from_fn(9, grid.band_count, |row, k| {
        sensitivity.channel(row % 3)[k] * primaries.get(row / 3).values()[k]
    });
    Ok(SystemMatrix { grid, matrix })
}

impl SystemMatrix {
    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        matrix_rank(&self.matrix)
    }

    pub fn condition_number(&self) -> Result<f64> {
        condition_number(&self.matrix)
    }

    /// Noiseless unit-shading measurements of `r`, ordered like the rows.
    pub fn apply(&self, reflectance: &Spectrum) -> Result<[f64; 9]> {
        self.grid.check_same(reflectance.grid(), "SystemMatrix::apply")?;
        let r = reflectance.values();
        let mut out = [0.0; 9];
        for (row, o) in out.iter_mut().enumerate() {
            *o = (0..r.len()).map(|k| self.matrix[(row, k)] * r[k]).sum();
        }
        Ok(out)
    }
}

/// Mean spectrum plus `K` orthonormal principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisModel {
    grid: WavelengthGrid,
    mean: Vec<f64>,
    /// `N_λ × K`, orthonormal columns.
    basis: DMatrix<f64>,
    /// Corpus variance captured by each column, when fitted.
    variances: Option<Vec<f64>>,
}

/// PCA of a reflectance corpus. Each component's sign is fixed so its
/// largest-magnitude entry is positive.
pub fn fit_basis(corpus: &[Spectrum], k: usize) -> Result<BasisModel> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Argument("fit_basis: empty corpus".into()))?;
    let grid = *first.grid();
    let n = grid.band_count;
    if corpus.len() <= k {
        return Err(Error::Argument(format!(
            "fit_basis: corpus of {} spectra is too small for {k} components",
            corpus.len()
        )));
    }
    if k > n {
        return Err(Error::Argument(format!("fit_basis: {k} components exceed {n} bands")));
    }
    for s in corpus {
        grid.check_same(s.grid(), "fit_basis")?;
    }
    let count = corpus.len() as f64;
    let mut mean = vec![0.0; n];
    for s in corpus {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let centered = DMatrix::from_fn(corpus.len(), n, |i, j| corpus[i].values()[j] - mean[j]);
    let cov = centered.transpose() * &centered / count;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(n, k);
    let mut variances = Vec::with_capacity(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let peak = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if peak < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(BasisModel {
        grid,
        mean,
        basis,
        variances: Some(variances),
    })
}

impl BasisModel {
    pub fn new(grid: WavelengthGrid, mean: Vec<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if mean.len() != grid.band_count || basis.nrows() != grid.band_count {
            return Err(Error::Dimension(format!(
                "basis model: mean has {} bands, basis has {} rows, grid has {}",
                mean.len(),
                basis.nrows(),
                grid.band_count
            )));
        }
        if mean.iter().chain(basis.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("basis model has non-finite entries".into()));
        }
        let gram = basis.transpose() * &basis;
        let k = basis.ncols();
        if (gram - DMatrix::<f64>::identity(k, k)).amax() > 1e-9 {
            return Err(Error::Argument("basis columns are not orthonormal".into()));
        }
        Ok(Self {
            grid,
            mean,
            basis,
            variances: None,
        })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Captured variance per component, non-increasing; `None` unless
    /// the model came from [`fit_basis`].
    pub fn variances(&self) -> Option<&[f64]> {
        self.variances.as_deref()
    }

    /// `[mean | B]`, `N_λ × (K+1)`.
    pub fn augmented(&self) -> DMatrix<f64> {
        let n = self.grid.band_count;
        DMatrix::from_fn(n, self.k() + 1, |i, j| if j == 0 { self.mean[i] } else { self.basis[(i, j - 1)] })
    }

    /// Coefficients of the orthogonal projection of `r − mean`.
    pub fn project(&self, reflectance: &Spectrum) -> Result<DVector<f64>> {
        self.grid.check_same(reflectance.grid(), "BasisModel::project")?;
        let centered = DVector::from_iterator(
            self.mean.len(),
            reflectance.values().iter().zip(&self.mean).map(|(r, m)| r - m),
        );
        Ok(self.basis.transpose() * centered)
    }

    /// `mean + B·γ`, unclipped.
    pub fn synthesize(&self, coefficients: &DVector<f64>) -> Result<Vec<f64>> {
        if coefficients.len() != self.k() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                self.k(),
                coefficients.len()
            )));
        }
        let v = &self.basis * coefficients;
        Ok(self.mean.iter().zip(v.iter()).map(|(m, x)| m + x).collect())
    }

    /// RMS difference between `r` and its projection onto the affine span.
    pub fn residual(&self, reflectance: &Spectrum) -> Result<f64> {
        let approx = self.synthesize(&self.project(reflectance)?)?;
        let n = approx.len() as f64;
        Ok((approx
            .iter()
            .zip(reflectance.values())
            .map(|(a, r)| (a - r) * (a - r))
            .sum::<f64>()
            / n)
            .sqrt())
    }

    /// CSV with header `component,<wavelengths>`, a `mean` row and rows
    /// `b1`..`bK`.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["component".to_string()];
        header.extend(self.grid.wavelengths().map(|l| format!("{l}")));
        w.write_record(&header)?;
        let mut row = vec!["mean".to_string()];
        row.extend(self.mean.iter().map(|x| format!("{x:e}")));
        w.write_record(&row)?;
        for j in 0..self.k() {
            let mut row = vec![format!("b{}", j + 1)];
            row.extend(self.basis.column(j).iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("basis csv", e))?;
        Ok(())
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let bad = |msg: String| Error::format("basis csv", msg);
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("component") || header.len() < 4 {
            return Err(bad("header must be `component,<wavelength_nm>...` with at least 3 bands".into()));
        }
        let wl: Vec<f64> = header
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("wavelength {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        let step = wl[1] - wl[0];
        let grid = WavelengthGrid::new(wl[0], step, wl.len())?;
        if wl.iter().enumerate().any(|(i, &l)| (l - grid.wavelength(i)).abs() > 1e-9 * step) {
            return Err(bad("wavelengths are not uniformly spaced".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let name = rec.get(0).unwrap_or_default().to_string();
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("{name}: {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != wl.len() {
                return Err(bad(format!("{name}: {} values for {} bands", vals.len(), wl.len())));
            }
            rows.push((name, vals));
        }
        let (first, rest) = rows.split_first().ok_or_else(|| bad("missing mean row".into()))?;
        if first.0 != "mean" {
            return Err(bad(format!("first row must be `mean`, got {:?}", first.0)));
        }
        for (j, (name, _)) in rest.iter().enumerate() {
            if *name != format!("b{}", j + 1) {
                return Err(bad(format!("row {} must be `b{}`, got {name:?}", j + 2, j + 1)));
            }
        }
        let basis = DMatrix::from_fn(wl.len(), rest.len(), |i, j| rest[j].1[i]);
        Self::new(grid, first.1.clone(), basis)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f).map_err(|e| match e {
            Error::Format { msg, .. } => Error::format(path, msg),
            other => other,
        })
    }
}

/// Condition number of `[M·B ; √w·S·B]`, the regularized system in
/// coefficient space.
pub fn condition_number_reduced(system: &SystemMatrix, basis: &BasisModel, smoothness_weight: f64) -> Result<f64> {
    system.grid.check_same(&basis.grid, "condition_number_reduced")?;
    if basis.k() == 0 {
        return Err(Error::Argument("condition_number_reduced: basis has no components".into()));
    }
    if !(smoothness_weight >= 0.0 && smoothness_weight.is_finite()) {
        return Err(Error::Argument(format!("smoothness weight must be >= 0, got {smoothness_weight}")));
    }
    let mb = &system.matrix * &basis.basis;
    let sb = smoothness_operator(system.grid.band_count) * &basis.basis * smoothness_weight.sqrt();
    let mut stacked = DMatrix::zeros(mb.nrows() + sb.nrows(), basis.k());
    stacked.rows_mut(0, mb.nrows()).copy_from(&mb);
    stacked.rows_mut(mb.nrows(), sb.nrows()).copy_from(&sb);
    condition_number(&stacked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadingMode {
    /// Intensities are divided by a known shading factor before solving.
    #[default]
    Known,
    /// The mean coefficient is read back as the shading scale.
    Unknown,
}

/// Per-label mean RGB of one window; `None` where the label is absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowObservation {
    pub rgb: [Option<[f64; 3]>; 3],
}

impl WindowObservation {
    /// All nine measurements, ordered like the system matrix rows.
    pub fn full(nine: [f64; 9]) -> Self {
        let mut rgb = [None; 3];
        for (i, slot) in rgb.iter_mut().enumerate() {
            *slot = Some([nine[3 * i], nine[3 * i + 1], nine[3 * i + 2]]);
        }
        Self { rgb }
    }

    /// Averages the RGB of each label over the given pixels.
    pub fn from_pixels(pixels: impl IntoIterator<Item = (DotLabel, [f64; 3])>) -> Self {
        let mut sums = [[0.0; 3]; 3];
        let mut counts = [0usize; 3];
        for (label, rgb) in pixels {
            let i = label.index();
            counts[i] += 1;
            for n in 0..3 {
                sums[i][n] += rgb[n];
            }
        }
        let mut rgb = [None; 3];
        for i in 0..3 {
            if counts[i] > 0 {
                let k = counts[i] as f64;
                rgb[i] = Some([sums[i][0] / k, sums[i][1] / k, sums[i][2] / k]);
            }
        }
        Self { rgb }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rgb: self.rgb.map(|o| o.map(|c| c.map(|x| x * alpha))),
        }
    }

    fn subset(&self) -> usize {
        (0..3).filter(|&i| self.rgb[i].is_some()).fold(0, |m, i| m | (1 << i))
    }

    fn stacked(&self) -> Vec<f64> {
        self.rgb.iter().flatten().flat_map(|c| c.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    /// `β` over `[mean | B]` before any shading normalization.
    pub coefficients: DVector<f64>,
    /// Clipped to `[0, 1]`.
    pub reflectance: Spectrum,
    /// 1 with known shading, `β₀` otherwise.
    pub shading: f64,
    /// The available equations did not determine all coefficients.
    pub low_confidence: bool,
}

/// How the smoothness prior enters windows whose equations determine
/// every coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// Equations are hard constraints; smoothness only selects among exact
    /// fits, so noiseless in-span data round-trips exactly.
    #[default]
    Constrained,
    /// Least squares on `[A; √w·S·[mean|B]]`, trading fit for smoothness.
    Penalized,
}

/// Widest neighbourhood radius searched for labels missing from the 3×3
/// window in [`reconstruct_image`].
pub const DEFAULT_MAX_WINDOW_RADIUS: usize = 2;

fn default_max_window_radius() -> usize {
    DEFAULT_MAX_WINDOW_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReconParams {
    pub smoothness_weight: f64,
    #[serde(default)]
    pub shading: ShadingMode,
    #[serde(default)]
    pub regularization: Regularization,
    /// 1 keeps every window at 3×3.
    #[serde(default = "default_max_window_radius")]
    pub max_window_radius: usize,
}

impl Default for ReconParams {
    fn default() -> Self {
        Self {
            smoothness_weight: DEFAULT_SMOOTHNESS_WEIGHT,
            shading: ShadingMode::Known,
            regularization: Regularization::Constrained,
            max_window_radius: DEFAULT_MAX_WINDOW_RADIUS,
        }
    }
}

#[derive(Debug, Clone)]
struct SubsetSolver {
    /// `(K+1) × rows`, maps the stacked measurements to `β`.
    map: DMatrix<f64>,
    full_rank: bool,
}

/// Left inverse of a full-column-rank matrix: LU when square, QR
/// least squares when tall. Both keep the accuracy of the factorization
/// at the matrix's own condition number.
fn full_rank_map(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let singular = || Error::DegenerateGeometry("singular window system".into());
    if a.is_square() {
        return a.clone().lu().try_inverse().ok_or_else(singular);
    }
    let qr = a.clone().qr();
    qr.r().solve_upper_triangular(&qr.q().transpose()).ok_or_else(singular)
}

/// Minimizer of `βᵀQβ` subject to `Aβ = y` for `A` with independent rows
/// and fewer rows than columns, as a linear map of `y`.
///
/// With `Aᵀ = [Q₁ Q₂]·R`, the minimum-norm solution is `Q₁R₁⁻ᵀy` and the
/// null space of `A` is spanned by `Q₂`; the correction inside the null
/// space minimizes the objective.
fn constrained_map(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, unknowns) = a.shape();
    let degenerate = |what: &str| Error::DegenerateGeometry(format!("underdetermined window: {what}"));
    let mut at = DMatrix::zeros(unknowns, unknowns);
    at.columns_mut(0, m).copy_from(&a.transpose());
    let qr = at.qr();
    let full_q = qr.q();
    let r11 = qr.r().view((0, 0), (m, m)).into_owned();
    let q1 = full_q.columns(0, m).into_owned();
    let n = full_q.columns(m, unknowns - m).into_owned();
    // y ↦ Q₁·R₁₁⁻ᵀ·y
    let r11_inv_t = r11
        .transpose()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or_else(|| degenerate("dependent equations"))?;
    let particular = q1 * r11_inv_t;
    let reduced = n.transpose() * q * &n;
    let inv = reduced
        .cholesky()
        .ok_or_else(|| degenerate("objective is not positive definite on the null space"))?
        .inverse();
    let proj = DMatrix::<f64>::identity(unknowns, unknowns) - &n * inv * n.transpose() * q;
    Ok(proj * particular)
}

/// Precomputed linear solvers for every nonempty set of present labels.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    system: SystemMatrix,
    basis: BasisModel,
    params: ReconParams,
    augmented: DMatrix<f64>,
    solvers: Vec<Option<SubsetSolver>>,
}

impl Reconstructor {
    pub fn new(system: SystemMatrix, basis: BasisModel, params: ReconParams) -> Result<Self> {
        system.grid.check_same(&basis.grid, "Reconstructor")?;
        let w = params.smoothness_weight;
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Argument(format!("smoothness weight must be >= 0, got {w}")));
        }
        let augmented = basis.augmented();
        let unknowns = augmented.ncols();
        let reg = smoothness_operator(system.grid.band_count) * &augmented;
        // objective for the underdetermined directions; the ridge keeps
        // it positive definite
        let q = reg.transpose() * &reg * w + DMatrix::<f64>::identity(unknowns, unknowns) * PARTIAL_RIDGE;
        let mut solvers = vec![None; 8];
        for (subset, slot) in solvers.iter_mut().enumerate().skip(1) {
            let rows: Vec<usize> = (0..9).filter(|r| subset & (1 << (r / 3)) != 0).collect();
            let a = system.matrix.select_rows(&rows) * &augmented;
            let full_rank = matrix_rank(&a) == unknowns;
            let map = if !full_rank {
                if matrix_rank(&a) < a.nrows() {
                    return Err(Error::DegenerateGeometry(format!(
                        "system matrix rows for label set {subset:#05b} are linearly dependent"
                    )));
                }
                constrained_map(&a, &q)?
            } else if params.regularization == Regularization::Penalized {
                let m = a.nrows();
                let mut stacked = DMatrix::zeros(m + reg.nrows(), unknowns);
                stacked.rows_mut(0, m).copy_from(&a);
                stacked.rows_mut(m, reg.nrows()).copy_from(&(&reg * w.sqrt()));
                full_rank_map(&stacked)?.columns(0, m).into_owned()
            } else {
                full_rank_map(&a)?
            };
            *slot = Some(SubsetSolver { map, full_rank });
        }
        Ok(Self {
            system,
            basis,
            params,
            augmented,
            solvers,
        })
    }

    pub fn system(&self) -> &SystemMatrix {
        &self.system
    }

    pub fn basis(&self) -> &BasisModel {
        &self.basis
    }

    pub fn params(&self) -> &ReconParams {
        &self.params
    }

    /// Solves one window. Returns `None` when no label is present.
    ///
    /// With [`ShadingMode::Known`] the observation must already be divided
    /// by the shading factor.
    pub fn solve(&self, obs: &WindowObservation) -> Result<Option<WindowSolution>> {
        let Some(solver) = self.solvers[obs.subset()].as_ref() else {
            return Ok(None);
        };
        let y = DVector::from_vec(obs.stacked());
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("window intensities are not finite".into()));
        }
        let beta = &solver.map * y;
        let mut low_confidence = !solver.full_rank;
        let (scale, shading) = match self.params.shading {
            ShadingMode::Known => (1.0, 1.0),
            ShadingMode::Unknown => {
                let b0 = beta[0];
                if b0 > 1e-12 {
                    (1.0 / b0, b0)
                } else {
                    low_confidence |= beta.iter().any(|&b| b != 0.0);
                    (0.0, 0.0)
                }
            }
        };
        let r = &self.augmented * &beta * scale;
        let values = r.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        Ok(Some(WindowSolution {
            coefficients: beta,
            reflectance: Spectrum::reflectance(self.system.grid, values)?,
            shading,
            low_confidence,
        }))
    }
}

/// Standalone single-window solve; see [`Reconstructor::solve`].
pub fn reconstruct_window(
    obs: &WindowObservation,
    system: &SystemMatrix,
    basis: &BasisModel,
    params: &ReconParams,
) -> Result<Option<WindowSolution>> {
    Reconstructor::new(system.clone(), basis.clone(), *params)?.solve(obs)
}

/// Shading factors recomputed from a disparity map: points unprojected
/// through the camera, normals from finite differences of neighbouring
/// points (central where both neighbours are valid, else one-sided).
/// NaN where the disparity or the normal is unavailable.
pub fn shading_from_disparity(disparity: &ImagePlane, rig: &RectifiedRig) -> Result<ImagePlane> {
    if disparity.channels() != 1 {
        return Err(Error::Dimension(format!(
            "disparity must have 1 channel, got {}",
            disparity.channels()
        )));
    }
    let (w, h) = (disparity.width(), disparity.height());
    let point = |u: isize, v: isize| -> Option<Vector3<f64>> {
        if u < 0 || v < 0 || u >= w as isize || v >= h as isize {
            return None;
        }
        let d = disparity.get(u as usize, v as usize, 0);
        (d.is_finite() && d > 0.0).then(|| rig.unproject(u as f64, v as f64, rig.bf() / d))
    };
    let diff = |a: Option<Vector3<f64>>, c: Vector3<f64>, b: Option<Vector3<f64>>| match (a, b) {
        (Some(a), Some(b)) => Some(b - a),
        (None, Some(b)) => Some(b - c),
        (Some(a), None) => Some(c - a),
        (None, None) => None,
    };
    let projector = rig.projector_center();
    let mut out = ImagePlane::filled(w, h, 1, f64::NAN);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        let v = v as isize;
        for u in 0..w as isize {
            let Some(x) = point(u, v) else { continue };
            let du = diff(point(u - 1, v), x, point(u + 1, v));
            let dv = diff(point(u, v - 1), x, point(u, v + 1));
            let (Some(du), Some(dv)) = (du, dv) else { continue };
            let n = du.cross(&dv);
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            let mut n = n / len;
            if n.dot(&x) > 0.0 {
                n = -n;
            }
            if let Ok(s) = shading_factor(&x, &projector, &n) {
                row[u as usize] = s;
            }
        }
    });
    Ok(out)
}

/// Camera image plus the geometry needed to label its pixels.
#[derive(Debug, Clone, Copy)]
pub struct ReconInput<'a> {
    pub image: &'a ImagePlane,
    /// Ground-truth or estimated disparity, used to look up each pixel's
    /// projector label at `round(u − D)`.
    pub disparity: &'a ImagePlane,
    pub mask: &'a Mask,
    pub pattern: &'a DotPattern,
    pub rig: &'a RectifiedRig,
    /// Known shading per pixel; recomputed from `disparity` when absent.
    pub shading: Option<&'a ImagePlane>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    /// `N_λ` channels; zero where invalid (see `valid`).
    pub reflectance: ImagePlane,
    pub valid: Mask,
    pub low_confidence: Mask,
}

fn projector_label(input: &ReconInput<'_>, u: usize, v: usize) -> Option<DotLabel> {
    let d = input.disparity.get(u, v, 0);
    if !d.is_finite() {
        return None;
    }
    let x = (u as f64 - d).round();
    (x >= 0.0 && x < input.pattern.width() as f64).then(|| input.pattern.label(x as usize, v))
}

/// Sliding 3×3 reconstruction over the mask. Each window pools the
/// masked, labelled neighbours of a masked pixel; a label missing from
/// the 3×3 window is taken from the nearest ring that has it, up to
/// `max_window_radius`.
pub fn reconstruct_image(input: &ReconInput<'_>, recon: &Reconstructor) -> Result<ReconOutput> {
    let (w, h) = (input.image.width(), input.image.height());
    if input.image.channels() != 3 {
        return Err(Error::Dimension(format!(
            "reconstruct_image needs a 3-channel image, got {}",
            input.image.channels()
        )));
    }
    input.image.check_same_dims(input.disparity, "reconstruct_image disparity")?;
    input.mask.check_dims(w, h, "reconstruct_image mask")?;
    if input.pattern.width() != w || input.pattern.height() != h {
        return Err(Error::Dimension(format!(
            "pattern is {}x{}, image is {w}x{h}",
            input.pattern.width(),
            input.pattern.height()
        )));
    }
    let computed;
    let shading = match (recon.params.shading, input.shading) {
        (ShadingMode::Unknown, _) => None,
        (ShadingMode::Known, Some(s)) => {
            input.image.check_same_dims(s, "reconstruct_image shading")?;
            Some(s)
        }
        (ShadingMode::Known, None) => {
            computed = shading_from_disparity(input.disparity, input.rig)?;
            Some(&computed)
        }
    };
    let bands = recon.system.grid.band_count;

    let rows: Vec<Result<Vec<Option<(Vec<f64>, bool)>>>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| {
                    if !input.mask.get(u, v) {
                        return Ok(None);
                    }
                    // 3×3 first; wider rings only contribute labels the
                    // inner window lacks
                    let mut pixels = Vec::with_capacity(9);
                    let mut present = [false; 3];
                    let max_r = recon.params.max_window_radius.max(1);
                    for radius in 1..=max_r {
                        if radius > 1 && present.iter().all(|&p| p) {
                            break;
                        }
                        let inner = present;
                        for qv in v.saturating_sub(radius)..=(v + radius).min(h - 1) {
                            for qu in u.saturating_sub(radius)..=(u + radius).min(w - 1) {
                                if radius > 1 && qu.abs_diff(u) < radius && qv.abs_diff(v) < radius {
                                    continue;
                                }
                                if !input.mask.get(qu, qv) {
                                    continue;
                                }
                                let Some(label) = projector_label(input, qu, qv) else { continue };
                                if radius > 1 && inner[label.index()] {
                                    continue;
                                }
                                let scale = match shading {
                                    Some(s) => {
                                        let s = s.get(qu, qv, 0);
                                        if !(s > 0.0) {
                                            continue;
                                        }
                                        1.0 / s
                                    }
                                    None => 1.0,
                                };
                                let p = input.image.pixel(qu, qv);
                                pixels.push((label, [p[0] * scale, p[1] * scale, p[2] * scale]));
                                present[label.index()] = true;
                            }
                        }
                    }
                    let obs = WindowObservation::from_pixels(pixels);
                    Ok(recon
                        .solve(&obs)?
                        .map(|sol| (sol.reflectance.into_values(), sol.low_confidence)))
                })
                .collect()
        })
        .collect();

    let mut reflectance = ImagePlane::filled(w, h, bands, 0.0);
    let mut valid = Mask::filled(w, h, false);
    let mut low_confidence = Mask::filled(w, h, false);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, px) in row?.into_iter().enumerate() {
            if let Some((values, low)) = px {
                reflectance.pixel_mut(u, v).copy_from_slice(&values);
                valid.set(u, v, true);
                low_confidence.set(u, v, low);
            }
        }
    }
    Ok(ReconOutput {
        reflectance,
        valid,
        low_confidence,
    })
}
