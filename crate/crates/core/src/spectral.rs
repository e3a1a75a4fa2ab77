//! Wavelength discretization, spectral curves and the per-pixel rendering
//! model `I = s · cᵀ · Diag(l) · r`.
//!
//! The continuous integral over wavelength is evaluated by the rectangle
//! rule with unit band width: the 10 nm band width is folded into the
//! magnitude of the illumination spectra rather than multiplied in. All
//! spectral arithmetic is `f64`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly spaced wavelength samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub step_nm: f64,
    pub band_count: usize,
}

impl Default for WavelengthGrid {
    /// 410–670 nm every 10 nm (27 bands).
    fn default() -> Self {
        Self {
            start_nm: 410.0,
            step_nm: 10.0,
            band_count: 27,
        }
    }
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, band_count: usize) -> Result<Self> {
        if band_count == 0 {
            return Err(Error::Argument("band_count must be at least 1".into()));
        }
        if !(start_nm.is_finite() && step_nm.is_finite() && step_nm > 0.0) {
            return Err(Error::Argument(format!(
                "invalid grid start={start_nm} step={step_nm}"
            )));
        }
        Ok(Self {
            start_nm,
            step_nm,
            band_count,
        })
    }

    pub fn wavelength(&self, band: usize) -> f64 {
        self.start_nm + band as f64 * self.step_nm
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.band_count - 1)
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.band_count).map(|i| self.wavelength(i))
    }

    pub(crate) fn check_same(&self, other: &WavelengthGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!(
                "{what}: grid {}..{}/{} vs {}..{}/{}",
                self.start_nm,
                self.end_nm(),
                self.band_count,
                other.start_nm,
                other.end_nm(),
                other.band_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    /// Unitless, per band in `[0, 1]`.
    Reflectance,
    /// Radiometric power, per band `>= 0`.
    Illumination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: WavelengthGrid,
    kind: SpectrumKind,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, kind: SpectrumKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.band_count {
            return Err(Error::Dimension(format!(
                "spectrum has {} values for a {}-band grid",
                values.len(),
                grid.band_count
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            let ok = match kind {
                SpectrumKind::Reflectance => (0.0..=1.0).contains(&v),
                SpectrumKind::Illumination => v.is_finite() && v >= 0.0,
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "{kind:?} value {v} out of range at band {i}"
                )));
            }
        }
        Ok(Self { grid, kind, values })
    }

    pub fn reflectance(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, SpectrumKind::Reflectance, values)
    }

    pub fn illumination(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, SpectrumKind::Illumination, values)
    }

    pub fn constant(grid: WavelengthGrid, kind: SpectrumKind, value: f64) -> Result<Self> {
        Self::new(grid, kind, vec![value; grid.band_count])
    }

    /// `peak · exp(-(λ-center)² / 2σ²)` sampled on the grid.
    pub fn gaussian(
        grid: WavelengthGrid,
        kind: SpectrumKind,
        center_nm: f64,
        sigma_nm: f64,
        peak: f64,
    ) -> Result<Self> {
        Self::new(grid, kind, gaussian_values(&grid, center_nm, sigma_nm, peak))
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multiplies every band by `factor`, re-validating the range.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid,
            self.kind,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Reads a `wavelength_nm,value` CSV and resamples it onto `grid`.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        grid: WavelengthGrid,
        kind: SpectrumKind,
    ) -> Result<Self> {
        let (wl, cols) = read_columns(reader, &["value"])?;
        Self::new(grid, kind, resample_linear(&wl, &cols[0], &grid)?)
    }

    pub fn from_csv_path(path: &Path, grid: WavelengthGrid, kind: SpectrumKind) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, grid, kind)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["wavelength_nm", "value"])?;
        for (wl, v) in self.grid.wavelengths().zip(&self.values) {
            w.write_record([wl.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn gaussian_values(grid: &WavelengthGrid, center_nm: f64, sigma_nm: f64, peak: f64) -> Vec<f64> {
    grid.wavelengths()
        .map(|wl| {
            let d = (wl - center_nm) / sigma_nm;
            peak * (-0.5 * d * d).exp()
        })
        .collect()
}

/// Reads a CSV with a `wavelength_nm` column followed by exactly `names`.
fn read_columns<R: Read>(reader: R, names: &[&str]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (got, wl, cols) = read_table(reader)?;
    if got != names {
        return Err(Error::format(
            "<csv>",
            format!("expected columns wavelength_nm,{}, found wavelength_nm,{}", names.join(","), got.join(",")),
        ));
    }
    Ok((wl, cols))
}

/// Parses `wavelength_nm,<col>,...`; rows strictly ascending in wavelength.
/// Returns the value-column names, the wavelengths and the columns.
fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("wavelength_nm") || headers.len() < 2 {
        return Err(Error::format(
            "<csv>",
            format!("expected header wavelength_nm,..., found {:?}", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut wl = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::format("<csv>", format!("row {}: bad number in column {i}", row + 1)))
        };
        let w = parse(0)?;
        if let Some(&prev) = wl.last() {
            if w <= prev {
                return Err(Error::format(
                    "<csv>",
                    format!("row {}: wavelength {w} not strictly ascending", row + 1),
                ));
            }
        }
        wl.push(w);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(parse(k + 1)?);
        }
    }
    if wl.len() < 2 {
        return Err(Error::format("<csv>", "need at least two rows"));
    }
    Ok((names, wl, cols))
}

/// Reads a wide CSV `wavelength_nm,<name>,<name>,...` holding one spectrum
/// per column, each resampled onto `grid`.
pub fn read_spectra_csv<R: Read>(
    reader: R,
    grid: WavelengthGrid,
    kind: SpectrumKind,
) -> Result<Vec<(String, Spectrum)>> {
    let (names, wl, cols) = read_table(reader)?;
    names
        .into_iter()
        .zip(cols)
        .map(|(name, col)| {
            let spectrum = Spectrum::new(grid, kind, resample_linear(&wl, &col, &grid)?)?;
            Ok((name, spectrum))
        })
        .collect()
}

/// Linear interpolation of `(wl, vals)` at the grid wavelengths. The table
/// must cover the whole grid; no extrapolation.
pub(crate) fn resample_linear(wl: &[f64], vals: &[f64], grid: &WavelengthGrid) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-9;
    let lo = wl[0];
    let hi = wl[wl.len() - 1];
    grid.wavelengths()
        .map(|x| {
            if x < lo - TOL || x > hi + TOL {
                return Err(Error::Domain(format!(
                    "table range {lo}..{hi} nm does not cover {x} nm"
                )));
            }
            let j = wl.partition_point(|&w| w <= x);
            if j == 0 {
                return Ok(vals[0]);
            }
            if j >= wl.len() {
                return Ok(vals[wl.len() - 1]);
            }
            let (x0, x1) = (wl[j - 1], wl[j]);
            let t = (x - x0) / (x1 - x0);
            Ok(vals[j - 1] + t * (vals[j] - vals[j - 1]))
        })
        .collect()
}

/// RGB camera spectral sensitivity, channels ordered R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSensitivity {
    grid: WavelengthGrid,
    channels: [Vec<f64>; 3],
}

impl CameraSensitivity {
    pub fn new(grid: WavelengthGrid, channels: [Vec<f64>; 3]) -> Result<Self> {
        for (n, ch) in channels.iter().enumerate() {
            if ch.len() != grid.band_count {
                return Err(Error::Dimension(format!(
                    "sensitivity channel {n} has {} values for a {}-band grid",
                    ch.len(),
                    grid.band_count
                )));
            }
            if ch.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain(format!("sensitivity channel {n} has a negative entry")));
            }
            if ch.iter().all(|v| *v == 0.0) {
                return Err(Error::Domain(format!("sensitivity channel {n} is all zero")));
            }
        }
        Ok(Self { grid, channels })
    }

    /// Three overlapping Gaussian channels centred at 610/540/460 nm
    /// (R/G/B) with 35 nm standard deviation and unit peak.
    pub fn default_for(grid: WavelengthGrid) -> Result<Self> {
        Self::new(
            grid,
            [
                gaussian_values(&grid, 610.0, 35.0, 1.0),
                gaussian_values(&grid, 540.0, 35.0, 1.0),
                gaussian_values(&grid, 460.0, 35.0, 1.0),
            ],
        )
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn channel(&self, n: usize) -> &[f64] {
        &self.channels[n]
    }

    pub fn channels(&self) -> &[Vec<f64>; 3] {
        &self.channels
    }

    /// Reads a `wavelength_nm,r,g,b` CSV and resamples it onto `grid`.
    pub fn from_csv_reader<R: Read>(reader: R, grid: WavelengthGrid) -> Result<Self> {
        let (wl, cols) = read_columns(reader, &["r", "g", "b"])?;
        Self::new(
            grid,
            [
                resample_linear(&wl, &cols[0], &grid)?,
                resample_linear(&wl, &cols[1], &grid)?,
                resample_linear(&wl, &cols[2], &grid)?,
            ],
        )
    }

    pub fn from_csv_path(path: &Path, grid: WavelengthGrid) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, grid)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["wavelength_nm", "r", "g", "b"])?;
        for (i, wl) in self.grid.wavelengths().enumerate() {
            w.write_record([
                wl.to_string(),
                self.channels[0][i].to_string(),
                self.channels[1][i].to_string(),
                self.channels[2][i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Spectral power distributions of the projector's three primaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorPrimaries {
    grid: WavelengthGrid,
    primaries: [Spectrum; 3],
}

impl ProjectorPrimaries {
    pub fn new(r: Spectrum, g: Spectrum, b: Spectrum) -> Result<Self> {
        let grid = *r.grid();
        for (name, s) in [("r", &r), ("g", &g), ("b", &b)] {
            grid.check_same(s.grid(), "projector primaries")?;
            if s.kind() != SpectrumKind::Illumination {
                return Err(Error::Domain(format!("{name} primary must be an illumination spectrum")));
            }
            if s.values().iter().all(|v| *v == 0.0) {
                return Err(Error::Domain(format!("{name} primary is all zero")));
            }
        }
        Ok(Self {
            grid,
            primaries: [r, g, b],
        })
    }

    /// Gaussian SPDs centred at 615/545/460 nm with 25 nm standard
    /// deviation and unit peak.
    pub fn default_for(grid: WavelengthGrid) -> Result<Self> {
        let ill = SpectrumKind::Illumination;
        Self::new(
            Spectrum::gaussian(grid, ill, 615.0, 25.0, 1.0)?,
            Spectrum::gaussian(grid, ill, 545.0, 25.0, 1.0)?,
            Spectrum::gaussian(grid, ill, 460.0, 25.0, 1.0)?,
        )
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    /// Primary by index: 0 = R, 1 = G, 2 = B.
    pub fn get(&self, index: usize) -> &Spectrum {
        &self.primaries[index]
    }

    pub fn r(&self) -> &Spectrum {
        &self.primaries[0]
    }

    pub fn g(&self) -> &Spectrum {
        &self.primaries[1]
    }

    pub fn b(&self) -> &Spectrum {
        &self.primaries[2]
    }
}

/// Camera response `s · cᵀ · Diag(l) · r` for one surface point.
///
/// Evaluated as `Σ_λ (c_n(λ)·l(λ))·r(λ)` per channel; the same product
/// order is used by the system matrix so the two agree to rounding.
pub fn render_pixel(
    shading: f64,
    sensitivity: &CameraSensitivity,
    illumination: &Spectrum,
    reflectance: &Spectrum,
) -> Result<[f64; 3]> {
    sensitivity.grid().check_same(illumination.grid(), "render_pixel illumination")?;
    sensitivity.grid().check_same(reflectance.grid(), "render_pixel reflectance")?;
    if !(shading >= 0.0) {
        return Err(Error::Domain(format!("shading must be >= 0, got {shading}")));
    }
    let l = illumination.values();
    let r = reflectance.values();
    let mut out = [0.0; 3];
    for (n, o) in out.iter_mut().enumerate() {
        let c = sensitivity.channel(n);
        let sum: f64 = (0..l.len()).map(|k| (c[k] * l[k]) * r[k]).sum();
        *o = shading * sum;
    }
    Ok(out)
}

/// Inverse-square falloff times the Lambertian cosine between the unit
/// lighting direction and the surface normal. Back-facing points get 0.
pub fn shading_factor(
    point: &Vector3<f64>,
    projector: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Result<f64> {
    let to_light = projector - point;
    let dist2 = to_light.norm_squared();
    if !(dist2 > 0.0) {
        return Err(Error::DegenerateGeometry(
            "surface point coincides with the projector center".into(),
        ));
    }
    if (normal.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("normal is not unit length: {}", normal.norm())));
    }
    let dist = dist2.sqrt();
    let cosine = to_light.dot(normal) / dist;
    Ok((cosine / dist2).max(0.0))
}
