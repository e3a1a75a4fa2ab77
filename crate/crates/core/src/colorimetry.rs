//! Spectral reflectance to sRGB under D65 for visualization.

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::spectral::{resample_linear, WavelengthGrid};

/// 380–780 nm at 10 nm: wavelength, CIE 1931 2° x̄, ȳ, z̄, and the D65
/// relative spectral power distribution.
#[rustfmt::skip]
const TABLE: [[f64; 5]; 41] = [
    [380.0, 0.001368, 3.9e-05, 0.006450001, 49.9755],
    [390.0, 0.004243, 0.00012, 0.02005001, 54.6482],
    [400.0, 0.01431, 0.000396, 0.06785001, 82.7549],
    [410.0, 0.04351, 0.00121, 0.2074, 91.486],
    [420.0, 0.13438, 0.004, 0.6456, 93.4318],
    [430.0, 0.2839, 0.0116, 1.3856, 86.6823],
    [440.0, 0.34828, 0.023, 1.74706, 104.865],
    [450.0, 0.3362, 0.038, 1.77211, 117.008],
    [460.0, 0.2908, 0.06, 1.6692, 117.812],
    [470.0, 0.19536, 0.09098, 1.28764, 114.861],
    [480.0, 0.09564, 0.13902, 0.8129501, 115.923],
    [490.0, 0.03201, 0.20802, 0.46518, 108.811],
    [500.0, 0.0049, 0.323, 0.272, 109.354],
    [510.0, 0.0093, 0.503, 0.1582, 107.802],
    [520.0, 0.06327, 0.71, 0.07824999, 104.79],
    [530.0, 0.1655, 0.862, 0.04216, 107.689],
    [540.0, 0.2904, 0.954, 0.0203, 104.405],
    [550.0, 0.4334499, 0.9949501, 0.008749999, 104.046],
    [560.0, 0.5945, 0.995, 0.0039, 100.0],
    [570.0, 0.7621, 0.952, 0.0021, 96.3342],
    [580.0, 0.9163, 0.87, 0.001650001, 95.788],
    [590.0, 1.0263, 0.757, 0.0011, 88.6856],
    [600.0, 1.0622, 0.631, 0.0008, 90.0062],
    [610.0, 1.0026, 0.503, 0.00034, 89.5991],
    [620.0, 0.8544499, 0.381, 0.00019, 87.6987],
    [630.0, 0.6424, 0.265, 4.999999e-05, 83.2886],
    [640.0, 0.4479, 0.175, 2e-05, 83.6992],
    [650.0, 0.2835, 0.107, 0.0, 80.0268],
    [660.0, 0.1649, 0.061, 0.0, 80.2146],
    [670.0, 0.0874, 0.032, 0.0, 82.2778],
    [680.0, 0.04677, 0.017, 0.0, 78.2842],
    [690.0, 0.0227, 0.00821, 0.0, 69.7213],
    [700.0, 0.01135916, 0.004102, 0.0, 71.6091],
    [710.0, 0.005790346, 0.002091, 0.0, 74.349],
    [720.0, 0.002899327, 0.001047, 0.0, 61.604],
    [730.0, 0.001439971, 0.00052, 0.0, 69.8856],
    [740.0, 0.0006900786, 0.0002492, 0.0, 75.087],
    [750.0, 0.0003323011, 0.00012, 0.0, 63.5927],
    [760.0, 0.0001661505, 6e-05, 0.0, 46.4182],
    [770.0, 8.307527e-05, 3e-05, 0.0, 66.8054],
    [780.0, 4.150994e-05, 1.499e-05, 0.0, 63.3828],
];

/// D65 white in XYZ with Y = 1.
pub const D65_WHITE_XYZ: [f64; 3] = [0.95047, 1.0, 1.08883];

#[rustfmt::skip]
pub const XYZ_TO_LINEAR_SRGB: [[f64; 3]; 3] = [
    [ 3.2406, -1.5372, -0.4986],
    [-0.9689,  1.8758,  0.0415],
    [ 0.0557, -0.2040,  1.0570],
];

/// Weights mapping a reflectance on `grid` to XYZ.
///
/// Each weight is `cmf(λ)·D65(λ)`, rescaled per coordinate so a flat unit
/// reflectance lands exactly on [`D65_WHITE_XYZ`]; this compensates for
/// the grid covering only part of the visible range.
#[derive(Debug, Clone, PartialEq)]
pub struct SrgbConverter {
    grid: WavelengthGrid,
    weights: [Vec<f64>; 3],
}

impl SrgbConverter {
    pub fn new(grid: WavelengthGrid) -> Result<Self> {
        let wl: Vec<f64> = TABLE.iter().map(|r| r[0]).collect();
        let column = |i: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = TABLE.iter().map(|r| r[i]).collect();
            resample_linear(&wl, &vals, &grid).map_err(|_| {
                Error::Domain(format!(
                    "no observer data for {}..{} nm (tables cover 380..780 nm)",
                    grid.start_nm,
                    grid.end_nm()
                ))
            })
        };
        let d65 = column(4)?;
        let mut weights: [Vec<f64>; 3] = Default::default();
        for (k, w) in weights.iter_mut().enumerate() {
            let cmf = column(1 + k)?;
            let raw: Vec<f64> = cmf.iter().zip(&d65).map(|(c, d)| c * d).collect();
            let white: f64 = raw.iter().sum();
            if !(white > 0.0) {
                return Err(Error::Domain(format!("grid has no response in XYZ coordinate {k}")));
            }
            *w = raw.iter().map(|x| x * D65_WHITE_XYZ[k] / white).collect();
        }
        Ok(Self { grid, weights })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn xyz(&self, reflectance: &[f64]) -> [f64; 3] {
        self.weights
            .each_ref()
            .map(|w| w.iter().zip(reflectance).map(|(a, b)| a * b).sum())
    }

    pub fn linear_srgb(&self, reflectance: &[f64]) -> [f64; 3] {
        let xyz = self.xyz(reflectance);
        XYZ_TO_LINEAR_SRGB.map(|row| row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2])
    }

    /// Gamma-encoded, clipped to `[0, 1]`. Non-finite input gives black.
    pub fn srgb(&self, reflectance: &[f64]) -> [f64; 3] {
        if reflectance.iter().any(|x| !x.is_finite()) {
            return [0.0; 3];
        }
        self.linear_srgb(reflectance).map(|c| srgb_gamma(c.clamp(0.0, 1.0)))
    }
}

/// sRGB transfer function on linear values in `[0, 1]`.
pub fn srgb_gamma(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn check_bands(cube: &ImagePlane, grid: &WavelengthGrid) -> Result<()> {
    if cube.channels() != grid.band_count {
        return Err(Error::Dimension(format!(
            "reflectance cube has {} channels, grid has {} bands",
            cube.channels(),
            grid.band_count
        )));
    }
    Ok(())
}

/// Linear sRGB before clipping and gamma.
pub fn reflectance_to_linear_srgb(cube: &ImagePlane, grid: &WavelengthGrid) -> Result<ImagePlane> {
    check_bands(cube, grid)?;
    let conv = SrgbConverter::new(*grid)?;
    Ok(ImagePlane::from_fn(cube.width(), cube.height(), 3, |u, v, c| {
        conv.linear_srgb(cube.pixel(u, v))[c]
    }))
}

pub fn reflectance_to_srgb(cube: &ImagePlane, grid: &WavelengthGrid) -> Result<ImagePlane> {
    check_bands(cube, grid)?;
    let conv = SrgbConverter::new(*grid)?;
    Ok(ImagePlane::from_fn(cube.width(), cube.height(), 3, |u, v, c| conv.srgb(cube.pixel(u, v))[c]))
}
