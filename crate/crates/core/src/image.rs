//! Dense image buffers and the pixel operators shared by the renderer,
//! losses and reconstruction: local contrast normalization, horizontal
//! disparity warping, Sobel gradients, smooth Census distance and shadow
//! binarization.
//!
//! Pixels are addressed `(u, v)` with `u` the column and `v` the row.
//! Borders use replicate padding; warping outside the source yields NaN.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Interleaved `H × W × C` buffer of `f64`. NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Argument("image needs at least one channel".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for v in 0..height {
            for u in 0..width {
                for c in 0..channels {
                    data.push(f(u, v, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize) -> usize {
        (v * self.width + u) * self.channels + c
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[self.index(u, v, c)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: usize, value: f64) {
        let i = self.index(u, v, c);
        self.data[i] = value;
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[f64] {
        let i = self.index(u, v, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let i = self.index(u, v, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// Rows as mutable slices, each `width * channels` long.
    pub(crate) fn rows_mut(&mut self) -> rayon::slice::ChunksExactMut<'_, f64> {
        let stride = self.width * self.channels;
        self.data.par_chunks_exact_mut(stride.max(1))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two same-shaped images.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::new(self.height, self.width, self.channels);
        for v in 0..self.height {
            for u in 0..self.width {
                for c in 0..self.channels {
                    out.set(v, u, c, self.get(u, v, c));
                }
            }
        }
        out
    }

    pub fn channel(&self, c: usize) -> Self {
        Self::from_fn(self.width, self.height, 1, |u, v, _| self.get(u, v, c))
    }

    pub fn max_value(&self) -> f64 {
        self.data
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn check_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        self.check_same_dims(other, what)?;
        if self.channels != other.channels {
            return Err(Error::Dimension(format!(
                "{what}: {} vs {} channels",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    #[inline]
    fn clamped(&self, u: isize, v: isize, c: usize) -> f64 {
        let u = u.clamp(0, self.width as isize - 1) as usize;
        let v = v.clamp(0, self.height as isize - 1) as usize;
        self.get(u, v, c)
    }
}

/// Per-pixel boolean mask (the valid/non-shadow set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} mask entries for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other.width, other.height, "mask and")?;
        Ok(Mask {
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
            ..*self
        })
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Dimension(format!(
                "{what}: mask {}x{} vs image {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Local contrast normalization `(I − μ) / (σ + η)` with μ, σ the mean
/// and population standard deviation over a `window × window` patch.
pub fn lcn(img: &ImagePlane, window: usize, eta: f64) -> Result<ImagePlane> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Argument(format!("lcn window must be odd and >= 3, got {window}")));
    }
    if !(eta > 0.0) {
        return Err(Error::Argument(format!("lcn eta must be positive, got {eta}")));
    }
    let r = (window / 2) as isize;
    let count = (window * window) as f64;
    let (w, ch) = (img.width, img.channels);
    let mut out = ImagePlane::new(img.width, img.height, ch);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        let v = v as isize;
        for u in 0..w {
            for c in 0..ch {
                // statistics of values relative to the centre, so flat
                // windows give exactly zero
                let centre = img.get(u, v as usize, c);
                let mut sum = 0.0;
                for dv in -r..=r {
                    for du in -r..=r {
                        sum += img.clamped(u as isize + du, v + dv, c) - centre;
                    }
                }
                let mean = sum / count;
                let mut var = 0.0;
                for dv in -r..=r {
                    for du in -r..=r {
                        let d = img.clamped(u as isize + du, v + dv, c) - centre - mean;
                        var += d * d;
                    }
                }
                let sigma = (var / count).sqrt();
                row[u * ch + c] = -mean / (sigma + eta);
            }
        }
    });
    Ok(out)
}

/// Bilinear sample of row `v` at fractional column `x`; NaN outside.
#[inline]
pub(crate) fn sample_row(field: &ImagePlane, v: usize, x: f64, c: usize) -> f64 {
    if !x.is_finite() || x < 0.0 || x > (field.width - 1) as f64 {
        return f64::NAN;
    }
    let x0 = x.floor();
    let t = x - x0;
    let i0 = x0 as usize;
    if t == 0.0 {
        return field.get(i0, v, c);
    }
    (1.0 - t) * field.get(i0, v, c) + t * field.get(i0 + 1, v, c)
}

/// Horizontal slope `field(x0+1) − field(x0)` of the cell containing `x`,
/// the derivative of [`sample_row`] with respect to `x`. NaN outside.
#[inline]
pub(crate) fn sample_row_slope(field: &ImagePlane, v: usize, x: f64, c: usize) -> f64 {
    let last = (field.width - 1) as f64;
    if !x.is_finite() || x < 0.0 || x > last || field.width < 2 {
        return f64::NAN;
    }
    let i0 = (x.floor().min(last - 1.0)) as usize;
    field.get(i0 + 1, v, c) - field.get(i0, v, c)
}

fn check_disparity(field: &ImagePlane, disparity: &ImagePlane) -> Result<()> {
    field.check_same_dims(disparity, "warp_by_disparity")?;
    if disparity.channels != 1 {
        return Err(Error::Dimension(format!(
            "disparity must have 1 channel, has {}",
            disparity.channels
        )));
    }
    Ok(())
}

/// `out(u, v, ·) = field(u − D(u, v), v, ·)` with linear interpolation in `u`.
pub fn warp_by_disparity(field: &ImagePlane, disparity: &ImagePlane) -> Result<ImagePlane> {
    check_disparity(field, disparity)?;
    let (w, ch) = (field.width, field.channels);
    let mut out = ImagePlane::new(field.width, field.height, ch);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let x = u as f64 - disparity.get(u, v, 0);
            for c in 0..ch {
                row[u * ch + c] = sample_row(field, v, x, c);
            }
        }
    });
    Ok(out)
}

/// Derivative of [`warp_by_disparity`] output with respect to `D(u, v)`,
/// i.e. `−∂field/∂u` at the source position.
pub fn warp_disparity_derivative(field: &ImagePlane, disparity: &ImagePlane) -> Result<ImagePlane> {
    check_disparity(field, disparity)?;
    let (w, ch) = (field.width, field.channels);
    let mut out = ImagePlane::new(field.width, field.height, ch);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        for u in 0..w {
            let x = u as f64 - disparity.get(u, v, 0);
            for c in 0..ch {
                row[u * ch + c] = -sample_row_slope(field, v, x, c);
            }
        }
    });
    Ok(out)
}

/// Horizontal Sobel kernel, indexed `[dv + 1][du + 1]`.
pub const SOBEL_HORIZONTAL: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical Sobel kernel, indexed `[dv + 1][du + 1]`.
pub const SOBEL_VERTICAL: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn correlate3(img: &ImagePlane, kernel: &[[f64; 3]; 3]) -> ImagePlane {
    let (w, ch) = (img.width, img.channels);
    let mut out = ImagePlane::new(img.width, img.height, ch);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        for u in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (dv, krow) in kernel.iter().enumerate() {
                    for (du, &k) in krow.iter().enumerate() {
                        if k != 0.0 {
                            acc += k * img.clamped(u as isize + du as isize - 1, v as isize + dv as isize - 1, c);
                        }
                    }
                }
                row[u * ch + c] = acc;
            }
        }
    });
    out
}

/// Returns `(vertical, horizontal)` Sobel responses per channel.
pub fn sobel_gradients(img: &ImagePlane) -> Result<(ImagePlane, ImagePlane)> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::Argument(format!(
            "sobel needs at least 3x3 pixels, got {}x{}",
            img.width, img.height
        )));
    }
    Ok((correlate3(img, &SOBEL_VERTICAL), correlate3(img, &SOBEL_HORIZONTAL)))
}

/// Saturating sign used by the smooth Census transform.
#[inline]
pub fn soft_sign(x: f64, eps: f64) -> f64 {
    x / (x * x + eps * eps).sqrt()
}

/// Derivative of [`soft_sign`].
#[inline]
pub fn soft_sign_derivative(x: f64, eps: f64) -> f64 {
    let q = x * x + eps * eps;
    eps * eps / (q * q.sqrt())
}

/// Per-pixel smooth Census distance between two images.
///
/// For each pixel `p` this is the mean, over window offsets `q ≠ 0` and
/// channels, of `|φ(A(p+q) − A(p)) − φ(B(p+q) − B(p))| / 2` with
/// `φ(x) = x / √(x² + eps²)`. Neighbors fetched with replicate padding.
/// Comparisons touching a non-finite value are skipped; a pixel whose own
/// value is non-finite (or has no usable comparison) is NaN.
pub fn smooth_census_distance(
    a: &ImagePlane,
    b: &ImagePlane,
    window: usize,
    eps: f64,
) -> Result<ImagePlane> {
    a.check_same_shape(b, "smooth_census_distance")?;
    if window < 3 || window % 2 == 0 {
        return Err(Error::Argument(format!("census window must be odd and >= 3, got {window}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("census eps must be positive, got {eps}")));
    }
    let r = (window / 2) as isize;
    let (w, ch) = (a.width, a.channels);
    let mut out = ImagePlane::new(a.width, a.height, 1);
    out.rows_mut().enumerate().for_each(|(v, row)| {
        let vi = v as isize;
        for u in 0..w {
            let ui = u as isize;
            let mut acc = 0.0;
            let mut n = 0usize;
            let mut center_ok = true;
            for c in 0..ch {
                let (ca, cb) = (a.get(u, v, c), b.get(u, v, c));
                if !(ca.is_finite() && cb.is_finite()) {
                    center_ok = false;
                    break;
                }
                for dv in -r..=r {
                    for du in -r..=r {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let na = a.clamped(ui + du, vi + dv, c);
                        let nb = b.clamped(ui + du, vi + dv, c);
                        if !(na.is_finite() && nb.is_finite()) {
                            continue;
                        }
                        acc += (soft_sign(na - ca, eps) - soft_sign(nb - cb, eps)).abs() * 0.5;
                        n += 1;
                    }
                }
            }
            row[u] = if center_ok && n > 0 { acc / n as f64 } else { f64::NAN };
        }
    });
    Ok(out)
}

/// True where the brightest channel exceeds `threshold`.
pub fn shadow_binarize(img: &ImagePlane, threshold: f64) -> Result<Mask> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!("threshold must be >= 0, got {threshold}")));
    }
    Ok(Mask::from_fn(img.width, img.height, |u, v| {
        img.pixel(u, v).iter().copied().fold(f64::NEG_INFINITY, f64::max) > threshold
    }))
}
