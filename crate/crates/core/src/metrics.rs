//! Depth and reflectance accuracy metrics on the valid-pixel mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask};

/// Denominator floor for relative reflectance errors.
pub const MRAE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    /// Percent of pixels with `max(Ẑ/Z, Z/Ẑ) < 1.03^i`, i = 1..3.
    pub theta: [f64; 3],
    pub pixel_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectanceMetrics {
    pub rmse: f64,
    pub mrae: f64,
    pub pixel_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub depth_rmse: f64,
    pub theta: [f64; 3],
    pub refl_rmse: f64,
    pub mrae: f64,
    pub pixel_count: usize,
}

impl MetricsReport {
    pub fn from_parts(depth: &DepthMetrics, refl: &ReflectanceMetrics) -> Self {
        Self {
            depth_rmse: depth.rmse,
            theta: depth.theta,
            refl_rmse: refl.rmse,
            mrae: refl.mrae,
            pixel_count: depth.pixel_count,
        }
    }
}

/// Per-row partial results, combined in row order.
fn reduce_rows<T: Send, const N: usize>(
    height: usize,
    row: impl Fn(usize) -> Result<[T; N]> + Sync + Send,
    combine: impl Fn(&mut [T; N], [T; N]),
    init: [T; N],
) -> Result<[T; N]> {
    let rows: Vec<Result<[T; N]>> = (0..height).into_par_iter().map(row).collect();
    let mut acc = init;
    for r in rows {
        combine(&mut acc, r?);
    }
    Ok(acc)
}

/// Max-ratio accuracy thresholds `1.03^i`.
pub fn theta_thresholds() -> [f64; 3] {
    [1.03, 1.03 * 1.03, 1.03 * 1.03 * 1.03]
}

pub fn depth_metrics(z_hat: &ImagePlane, z_gt: &ImagePlane, mask: &Mask) -> Result<DepthMetrics> {
    z_hat.check_same_shape(z_gt, "depth_metrics")?;
    if z_hat.channels() != 1 {
        return Err(Error::Dimension(format!("depth maps need 1 channel, got {}", z_hat.channels())));
    }
    mask.check_dims(z_hat.width(), z_hat.height(), "depth_metrics")?;
    let th = theta_thresholds();
    let w = z_hat.width();
    // [squared error, count, hits θ1, θ2, θ3]
    let acc = reduce_rows(
        z_hat.height(),
        |v| {
            let mut a = [0.0; 5];
            for u in 0..w {
                if !mask.get(u, v) {
                    continue;
                }
                let (zh, zg) = (z_hat.get(u, v, 0), z_gt.get(u, v, 0));
                if !(zh > 0.0 && zg > 0.0) {
                    return Err(Error::Domain(format!(
                        "depth must be positive on the mask: ({u}, {v}) has {zh} vs {zg}"
                    )));
                }
                a[0] += (zh - zg) * (zh - zg);
                a[1] += 1.0;
                let ratio = (zh / zg).max(zg / zh);
                for i in 0..3 {
                    if ratio < th[i] {
                        a[2 + i] += 1.0;
                    }
                }
            }
            Ok(a)
        },
        |acc, r| acc.iter_mut().zip(r).for_each(|(a, b)| *a += b),
        [0.0; 5],
    )?;
    let n = acc[1];
    if n == 0.0 {
        return Err(Error::EmptyMask("depth_metrics".into()));
    }
    Ok(DepthMetrics {
        rmse: (acc[0] / n).sqrt(),
        theta: [100.0 * acc[2] / n, 100.0 * acc[3] / n, 100.0 * acc[4] / n],
        pixel_count: n as usize,
    })
}

/// RMSE over all masked `(pixel, band)` entries and the mean of
/// `|R̂ − R| / max(R, MRAE_FLOOR)` over the same entries.
pub fn reflectance_metrics(r_hat: &ImagePlane, r_gt: &ImagePlane, mask: &Mask) -> Result<ReflectanceMetrics> {
    r_hat.check_same_shape(r_gt, "reflectance_metrics")?;
    mask.check_dims(r_hat.width(), r_hat.height(), "reflectance_metrics")?;
    let w = r_hat.width();
    // [squared error, relative error, entries, pixels]
    let acc = reduce_rows(
        r_hat.height(),
        |v| {
            let mut a = [0.0; 4];
            for u in 0..w {
                if !mask.get(u, v) {
                    continue;
                }
                for (h, g) in r_hat.pixel(u, v).iter().zip(r_gt.pixel(u, v)) {
                    let e = h - g;
                    a[0] += e * e;
                    a[1] += e.abs() / g.max(MRAE_FLOOR);
                    a[2] += 1.0;
                }
                a[3] += 1.0;
            }
            Ok(a)
        },
        |acc, r| acc.iter_mut().zip(r).for_each(|(a, b)| *a += b),
        [0.0; 4],
    )?;
    if acc[3] == 0.0 {
        return Err(Error::EmptyMask("reflectance_metrics".into()));
    }
    Ok(ReflectanceMetrics {
        rmse: (acc[0] / acc[2]).sqrt(),
        mrae: acc[1] / acc[2],
        pixel_count: acc[3] as usize,
    })
}
