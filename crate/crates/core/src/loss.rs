//! Training losses on the non-shadow pixel set, their analytic gradients,
//! and a finite-difference checker.
//!
//! Every per-pixel sum is normalized by the number of contributing pixels
//! (a mean over the mask), so weights do not depend on resolution.
//! Reductions run per row in parallel and combine row sums in row order,
//! which keeps results bit-stable across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    lcn, smooth_census_distance, sobel_gradients, soft_sign, soft_sign_derivative, warp_by_disparity,
    warp_disparity_derivative, ImagePlane, Mask, SOBEL_HORIZONTAL, SOBEL_VERTICAL,
};
use crate::render::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_de: f64,
    pub w_p: f64,
    pub w_r: f64,
    pub w_re: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_de: 100.0,
            w_p: 0.2,
            w_r: 1.0,
            w_re: 8.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            w_de: 0.0,
            w_p: 0.0,
            w_r: 0.0,
            w_re: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.w_de, self.w_p, self.w_r, self.w_re].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Argument(format!("loss weights must be >= 0: {self:?}")));
        }
        Ok(())
    }

    /// `l_d + w_de·l_de + w_p·l_p + w_r·l_r + w_re·l_re`.
    pub fn combine(&self, l_d: f64, l_de: f64, l_p: f64, l_r: f64, l_re: f64) -> f64 {
        l_d + self.w_de * l_de + self.w_p * l_p + self.w_r * l_r + self.w_re * l_re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_d: f64,
    pub l_de: f64,
    pub l_p: f64,
    pub l_r: f64,
    pub l_re: f64,
    pub total: f64,
    pub valid_pixel_count: usize,
}

/// LCN and Census parameters used by the pattern loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternLossParams {
    pub lcn_window: usize,
    pub lcn_eta: f64,
    pub census_window: usize,
    pub census_eps: f64,
}

impl Default for PatternLossParams {
    fn default() -> Self {
        Self {
            lcn_window: 11,
            lcn_eta: 1e-4,
            census_window: 7,
            census_eps: 1e-2,
        }
    }
}

/// Sum of `term(u, v)` over pixels where it returns `Some`, and the count.
fn masked_sum(width: usize, height: usize, term: impl Fn(usize, usize) -> Option<f64> + Sync) -> (f64, usize) {
    let rows: Vec<(f64, usize)> = (0..height)
        .into_par_iter()
        .map(|v| {
            let mut s = 0.0;
            let mut n = 0;
            for u in 0..width {
                if let Some(t) = term(u, v) {
                    s += t;
                    n += 1;
                }
            }
            (s, n)
        })
        .collect();
    rows.iter().fold((0.0, 0), |(s, n), (rs, rn)| (s + rs, n + rn))
}

fn check_pair(hat: &ImagePlane, gt: &ImagePlane, mask: &Mask, what: &str) -> Result<()> {
    hat.check_same_shape(gt, what)?;
    mask.check_dims(hat.width(), hat.height(), what)
}

fn squared_error_sum(hat: &ImagePlane, gt: &ImagePlane, u: usize, v: usize) -> f64 {
    hat.pixel(u, v)
        .iter()
        .zip(gt.pixel(u, v))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn masked_mse(hat: &ImagePlane, gt: &ImagePlane, mask: &Mask, what: &str) -> Result<f64> {
    check_pair(hat, gt, mask, what)?;
    let (s, n) = masked_sum(hat.width(), hat.height(), |u, v| {
        mask.get(u, v).then(|| squared_error_sum(hat, gt, u, v))
    });
    if n == 0 {
        return Err(Error::EmptyMask(what.into()));
    }
    Ok(s / n as f64)
}

fn masked_mse_grad(hat: &ImagePlane, gt: &ImagePlane, mask: &Mask, what: &str) -> Result<ImagePlane> {
    check_pair(hat, gt, mask, what)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask(what.into()));
    }
    let scale = 2.0 / n as f64;
    Ok(ImagePlane::from_fn(hat.width(), hat.height(), hat.channels(), |u, v, c| {
        if mask.get(u, v) {
            scale * (hat.get(u, v, c) - gt.get(u, v, c))
        } else {
            0.0
        }
    }))
}

/// Mean over the mask of `(D̂ − D_gt)²`.
pub fn loss_disparity(d_hat: &ImagePlane, d_gt: &ImagePlane, mask: &Mask) -> Result<f64> {
    masked_mse(d_hat, d_gt, mask, "loss_disparity")
}

pub fn loss_disparity_grad(d_hat: &ImagePlane, d_gt: &ImagePlane, mask: &Mask) -> Result<ImagePlane> {
    masked_mse_grad(d_hat, d_gt, mask, "loss_disparity")
}

/// Mean over the mask of `Σ_λ (R̂ − R_gt)²`.
pub fn loss_reflectance(r_hat: &ImagePlane, r_gt: &ImagePlane, mask: &Mask) -> Result<f64> {
    masked_mse(r_hat, r_gt, mask, "loss_reflectance")
}

pub fn loss_reflectance_grad(r_hat: &ImagePlane, r_gt: &ImagePlane, mask: &Mask) -> Result<ImagePlane> {
    masked_mse_grad(r_hat, r_gt, mask, "loss_reflectance")
}

struct EdgeResiduals {
    vertical: ImagePlane,
    horizontal: ImagePlane,
    /// Mask pixels whose ground-truth gradients are finite in every channel.
    effective: Mask,
}

fn edge_residuals(x_hat: &ImagePlane, x_gt: &ImagePlane, mask: &Mask) -> Result<EdgeResiduals> {
    check_pair(x_hat, x_gt, mask, "loss_edges")?;
    let (hv, hh) = sobel_gradients(x_hat)?;
    let (gv, gh) = sobel_gradients(x_gt)?;
    let effective = Mask::from_fn(mask.width(), mask.height(), |u, v| {
        mask.get(u, v)
            && gv.pixel(u, v).iter().chain(gh.pixel(u, v)).all(|x| x.is_finite())
    });
    if effective.count() == 0 {
        return Err(Error::EmptyMask("loss_edges".into()));
    }
    Ok(EdgeResiduals {
        vertical: hv.zip_map(&gv, |a, b| a - b)?,
        horizontal: hh.zip_map(&gh, |a, b| a - b)?,
        effective,
    })
}

/// Sobel-gradient MSE: mean over the mask of the squared vertical plus
/// horizontal gradient differences, summed over channels. Pixels whose
/// ground-truth gradient touches an invalid (NaN) value are skipped.
pub fn loss_edges(x_hat: &ImagePlane, x_gt: &ImagePlane, mask: &Mask) -> Result<f64> {
    let r = edge_residuals(x_hat, x_gt, mask)?;
    let (s, n) = masked_sum(mask.width(), mask.height(), |u, v| {
        r.effective.get(u, v).then(|| {
            r.vertical.pixel(u, v).iter().chain(r.horizontal.pixel(u, v)).map(|e| e * e).sum()
        })
    });
    Ok(s / n as f64)
}

pub fn loss_edges_grad(x_hat: &ImagePlane, x_gt: &ImagePlane, mask: &Mask) -> Result<ImagePlane> {
    let r = edge_residuals(x_hat, x_gt, mask)?;
    let scale = 2.0 / r.effective.count() as f64;
    let (w, h, ch) = (x_hat.width(), x_hat.height(), x_hat.channels());
    let mut grad = ImagePlane::new(w, h, ch);
    for v in 0..h {
        for u in 0..w {
            if !r.effective.get(u, v) {
                continue;
            }
            for c in 0..ch {
                let ev = scale * r.vertical.get(u, v, c);
                let eh = scale * r.horizontal.get(u, v, c);
                for dv in 0..3 {
                    for du in 0..3 {
                        let k = ev * SOBEL_VERTICAL[dv][du] + eh * SOBEL_HORIZONTAL[dv][du];
                        if k == 0.0 {
                            continue;
                        }
                        let su = (u as isize + du as isize - 1).clamp(0, w as isize - 1) as usize;
                        let sv = (v as isize + dv as isize - 1).clamp(0, h as isize - 1) as usize;
                        let i = grad.index(su, sv, c);
                        grad.data_mut()[i] += k;
                    }
                }
            }
        }
    }
    Ok(grad)
}

fn check_pattern_inputs(i_lcn: &ImagePlane, coded: &ImagePlane, d_hat: &ImagePlane, mask: &Mask) -> Result<()> {
    i_lcn.check_same_shape(coded, "loss_pattern")?;
    i_lcn.check_same_dims(d_hat, "loss_pattern")?;
    mask.check_dims(i_lcn.width(), i_lcn.height(), "loss_pattern")
}

/// Smooth-Census distance between the LCN image and the ±1-coded pattern
/// warped by `D̂`, averaged over mask pixels with a valid warp.
pub fn loss_pattern(
    i_lcn: &ImagePlane,
    coded_pattern: &ImagePlane,
    d_hat: &ImagePlane,
    mask: &Mask,
    params: &PatternLossParams,
) -> Result<f64> {
    check_pattern_inputs(i_lcn, coded_pattern, d_hat, mask)?;
    let warped = warp_by_disparity(coded_pattern, d_hat)?;
    let dist = smooth_census_distance(i_lcn, &warped, params.census_window, params.census_eps)?;
    let (s, n) = masked_sum(mask.width(), mask.height(), |u, v| {
        let d = dist.get(u, v, 0);
        (mask.get(u, v) && d.is_finite()).then_some(d)
    });
    if n == 0 {
        return Err(Error::EmptyMask("loss_pattern: no valid warped pixels".into()));
    }
    Ok(s / n as f64)
}

/// Gradient of [`loss_pattern`] with respect to `D̂`.
pub fn loss_pattern_grad(
    i_lcn: &ImagePlane,
    coded_pattern: &ImagePlane,
    d_hat: &ImagePlane,
    mask: &Mask,
    params: &PatternLossParams,
) -> Result<ImagePlane> {
    check_pattern_inputs(i_lcn, coded_pattern, d_hat, mask)?;
    let a = i_lcn;
    let b = warp_by_disparity(coded_pattern, d_hat)?;
    let db_dd = warp_disparity_derivative(coded_pattern, d_hat)?;
    let dist = smooth_census_distance(a, &b, params.census_window, params.census_eps)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let effective = Mask::from_fn(w, h, |u, v| mask.get(u, v) && dist.get(u, v, 0).is_finite());
    let n_eff = effective.count();
    if n_eff == 0 {
        return Err(Error::EmptyMask("loss_pattern: no valid warped pixels".into()));
    }
    let eps = params.census_eps;
    let r = (params.census_window / 2) as isize;
    let clamp = |x: isize, hi: usize| x.clamp(0, hi as isize - 1) as usize;

    // ∂L/∂B, accumulated by replaying the forward loops
    let mut grad_b = ImagePlane::new(w, h, ch);
    for v in 0..h {
        for u in 0..w {
            if !effective.get(u, v) {
                continue;
            }
            let mut n_terms = 0usize;
            for c in 0..ch {
                for dv in -r..=r {
                    for du in -r..=r {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (qu, qv) = (clamp(u as isize + du, w), clamp(v as isize + dv, h));
                        if a.get(qu, qv, c).is_finite() && b.get(qu, qv, c).is_finite() {
                            n_terms += 1;
                        }
                    }
                }
            }
            let scale = 1.0 / (n_eff as f64 * n_terms as f64);
            for c in 0..ch {
                let (ca, cb) = (a.get(u, v, c), b.get(u, v, c));
                for dv in -r..=r {
                    for du in -r..=r {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let (qu, qv) = (clamp(u as isize + du, w), clamp(v as isize + dv, h));
                        let (na, nb) = (a.get(qu, qv, c), b.get(qu, qv, c));
                        if !(na.is_finite() && nb.is_finite()) {
                            continue;
                        }
                        let diff = soft_sign(na - ca, eps) - soft_sign(nb - cb, eps);
                        let sign = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        // ∂(½|a − φ(nb − cb)|)/∂nb
                        let g = -0.5 * sign * soft_sign_derivative(nb - cb, eps) * scale;
                        let iq = grad_b.index(qu, qv, c);
                        grad_b.data_mut()[iq] += g;
                        let ip = grad_b.index(u, v, c);
                        grad_b.data_mut()[ip] -= g;
                    }
                }
            }
        }
    }

    Ok(ImagePlane::from_fn(w, h, 1, |u, v, _| {
        (0..ch)
            .map(|c| {
                let g = grad_b.get(u, v, c);
                if g == 0.0 {
                    0.0
                } else {
                    g * db_dd.get(u, v, c)
                }
            })
            .sum()
    }))
}

/// All five terms and their weighted total for one sample.
pub fn total_loss(sample: &Sample, d_hat: &ImagePlane, r_hat: &ImagePlane, weights: &LossWeights) -> Result<LossReport> {
    total_loss_with(sample, d_hat, r_hat, weights, &PatternLossParams::default())
}

pub fn total_loss_with(
    sample: &Sample,
    d_hat: &ImagePlane,
    r_hat: &ImagePlane,
    weights: &LossWeights,
    params: &PatternLossParams,
) -> Result<LossReport> {
    weights.validate()?;
    let mask = &sample.mask;
    let l_d = loss_disparity(d_hat, &sample.disparity, mask)?;
    let l_de = loss_edges(d_hat, &sample.disparity, mask)?;
    let i_lcn = lcn(&sample.image, params.lcn_window, params.lcn_eta)?;
    let coded = sample.pattern()?.to_signed_plane();
    let l_p = loss_pattern(&i_lcn, &coded, d_hat, mask, params)?;
    let l_r = loss_reflectance(r_hat, &sample.reflectance, mask)?;
    let l_re = loss_edges(r_hat, &sample.reflectance, mask)?;
    Ok(LossReport {
        l_d,
        l_de,
        l_p,
        l_r,
        l_re,
        total: weights.combine(l_d, l_de, l_p, l_r, l_re),
        valid_pixel_count: mask.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Central-difference step.
    pub step: f64,
    /// Number of distinct random coordinates probed.
    pub samples: usize,
    pub seed: u64,
    /// Gradients smaller than this in magnitude compare in absolute terms.
    pub abs_floor: f64,
}

impl Default for GradientCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples: 100,
            seed: 0,
            abs_floor: 1e-8,
        }
    }
}

/// Worst relative disagreement between `analytic` and central differences
/// of `loss` over random coordinates of `params`.
///
/// Relative error is `|a − n| / max(|a|, |n|, abs_floor)`.
pub fn numeric_gradient_check(
    loss: impl Fn(&ImagePlane) -> Result<f64>,
    params: &ImagePlane,
    analytic: &ImagePlane,
    check: &GradientCheck,
) -> Result<f64> {
    params.check_same_shape(analytic, "numeric_gradient_check")?;
    if !(check.step > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {}", check.step)));
    }
    let len = params.data().len();
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let coords = rand::seq::index::sample(&mut rng, len, check.samples.min(len));
    let eval = |p: &ImagePlane| -> Result<f64> {
        let l = loss(p)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {l}")));
        }
        Ok(l)
    };
    eval(params)?;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for i in coords.iter() {
        let x0 = params.data()[i];
        probe.data_mut()[i] = x0 + check.step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = x0 - check.step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (plus - minus) / (2.0 * check.step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(check.abs_floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ImagePlane {
        ImagePlane::from_fn(w, h, 1, |u, v, _| f(u, v))
    }

    #[test]
    fn disparity_examples() {
        let gt = plane(4, 3, |u, v| (u + v) as f64);
        let all = Mask::filled(4, 3, true);
        assert_eq!(loss_disparity(&gt, &gt, &all).unwrap(), 0.0);

        let one = Mask::from_fn(4, 3, |u, v| (u, v) == (2, 1));
        let mut hat = gt.clone();
        hat.set(2, 1, 0, gt.get(2, 1, 0) + 2.0);
        assert_eq!(loss_disparity(&hat, &gt, &one).unwrap(), 4.0);

        let mut off_mask = gt.clone();
        off_mask.set(0, 0, 0, 99.0);
        assert_eq!(loss_disparity(&off_mask, &gt, &one).unwrap(), 0.0);

        let none = Mask::filled(4, 3, false);
        assert!(matches!(loss_disparity(&gt, &gt, &none), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn reflectance_examples() {
        let gt = ImagePlane::filled(2, 2, 27, 0.5);
        let one = Mask::from_fn(2, 2, |u, v| (u, v) == (1, 0));
        assert_eq!(loss_reflectance(&gt, &gt, &one).unwrap(), 0.0);
        let hat = gt.map(|x| x + 0.1);
        let l = loss_reflectance(&hat, &gt, &one).unwrap();
        assert!((l - 0.27).abs() < 1e-12);
        let hat2 = gt.map(|x| x + 0.2);
        let l2 = loss_reflectance(&hat2, &gt, &one).unwrap();
        assert!((l2 - 4.0 * l).abs() < 1e-12);
    }

    #[test]
    fn edge_examples() {
        let gt = plane(8, 6, |u, v| ((u * 3 + v * 5) % 7) as f64);
        let all = Mask::filled(8, 6, true);
        assert_eq!(loss_edges(&gt, &gt, &all).unwrap(), 0.0);
        let shifted = gt.map(|x| x + 3.5);
        assert_eq!(loss_edges(&shifted, &gt, &all).unwrap(), 0.0);
    }

    #[test]
    fn displaced_step_edge_is_localized() {
        let (w, h) = (16, 8);
        let gt = plane(w, h, |u, _| if u >= 8 { 1.0 } else { 0.0 });
        let hat = plane(w, h, |u, _| if u >= 9 { 1.0 } else { 0.0 });
        let all = Mask::filled(w, h, true);
        assert!(loss_edges(&hat, &gt, &all).unwrap() > 0.0);
        // Per-pixel oracle: the horizontal Sobel of a unit step at column s
        // is 4 at columns s-1 and s; residual nonzero only in columns 7..=9.
        for u in 0..w {
            let col = Mask::from_fn(w, h, |uu, _| uu == u);
            let l = loss_edges(&hat, &gt, &col).unwrap();
            let expected = if u == 7 || u == 9 { 16.0 } else { 0.0 };
            assert_eq!(l, expected, "column {u}");
        }
    }

    #[test]
    fn pattern_identity_is_zero() {
        let coded = ImagePlane::from_fn(12, 10, 3, |u, v, c| if (u * 7 + v * 3) % 3 == c { 1.0 } else { -1.0 });
        let d = ImagePlane::filled(12, 10, 1, 2.0);
        let warped = warp_by_disparity(&coded, &d).unwrap();
        let mask = Mask::filled(12, 10, true);
        let l = loss_pattern(&warped, &coded, &d, &mask, &PatternLossParams::default()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn weights_arithmetic() {
        let w = LossWeights::default();
        assert!((w.combine(1.0, 1.0, 1.0, 1.0, 1.0) - 110.2).abs() < 1e-12);
        assert_eq!(LossWeights::zero().combine(0.7, 5.0, 5.0, 5.0, 5.0), 0.7);
        let bad = LossWeights { w_p: -1.0, ..w };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gradient_check_constant_loss() {
        let p = ImagePlane::filled(10, 10, 1, 1.0);
        let zero = ImagePlane::new(10, 10, 1);
        let err = numeric_gradient_check(|_| Ok(3.0), &p, &zero, &GradientCheck::default()).unwrap();
        assert_eq!(err, 0.0);
        let nan = numeric_gradient_check(|_| Ok(f64::NAN), &p, &zero, &GradientCheck::default());
        assert!(matches!(nan, Err(Error::NonFinite(_))));
        let bad_step = GradientCheck {
            step: 0.0,
            ..Default::default()
        };
        assert!(numeric_gradient_check(|_| Ok(3.0), &p, &zero, &bad_step).is_err());
    }
}
