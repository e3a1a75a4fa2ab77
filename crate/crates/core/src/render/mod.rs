//! Rectified projector–camera rendering with exact ground truth.
//!
//! The camera sits at the origin looking down +z; the projector shares its
//! intrinsics and sits at `(b, 0, 0)` with aligned axes, so corresponding
//! points share image rows and disparity is `u_cam − u_proj = b·f / z`.
//! Pixel `(u, v)` is centred at integer coordinates.

mod dataset;
mod scene;

pub use dataset::{generate_dataset, DatasetRenderer, synthetic_reflectance_corpus, CorpusSource, DatasetConfig};
pub use scene::{
    gaussian_mixture, Axis, AxisPlane, ObjectSpec, RayHit, ReflectanceMap, ReflectanceSpec, Scene,
    SceneConfig, SceneObject, Shape, TriangleMesh, RAY_EPSILON,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask};
use crate::pattern::{DotLabel, DotPattern};
use crate::spectral::{render_pixel, shading_factor, CameraSensitivity, ProjectorPrimaries, Spectrum, WavelengthGrid};

/// Offset along shadow rays so a surface does not occlude itself (meters).
pub const SHADOW_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifiedRig {
    pub baseline_m: f64,
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub max_disparity_px: f64,
}

impl Default for RectifiedRig {
    fn default() -> Self {
        Self {
            baseline_m: 0.1,
            focal_px: 500.0,
            principal_point: [320.0, 240.0],
            width: 640,
            height: 480,
            max_disparity_px: 200.0,
        }
    }
}

impl RectifiedRig {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_m > 0.0 && self.focal_px > 0.0 && self.max_disparity_px > 0.0) {
            return Err(Error::Config(format!(
                "rig needs positive baseline, focal length and max disparity: {self:?}"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("rig resolution must be non-zero".into()));
        }
        Ok(())
    }

    /// Same geometry at another resolution, principal point at the centre.
    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            principal_point: [(width / 2) as f64, (height / 2) as f64],
            ..*self
        }
    }

    pub fn projector_center(&self) -> Vector3<f64> {
        Vector3::new(self.baseline_m, 0.0, 0.0)
    }

    /// `b · f`, the depth–disparity product.
    pub fn bf(&self) -> f64 {
        self.baseline_m * self.focal_px
    }

    /// Continuous projector image coordinates of a camera-frame point.
    pub fn project_to_projector(&self, x: &Vector3<f64>) -> (f64, f64) {
        (
            self.focal_px * (x.x - self.baseline_m) / x.z + self.principal_point[0],
            self.focal_px * x.y / x.z + self.principal_point[1],
        )
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `z`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        self.camera_ray(u, v) * z
    }
}

/// `Z = b·f / D`.
pub fn depth_from_disparity(disparity: f64, rig: &RectifiedRig) -> Result<f64> {
    if !(disparity > 0.0) {
        return Err(Error::Domain(format!("disparity must be positive, got {disparity}")));
    }
    Ok(rig.bf() / disparity)
}

/// `D = b·f / Z`.
pub fn disparity_from_depth(depth: f64, rig: &RectifiedRig) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    Ok(rig.bf() / depth)
}

/// Camera-ray hit with the normal oriented toward the camera.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit<'a> {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub reflectance: &'a Spectrum,
    /// Index into [`Scene::reflectances`].
    pub reflectance_index: usize,
}

pub fn trace_camera_ray<'a>(scene: &'a Scene, rig: &RectifiedRig, u: f64, v: f64) -> Option<SurfaceHit<'a>> {
    let dir = rig.camera_ray(u, v);
    let hit = scene.intersect(&Vector3::zeros(), &dir, RAY_EPSILON, f64::INFINITY)?;
    let normal = if hit.normal.dot(&dir) > 0.0 { -hit.normal } else { hit.normal };
    Some(SurfaceHit {
        point: hit.point,
        normal,
        reflectance: &scene.reflectances()[hit.reflectance],
        reflectance_index: hit.reflectance,
    })
}

/// Pattern label lighting `x`, sampled at the nearest projector pixel;
/// `None` when `x` falls outside the projector frustum.
pub fn projector_code_at(x: &Vector3<f64>, rig: &RectifiedRig, pattern: &DotPattern) -> Option<DotLabel> {
    if !(x.z > 0.0) {
        return None;
    }
    let (up, vp) = rig.project_to_projector(x);
    let (iu, iv) = (up.round(), vp.round());
    if !(iu >= 0.0 && iv >= 0.0 && iu < pattern.width() as f64 && iv < pattern.height() as f64) {
        return None;
    }
    Some(pattern.label(iu as usize, iv as usize))
}

/// True when some surface lies strictly between `x` and the projector.
pub fn is_projector_shadowed(scene: &Scene, rig: &RectifiedRig, x: &Vector3<f64>) -> bool {
    let to_light = rig.projector_center() - x;
    let dist = to_light.norm();
    if dist <= 2.0 * SHADOW_EPSILON {
        return false;
    }
    let dir = to_light / dist;
    let origin = x + dir * SHADOW_EPSILON;
    scene.intersect(&origin, &dir, 0.0, dist - SHADOW_EPSILON).is_some()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub format: u32,
    pub width: usize,
    pub height: usize,
    pub grid: WavelengthGrid,
    pub rig: RectifiedRig,
    pub seed: u64,
    pub pattern_seed: u64,
    pub noise_std: f64,
}

/// One rendered record: color-dot image plus ground truth.
///
/// Miss pixels have NaN disparity/depth and zero reflectance. The mask is
/// true only where the projector directly lights a visible surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImagePlane,
    pub disparity: ImagePlane,
    pub depth: ImagePlane,
    pub reflectance: ImagePlane,
    pub mask: Mask,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.meta.width
    }

    pub fn height(&self) -> usize {
        self.meta.height
    }

    /// Regenerates the projected pattern from the recorded seed.
    pub fn pattern(&self) -> Result<DotPattern> {
        crate::pattern::generate_pattern(self.meta.width, self.meta.height, self.meta.pattern_seed)
    }

    /// Checks the structural invariants; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let rig = &self.meta.rig;
        for v in 0..self.height() {
            for u in 0..self.width() {
                let d = self.disparity.get(u, v, 0);
                let z = self.depth.get(u, v, 0);
                if self.image.pixel(u, v).iter().any(|x| !(*x >= 0.0)) {
                    return Err(format!("negative image at ({u},{v})"));
                }
                if self.reflectance.pixel(u, v).iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(format!("reflectance out of range at ({u},{v})"));
                }
                if self.mask.get(u, v) {
                    if !(d > 0.0 && d <= rig.max_disparity_px) {
                        return Err(format!("disparity {d} out of range at ({u},{v})"));
                    }
                    if ((rig.bf() / d - z) / z).abs() > 1e-9 {
                        return Err(format!("depth/disparity mismatch at ({u},{v})"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RenderOptions {
    /// Standard deviation of additive Gaussian image noise (0 = off).
    pub noise_std: f64,
    /// Seed recorded in the sample metadata and used for noise.
    pub seed: u64,
}

struct PixelOut {
    rgb: [f64; 3],
    disparity: f64,
    depth: f64,
    reflectance: Option<usize>,
    lit: bool,
}

/// Renders every camera pixel: ground-truth geometry, illumination label,
/// shading, and the observed RGB value.
pub fn render_scene(
    scene: &Scene,
    rig: &RectifiedRig,
    pattern: &DotPattern,
    primaries: &ProjectorPrimaries,
    sensitivity: &CameraSensitivity,
) -> Result<Sample> {
    render_scene_with(scene, rig, pattern, primaries, sensitivity, &RenderOptions::default())
}

pub fn render_scene_with(
    scene: &Scene,
    rig: &RectifiedRig,
    pattern: &DotPattern,
    primaries: &ProjectorPrimaries,
    sensitivity: &CameraSensitivity,
    options: &RenderOptions,
) -> Result<Sample> {
    rig.validate()?;
    let grid = *scene.grid();
    grid.check_same(primaries.grid(), "projector primaries")?;
    grid.check_same(sensitivity.grid(), "camera sensitivity")?;
    if pattern.width() != rig.width || pattern.height() != rig.height {
        return Err(Error::Dimension(format!(
            "pattern {}x{} does not match rig {}x{}",
            pattern.width(),
            pattern.height(),
            rig.width,
            rig.height
        )));
    }
    if !(options.noise_std >= 0.0) {
        return Err(Error::Argument("noise_std must be >= 0".into()));
    }
    let (w, h) = (rig.width, rig.height);
    let x_pro = rig.projector_center();

    let rows: Vec<Vec<PixelOut>> = (0..h)
        .into_par_iter()
        .map(|v| {
            (0..w)
                .map(|u| -> Result<PixelOut> {
                    let Some(hit) = trace_camera_ray(scene, rig, u as f64, v as f64) else {
                        return Ok(PixelOut {
                            rgb: [0.0; 3],
                            disparity: f64::NAN,
                            depth: f64::NAN,
                            reflectance: None,
                            lit: false,
                        });
                    };
                    let depth = hit.point.z;
                    let disparity = rig.bf() / depth;
                    let mut out = PixelOut {
                        rgb: [0.0; 3],
                        disparity,
                        depth,
                        reflectance: Some(hit.reflectance_index),
                        lit: false,
                    };
                    if disparity > rig.max_disparity_px {
                        return Ok(out);
                    }
                    let Some(label) = projector_code_at(&hit.point, rig, pattern) else {
                        return Ok(out);
                    };
                    if is_projector_shadowed(scene, rig, &hit.point) {
                        return Ok(out);
                    }
                    let s = shading_factor(&hit.point, &x_pro, &hit.normal)?;
                    if s > 0.0 {
                        out.rgb = render_pixel(s, sensitivity, primaries.get(label.index()), hit.reflectance)?;
                        out.lit = true;
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let bands = grid.band_count;
    let mut image = ImagePlane::new(w, h, 3);
    let mut disparity = ImagePlane::new(w, h, 1);
    let mut depth = ImagePlane::new(w, h, 1);
    let mut reflectance = ImagePlane::new(w, h, bands);
    let mut mask = Mask::filled(w, h, false);
    for (v, row) in rows.into_iter().enumerate() {
        for (u, px) in row.into_iter().enumerate() {
            image.pixel_mut(u, v).copy_from_slice(&px.rgb);
            disparity.set(u, v, 0, px.disparity);
            depth.set(u, v, 0, px.depth);
            if let Some(i) = px.reflectance {
                reflectance
                    .pixel_mut(u, v)
                    .copy_from_slice(scene.reflectances()[i].values());
            }
            mask.set(u, v, px.lit);
        }
    }

    if options.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let normal = Normal::new(0.0, options.noise_std).map_err(|e| Error::Argument(e.to_string()))?;
        for x in image.data_mut() {
            *x = (*x + normal.sample(&mut rng)).max(0.0);
        }
    }

    Ok(Sample {
        image,
        disparity,
        depth,
        reflectance,
        mask,
        meta: SampleMeta {
            format: 1,
            width: w,
            height: h,
            grid,
            rig: *rig,
            seed: options.seed,
            pattern_seed: pattern.seed(),
            noise_std: options.noise_std,
        },
    })
}
