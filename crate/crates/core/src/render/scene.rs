//! Renderable primitives, nearest-hit ray casting and the scene JSON /
//! ASCII mesh formats.

use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{CameraSensitivity, ProjectorPrimaries, Spectrum, SpectrumKind, WavelengthGrid};

use super::RectifiedRig;

/// Rays closer than this are ignored, so a hit's own surface is not found
/// again by a secondary ray.
pub const RAY_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two in-plane coordinate indices, in ascending order.
    fn others(self) -> [usize; 2] {
        match self {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }
}

/// Plane `coord[axis] = offset`, optionally limited to a rectangle in the
/// two remaining coordinates (ascending axis order).
#[derive(Debug, Clone, PartialEq)]
pub struct AxisPlane {
    pub axis: Axis,
    pub offset: f64,
    pub bounds: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    aabb: [Vector3<f64>; 2],
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Config("mesh has no faces".into()));
        }
        let mut normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Config(format!("face {fi} references a missing vertex")));
            }
            let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let len = n.norm();
            if !(len > 0.0) {
                return Err(Error::Config(format!("face {fi} is degenerate")));
            }
            normals.push(n / len);
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        Ok(Self {
            vertices,
            faces,
            normals,
            aabb: [lo, hi],
        })
    }

    /// Parses the ASCII subset `v x y z` / `f i j k` (1-based indices;
    /// `i/t/n` forms accepted, other records ignored).
    pub fn parse(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let bad = || Error::Config(format!("mesh line {}: cannot parse {line:?}", ln + 1));
            match it.next() {
                Some("v") => {
                    let xyz: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    if xyz.len() != 3 {
                        return Err(bad());
                    }
                    vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|s| {
                            s.split('/')
                                .next()
                                .and_then(|i| i.parse::<usize>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(bad)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad());
                    }
                    // fan-triangulate polygons
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    /// Axis-aligned box as 12 outward-wound triangles.
    pub fn cuboid(center: Vector3<f64>, half: Vector3<f64>) -> Result<Self> {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            vertices.push(center + Vector3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z));
        }
        let quads = [
            [0, 2, 3, 1], // z-
            [4, 5, 7, 6], // z+
            [0, 1, 5, 4], // y-
            [2, 6, 7, 3], // y+
            [0, 4, 6, 2], // x-
            [1, 3, 7, 5], // x+
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self::new(vertices, faces)
    }

    pub fn transformed(&self, rotation: &Rotation3<f64>, scale: f64, translation: Vector3<f64>) -> Result<Self> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| rotation * (v * scale) + translation)
            .collect();
        Self::new(vertices, self.faces.clone())
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    fn hits_aabb(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> bool {
        let (mut t0, mut t1) = (0.0f64, t_max);
        for a in 0..3 {
            let inv = 1.0 / dir[a];
            let mut ta = (self.aabb[0][a] - origin[a]) * inv;
            let mut tb = (self.aabb[1][a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0·∞ leaves the interval unchanged
            if ta > t0 {
                t0 = ta;
            }
            if tb < t1 {
                t1 = tb;
            }
            if t0 > t1 * (1.0 + 1e-12) + 1e-12 {
                return false;
            }
        }
        true
    }

    /// Möller–Trumbore; returns `(t, face)` of the nearest hit in range.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<(f64, usize)> {
        if !self.hits_aabb(origin, dir, t_max) {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        for (fi, f) in self.faces.iter().enumerate() {
            let (p0, p1, p2) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            let e1 = p1 - p0;
            let e2 = p2 - p0;
            let pvec = dir.cross(&e2);
            let det = e1.dot(&pvec);
            if det.abs() < 1e-14 {
                continue;
            }
            let inv = 1.0 / det;
            let tvec = origin - p0;
            let bu = tvec.dot(&pvec) * inv;
            if !(0.0..=1.0).contains(&bu) {
                continue;
            }
            let qvec = tvec.cross(&e1);
            let bv = dir.dot(&qvec) * inv;
            if bv < 0.0 || bu + bv > 1.0 {
                continue;
            }
            let t = e2.dot(&qvec) * inv;
            let limit = best.map_or(t_max, |b| b.0);
            if t > t_min && t < limit {
                best = Some((t, fi));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Plane(AxisPlane),
    Sphere { center: Vector3<f64>, radius: f64 },
    Mesh(TriangleMesh),
}

/// Reflectance assignment as indices into [`Scene::reflectances`].
#[derive(Debug, Clone, PartialEq)]
pub enum ReflectanceMap {
    Uniform(usize),
    PerFace(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub reflectance: ReflectanceMap,
}

/// Nearest intersection along a ray. `normal` is unit length but not yet
/// oriented toward the viewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub object: usize,
    pub reflectance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    grid: WavelengthGrid,
    reflectances: Vec<Spectrum>,
    objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(grid: WavelengthGrid, reflectances: Vec<Spectrum>, objects: Vec<SceneObject>) -> Result<Self> {
        for (i, r) in reflectances.iter().enumerate() {
            grid.check_same(r.grid(), "scene reflectance")?;
            if r.kind() != SpectrumKind::Reflectance {
                return Err(Error::Config(format!("scene spectrum {i} is not a reflectance")));
            }
        }
        for (oi, o) in objects.iter().enumerate() {
            let idx: Vec<usize> = match &o.reflectance {
                ReflectanceMap::Uniform(i) => vec![*i],
                ReflectanceMap::PerFace(v) => {
                    match &o.shape {
                        Shape::Mesh(m) if m.face_count() == v.len() => {}
                        _ => {
                            return Err(Error::Config(format!(
                                "object {oi}: per-face reflectance needs a mesh with one entry per face"
                            )))
                        }
                    }
                    v.clone()
                }
            };
            if let Some(bad) = idx.iter().find(|&&i| i >= reflectances.len()) {
                return Err(Error::Config(format!("object {oi}: reflectance index {bad} out of range")));
            }
            if let Shape::Sphere { radius, .. } = o.shape {
                if !(radius > 0.0) {
                    return Err(Error::Config(format!("object {oi}: sphere radius must be positive")));
                }
            }
        }
        Ok(Self {
            grid,
            reflectances,
            objects,
        })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn reflectances(&self) -> &[Spectrum] {
        &self.reflectances
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    /// Multiplies every reflectance by `factor` (must keep them in `[0, 1]`).
    pub fn with_scaled_reflectances(&self, factor: f64) -> Result<Self> {
        let reflectances = self.reflectances.iter().map(|r| r.scaled(factor)).collect::<Result<_>>()?;
        Self::new(self.grid, reflectances, self.objects.clone())
    }

    /// Nearest hit with `t_min < t < t_max` along `origin + t·dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (oi, obj) in self.objects.iter().enumerate() {
            let limit = best.map_or(t_max, |b| b.t);
            let hit = match &obj.shape {
                Shape::Plane(p) => intersect_plane(p, origin, dir, t_min, limit).map(|(t, n)| (t, n, 0)),
                Shape::Sphere { center, radius } => {
                    intersect_sphere(center, *radius, origin, dir, t_min, limit).map(|t| {
                        let n = (origin + dir * t - center) / *radius;
                        (t, n, 0)
                    })
                }
                Shape::Mesh(m) => m.intersect(origin, dir, t_min, limit).map(|(t, f)| (t, m.normals[f], f)),
            };
            if let Some((t, normal, face)) = hit {
                let reflectance = match &obj.reflectance {
                    ReflectanceMap::Uniform(i) => *i,
                    ReflectanceMap::PerFace(v) => v[face],
                };
                best = Some(RayHit {
                    t,
                    point: origin + dir * t,
                    normal,
                    object: oi,
                    reflectance,
                });
            }
        }
        best
    }
}

fn intersect_plane(
    p: &AxisPlane,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
) -> Option<(f64, Vector3<f64>)> {
    let a = p.axis.index();
    if dir[a] == 0.0 {
        return None;
    }
    let t = (p.offset - origin[a]) / dir[a];
    if !(t > t_min && t < t_max) {
        return None;
    }
    if let Some(b) = p.bounds {
        let [i, j] = p.axis.others();
        let (x, y) = (origin[i] + t * dir[i], origin[j] + t * dir[j]);
        if x < b[0][0] || x > b[0][1] || y < b[1][0] || y > b[1][1] {
            return None;
        }
    }
    let mut n = Vector3::zeros();
    n[a] = 1.0;
    Some((t, n))
}

fn intersect_sphere(
    center: &Vector3<f64>,
    radius: f64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
) -> Option<f64> {
    let oc = origin - center;
    let a = dir.norm_squared();
    let half_b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-half_b - sq) / a, (-half_b + sq) / a]
        .into_iter()
        .find(|&t| t > t_min && t < t_max)
}

// ---------------------------------------------------------------------------
// JSON scene description
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectanceSpec {
    Constant(f64),
    Values(Vec<f64>),
    Csv(PathBuf),
    /// `[center_nm, sigma_nm, amplitude]` terms, summed and clipped to [0, 1].
    Gaussians(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectSpec {
    Plane {
        axis: Axis,
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<[[f64; 2]; 2]>,
        reflectance: String,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
        reflectance: String,
    },
    Mesh {
        path: PathBuf,
        #[serde(default)]
        translation: [f64; 3],
        #[serde(default = "unit_scale")]
        scale: f64,
        #[serde(default)]
        rotation_deg: [f64; 3],
        reflectance: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        face_reflectances: Option<Vec<String>>,
    },
}

fn unit_scale() -> f64 {
    1.0
}

fn format_one() -> u32 {
    1
}

/// On-disk scene description (`"format": 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "format_one")]
    pub format: u32,
    pub rig: RectifiedRig,
    #[serde(default)]
    pub grid: WavelengthGrid,
    pub reflectances: std::collections::BTreeMap<String, ReflectanceSpec>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primaries_csv: Option<[PathBuf; 3]>,
    #[serde(default)]
    pub noise_std: f64,
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SceneConfig = serde_json::from_str(&text)?;
        if cfg.format != 1 {
            return Err(Error::format(path, format!("unsupported scene format {}", cfg.format)));
        }
        Ok(cfg)
    }

    pub fn pattern_seed(&self) -> u64 {
        self.pattern_seed.unwrap_or(self.seed)
    }

    /// Projector primaries and camera sensitivity from the configured CSVs,
    /// or the defaults for the grid.
    pub fn spectral_setup(&self, base_dir: &Path) -> Result<(ProjectorPrimaries, CameraSensitivity)> {
        let grid = self.grid;
        let primaries = match &self.primaries_csv {
            Some(paths) => {
                let load = |p: &PathBuf| Spectrum::from_csv_path(&base_dir.join(p), grid, SpectrumKind::Illumination);
                ProjectorPrimaries::new(load(&paths[0])?, load(&paths[1])?, load(&paths[2])?)?
            }
            None => ProjectorPrimaries::default_for(grid)?,
        };
        let sensitivity = match &self.sensitivity_csv {
            Some(p) => CameraSensitivity::from_csv_path(&base_dir.join(p), grid)?,
            None => CameraSensitivity::default_for(grid)?,
        };
        Ok((primaries, sensitivity))
    }

    /// Builds the scene; relative paths resolve against `base_dir`.
    pub fn build_scene(&self, base_dir: &Path) -> Result<Scene> {
        let grid = self.grid;
        let names: Vec<&String> = self.reflectances.keys().collect();
        let lookup = |name: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n.as_str() == name)
                .ok_or_else(|| Error::Config(format!("unknown reflectance {name:?}")))
        };
        let reflectances = self
            .reflectances
            .iter()
            .map(|(name, spec)| {
                build_reflectance(spec, grid, base_dir)
                    .map_err(|e| Error::Config(format!("reflectance {name:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut objects = Vec::with_capacity(self.objects.len());
        for spec in &self.objects {
            let obj = match spec {
                ObjectSpec::Plane {
                    axis,
                    offset,
                    bounds,
                    reflectance,
                } => SceneObject {
                    shape: Shape::Plane(AxisPlane {
                        axis: *axis,
                        offset: *offset,
                        bounds: *bounds,
                    }),
                    reflectance: ReflectanceMap::Uniform(lookup(reflectance)?),
                },
                ObjectSpec::Sphere {
                    center,
                    radius,
                    reflectance,
                } => SceneObject {
                    shape: Shape::Sphere {
                        center: Vector3::from(*center),
                        radius: *radius,
                    },
                    reflectance: ReflectanceMap::Uniform(lookup(reflectance)?),
                },
                ObjectSpec::Mesh {
                    path,
                    translation,
                    scale,
                    rotation_deg,
                    reflectance,
                    face_reflectances,
                } => {
                    let full = base_dir.join(path);
                    let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                    let rot = Rotation3::from_euler_angles(
                        rotation_deg[0].to_radians(),
                        rotation_deg[1].to_radians(),
                        rotation_deg[2].to_radians(),
                    );
                    let mesh = TriangleMesh::parse(&text)?.transformed(&rot, *scale, Vector3::from(*translation))?;
                    let reflectance = match face_reflectances {
                        Some(list) => ReflectanceMap::PerFace(list.iter().map(|n| lookup(n)).collect::<Result<_>>()?),
                        None => ReflectanceMap::Uniform(lookup(reflectance)?),
                    };
                    SceneObject {
                        shape: Shape::Mesh(mesh),
                        reflectance,
                    }
                }
            };
            objects.push(obj);
        }
        Scene::new(grid, reflectances, objects)
    }
}

fn build_reflectance(spec: &ReflectanceSpec, grid: WavelengthGrid, base_dir: &Path) -> Result<Spectrum> {
    match spec {
        ReflectanceSpec::Constant(v) => Spectrum::constant(grid, SpectrumKind::Reflectance, *v),
        ReflectanceSpec::Values(v) => Spectrum::reflectance(grid, v.clone()),
        ReflectanceSpec::Csv(p) => Spectrum::from_csv_path(&base_dir.join(p), grid, SpectrumKind::Reflectance),
        ReflectanceSpec::Gaussians(terms) => Spectrum::reflectance(grid, gaussian_mixture(&grid, terms)),
    }
}

/// Sum of Gaussian bumps clipped to `[0, 1]`.
pub fn gaussian_mixture(grid: &WavelengthGrid, terms: &[[f64; 3]]) -> Vec<f64> {
    grid.wavelengths()
        .map(|wl| {
            let s: f64 = terms
                .iter()
                .map(|[c, sigma, a]| {
                    let d = (wl - c) / sigma;
                    a * (-0.5 * d * d).exp()
                })
                .sum();
            s.clamp(0.0, 1.0)
        })
        .collect()
}

impl RectifiedRig {
    /// Unnormalized camera ray direction through pixel center `(u, v)`.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.principal_point[0]) / self.focal_px,
            (v - self.principal_point[1]) / self.focal_px,
            1.0,
        )
    }
}
