//! Seeded random scene generation and batch rendering.

use std::path::PathBuf;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{generate_pattern, DotPattern};
use crate::rng::child_seed;
use crate::spectral::{read_spectra_csv, CameraSensitivity, ProjectorPrimaries, Spectrum, SpectrumKind, WavelengthGrid};

use super::scene::gaussian_mixture;
use super::{
    render_scene_with, Axis, AxisPlane, RectifiedRig, ReflectanceMap, RenderOptions, Sample, Scene, SceneObject,
    Shape, TriangleMesh,
};

/// Where scene reflectances are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Smooth random curves, see [`synthetic_reflectance_corpus`].
    Synthetic { count: usize, seed: u64 },
    /// Wide CSV `wavelength_nm,<name>,...`, one reflectance per column.
    Csv { path: PathBuf },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic { count: 256, seed: 1 }
    }
}

impl CorpusSource {
    pub fn load(&self, grid: WavelengthGrid) -> Result<Vec<Spectrum>> {
        match self {
            CorpusSource::Synthetic { count, seed } => synthetic_reflectance_corpus(grid, *count, *seed),
            CorpusSource::Csv { path } => {
                let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                Ok(read_spectra_csv(file, grid, SpectrumKind::Reflectance)?
                    .into_iter()
                    .map(|(_, s)| s)
                    .collect())
            }
        }
    }
}

fn format_one() -> u32 {
    1
}

fn default_depth_range() -> [f64; 2] {
    [0.3, 1.0]
}

fn default_objects() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(default = "format_one")]
    pub format: u32,
    pub scene_count: usize,
    #[serde(default)]
    pub rig: RectifiedRig,
    #[serde(default)]
    pub grid: WavelengthGrid,
    /// Every rendered surface lies within this depth interval (meters).
    #[serde(default = "default_depth_range")]
    pub depth_range_m: [f64; 2],
    #[serde(default = "default_objects")]
    pub objects_per_scene: usize,
    #[serde(default)]
    pub corpus: CorpusSource,
    #[serde(default)]
    pub seed: u64,
    /// Shared projector pattern; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_seed: Option<u64>,
    #[serde(default)]
    pub noise_std: f64,
}

impl DatasetConfig {
    pub fn new(scene_count: usize, rig: RectifiedRig, seed: u64) -> Self {
        Self {
            format: 1,
            scene_count,
            rig,
            grid: WavelengthGrid::default(),
            depth_range_m: default_depth_range(),
            objects_per_scene: default_objects(),
            corpus: CorpusSource::default(),
            seed,
            pattern_seed: None,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene_count == 0 {
            return Err(Error::Config("scene_count must be >= 1".into()));
        }
        let [lo, hi] = self.depth_range_m;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid depth range {lo}..{hi}")));
        }
        self.rig.validate()
    }
}

/// Smooth reflectances: each a sum of three Gaussian bumps (centre
/// 400–680 nm, width 15–80 nm, amplitude 0.05–0.6), clipped to `[0, 1]`.
pub fn synthetic_reflectance_corpus(grid: WavelengthGrid, count: usize, seed: u64) -> Result<Vec<Spectrum>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let terms: Vec<[f64; 3]> = (0..3)
                .map(|_| {
                    [
                        rng.random_range(400.0..680.0),
                        rng.random_range(15.0..80.0),
                        rng.random_range(0.05..0.6),
                    ]
                })
                .collect();
            Spectrum::reflectance(grid, gaussian_mixture(&grid, &terms))
        })
        .collect()
}

fn random_scene(config: &DatasetConfig, corpus: &[Spectrum], rng: &mut ChaCha8Rng) -> Result<Scene> {
    let rig = &config.rig;
    let [z_lo, z_hi] = config.depth_range_m;
    let span = z_hi - z_lo;
    let mut reflectances = Vec::new();
    let mut pick = |rng: &mut ChaCha8Rng| {
        reflectances.push(corpus[rng.random_range(0..corpus.len())].clone());
        reflectances.len() - 1
    };

    let background_z = rng.random_range(z_lo + 0.75 * span..=z_hi);
    let mut objects = vec![SceneObject {
        shape: Shape::Plane(AxisPlane {
            axis: Axis::Z,
            offset: background_z,
            bounds: None,
        }),
        reflectance: ReflectanceMap::Uniform(pick(rng)),
    }];

    for _ in 0..config.objects_per_scene {
        let is_sphere = rng.random_bool(0.5);
        let size = rng.random_range(0.02..0.07_f64).min(0.2 * span);
        // bounding radius of the object around its centre
        let extent = if is_sphere { size } else { size * 3f64.sqrt() };
        let (zc_lo, zc_hi) = (z_lo + extent, background_z - extent);
        if zc_hi <= zc_lo {
            continue;
        }
        let zc = rng.random_range(zc_lo..zc_hi);
        let u = rng.random_range(0.1..0.9) * rig.width as f64;
        let v = rng.random_range(0.1..0.9) * rig.height as f64;
        let center = rig.unproject(u, v, zc);
        let obj = if is_sphere {
            SceneObject {
                shape: Shape::Sphere { center, radius: size },
                reflectance: ReflectanceMap::Uniform(pick(rng)),
            }
        } else {
            let rot = Rotation3::from_euler_angles(
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            let mesh = TriangleMesh::cuboid(Vector3::zeros(), Vector3::repeat(size))?.transformed(&rot, 1.0, center)?;
            // one reflectance per box side (two triangles each)
            let sides: Vec<usize> = (0..6).map(|_| pick(rng)).collect();
            SceneObject {
                shape: Shape::Mesh(mesh),
                reflectance: ReflectanceMap::PerFace(sides.iter().flat_map(|&s| [s, s]).collect()),
            }
        };
        objects.push(obj);
    }
    Scene::new(config.grid, reflectances, objects)
}

/// Shared state for rendering the scenes of one dataset config: the
/// reflectance corpus, default spectra, and the single projected pattern.
#[derive(Debug, Clone)]
pub struct DatasetRenderer {
    config: DatasetConfig,
    corpus: Vec<Spectrum>,
    primaries: ProjectorPrimaries,
    sensitivity: CameraSensitivity,
    pattern: DotPattern,
}

impl DatasetRenderer {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let corpus = config.corpus.load(config.grid)?;
        if corpus.is_empty() {
            return Err(Error::Config("reflectance corpus is empty".into()));
        }
        Ok(Self {
            config: config.clone(),
            corpus,
            primaries: ProjectorPrimaries::default_for(config.grid)?,
            sensitivity: CameraSensitivity::default_for(config.grid)?,
            pattern: generate_pattern(
                config.rig.width,
                config.rig.height,
                config.pattern_seed.unwrap_or(config.seed),
            )?,
        })
    }

    pub fn pattern(&self) -> &DotPattern {
        &self.pattern
    }

    pub fn len(&self) -> usize {
        self.config.scene_count
    }

    pub fn is_empty(&self) -> bool {
        self.config.scene_count == 0
    }

    /// Scene `index`, seeded by `child_seed(seed, index)`; independent of
    /// which other scenes are rendered.
    pub fn render(&self, index: usize) -> Result<Sample> {
        let scene_seed = child_seed(self.config.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
        let scene = random_scene(&self.config, &self.corpus, &mut rng)?;
        let options = RenderOptions {
            noise_std: self.config.noise_std,
            seed: scene_seed,
        };
        render_scene_with(
            &scene,
            &self.config.rig,
            &self.pattern,
            &self.primaries,
            &self.sensitivity,
            &options,
        )
    }
}

/// Renders `scene_count` random scenes under one shared pattern, with the
/// default projector primaries and camera sensitivity on the config grid.
/// Deterministic in the config (including its seed).
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Sample>> {
    let renderer = DatasetRenderer::new(config)?;
    (0..renderer.len()).map(|i| renderer.render(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_reflectance_and_seeded() {
        let g = WavelengthGrid::default();
        let a = synthetic_reflectance_corpus(g, 20, 3).unwrap();
        let b = synthetic_reflectance_corpus(g, 20, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.values().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn empty_corpus_is_config_error() {
        let mut cfg = DatasetConfig::new(1, RectifiedRig::default().with_resolution(32, 24), 1);
        cfg.corpus = CorpusSource::Synthetic { count: 0, seed: 1 };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        cfg.corpus = CorpusSource::default();
        cfg.scene_count = 0;
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn csv_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chips.csv");
        std::fs::write(&path, "wavelength_nm,a,b\n400,0.1,0.9\n700,0.2,0.8\n").unwrap();
        let corpus = CorpusSource::Csv { path }.load(WavelengthGrid::default()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert!((corpus[1].values()[0] - (0.9 - 0.1 * 10.0 / 300.0)).abs() < 1e-12);
    }
}
