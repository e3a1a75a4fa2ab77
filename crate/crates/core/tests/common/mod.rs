#![allow(dead_code)]

use colordot::basis::{build_system_matrix, fit_basis, BasisModel, SystemMatrix};
use colordot::pattern::{generate_pattern, DotPattern};
use colordot::render::{
    render_scene, synthetic_reflectance_corpus, Axis, AxisPlane, RectifiedRig, ReflectanceMap, Sample, Scene,
    SceneObject, Shape,
};
use colordot::spectral::{CameraSensitivity, ProjectorPrimaries, Spectrum, SpectrumKind, WavelengthGrid};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid() -> WavelengthGrid {
    WavelengthGrid::default()
}

pub fn sensitivity() -> CameraSensitivity {
    CameraSensitivity::default_for(grid()).unwrap()
}

pub fn primaries() -> ProjectorPrimaries {
    ProjectorPrimaries::default_for(grid()).unwrap()
}

pub fn system() -> SystemMatrix {
    build_system_matrix(&sensitivity(), &primaries()).unwrap()
}

pub fn basis() -> BasisModel {
    fit_basis(&synthetic_reflectance_corpus(grid(), 256, 1).unwrap(), 8).unwrap()
}

pub fn flat(value: f64) -> Spectrum {
    Spectrum::constant(grid(), SpectrumKind::Reflectance, value).unwrap()
}

pub fn plane(z: f64) -> SceneObject {
    SceneObject {
        shape: Shape::Plane(AxisPlane {
            axis: Axis::Z,
            offset: z,
            bounds: None,
        }),
        reflectance: ReflectanceMap::Uniform(0),
    }
}

pub fn plane_scene(z: f64, reflectance: Spectrum) -> Scene {
    Scene::new(*reflectance.grid(), vec![reflectance], vec![plane(z)]).unwrap()
}

pub fn small_rig(width: usize, height: usize) -> RectifiedRig {
    RectifiedRig::default().with_resolution(width, height)
}

pub fn render(scene: &Scene, rig: &RectifiedRig, pattern_seed: u64) -> (Sample, DotPattern) {
    let pattern = generate_pattern(rig.width, rig.height, pattern_seed).unwrap();
    let sample = render_scene(scene, rig, &pattern, &primaries(), &sensitivity()).unwrap();
    (sample, pattern)
}

/// `mean + B·γ` with small random `γ`, resampled until inside `[0, 1]`.
pub fn in_span(basis: &BasisModel, rng: &mut ChaCha8Rng) -> Spectrum {
    loop {
        let gamma = DVector::from_fn(basis.k(), |_, _| rng.random_range(-0.05..0.05));
        let values = basis.synthesize(&gamma).unwrap();
        if values.iter().all(|&x| (0.0..=1.0).contains(&x)) {
            return Spectrum::reflectance(*basis.grid(), values).unwrap();
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dimensions and values, including NaN, −0 and infinities.
pub fn random_sample(seed: u64) -> Sample {
    let mut r = rng(seed);
    let w = r.random_range(1..24);
    let h = r.random_range(1..18);
    let plane = |ch: usize, r: &mut ChaCha8Rng| {
        let data = (0..w * h * ch)
            .map(|_| match r.random_range(0..20) {
                0 => f64::NAN,
                1 => -0.0,
                2 => f64::INFINITY,
                _ => r.random::<f64>() * 10f64.powi(r.random_range(-8..8)),
            })
            .collect();
        colordot::image::ImagePlane::from_vec(w, h, ch, data).unwrap()
    };
    let image = plane(3, &mut r);
    let disparity = plane(1, &mut r);
    let depth = plane(1, &mut r);
    let reflectance = plane(27, &mut r);
    let mask = colordot::image::Mask::from_fn(w, h, |u, v| (mix(seed, u, v)) % 3 != 0);
    Sample {
        image,
        disparity,
        depth,
        reflectance,
        mask,
        meta: colordot::render::SampleMeta {
            format: 1,
            width: w,
            height: h,
            grid: grid(),
            rig: RectifiedRig::default().with_resolution(w, h),
            seed,
            pattern_seed: seed ^ 0xabc,
            noise_std: 0.0,
        },
    }
}

pub fn mix(seed: u64, u: usize, v: usize) -> u64 {
    colordot::rng::mix64(seed ^ ((u as u64) << 20) ^ v as u64)
}

pub fn bits(p: &colordot::image::ImagePlane) -> Vec<u64> {
    p.data().iter().map(|x| x.to_bits()).collect()
}

/// Path to a config shipped in the workspace `configs/` directory.
pub fn config(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn cli(args: &[&std::ffi::OsStr]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_colordot"))
        .args(args)
        .output()
        .expect("spawn colordot")
}

/// Runs the CLI and panics with its stderr on a nonzero exit.
pub fn cli_ok(args: &[&std::ffi::OsStr]) -> std::process::Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "colordot {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// `OsStr` argument list from mixed string and path pieces.
#[macro_export]
macro_rules! args {
    ($($a:expr),* $(,)?) => {
        &[$(::std::ffi::OsStr::new(&$a)),*]
    };
}
