//! Random color-dot pattern and its per-pixel illumination spectra.
//!
//! Every projector pixel independently carries one of three labels, one
//! per projector primary. Label `i` of a `width × height` pattern with seed
//! `s` is `floor(3 · u)` where `u` is draw `i` (row-major pixel index) of the
//! counter-based generator in [`crate::rng`]; the mapping 0→R, 1→G, 2→B.
//!
//! On disk a pattern is an 8-bit RGB PNG with the labelled channel at 255
//! and the others at 0 (R→(255,0,0), G→(0,255,0), B→(0,0,255)), plus a JSON
//! sidecar `{format, width, height, seed}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::rng;
use crate::spectral::{ProjectorPrimaries, Spectrum, WavelengthGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DotLabel {
    R,
    G,
    B,
}

impl DotLabel {
    pub const ALL: [DotLabel; 3] = [DotLabel::R, DotLabel::G, DotLabel::B];

    pub fn index(self) -> usize {
        match self {
            DotLabel::R => 0,
            DotLabel::G => 1,
            DotLabel::B => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// One-hot code word in (R, G, B) channel order.
    pub fn one_hot(self) -> [u8; 3] {
        let mut c = [0u8; 3];
        c[self.index()] = 1;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotPattern {
    width: usize,
    height: usize,
    seed: u64,
    labels: Vec<DotLabel>,
}

/// Draws a uniformly random label for every pixel; deterministic per
/// `(width, height, seed)`.
pub fn generate_pattern(width: usize, height: usize, seed: u64) -> Result<DotPattern> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "pattern dimensions must be >= 1, got {width}x{height}"
        )));
    }
    let labels = (0..(width * height) as u64)
        .map(|i| {
            let k = (3.0 * rng::draw_unit(seed, i)) as usize;
            DotLabel::ALL[k.min(2)]
        })
        .collect();
    Ok(DotPattern {
        width,
        height,
        seed,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSidecar {
    pub format: u32,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl DotPattern {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &[DotLabel] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, u: usize, v: usize) -> DotLabel {
        self.labels[v * self.width + u]
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    /// 3-channel image with +1 on the labelled channel and −1 elsewhere,
    /// the zero-mean coding compared against LCN images.
    pub fn to_signed_plane(&self) -> ImagePlane {
        ImagePlane::from_fn(self.width, self.height, 3, |u, v, c| {
            if self.label(u, v).index() == c {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn sidecar(&self) -> PatternSidecar {
        PatternSidecar {
            format: 1,
            width: self.width,
            height: self.height,
            seed: self.seed,
        }
    }

    /// Sidecar path for a pattern PNG: `p.png` → `p.json`.
    pub fn sidecar_path(png: &Path) -> PathBuf {
        png.with_extension("json")
    }

    /// Writes the PNG and its JSON sidecar.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.labels.len() * 3);
        for l in &self.labels {
            buf.extend(l.one_hot().iter().map(|b| b * 255));
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .ok_or_else(|| Error::format(path, "pattern buffer size"))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        let sidecar = serde_json::to_string_pretty(&self.sidecar())?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, sidecar + "\n").map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    /// Loads a pattern PNG, checks each pixel is a one-hot code, and checks
    /// it agrees with regeneration from the sidecar seed.
    pub fn load_png(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PatternSidecar = serde_json::from_str(&text)?;
        if meta.format != 1 {
            return Err(Error::format(&side, format!("unsupported format {}", meta.format)));
        }
        let img = image::open(path)?;
        let img = match img {
            image::DynamicImage::ImageRgb8(i) => i,
            other => {
                return Err(Error::format(
                    path,
                    format!("expected 8-bit RGB, found {:?}", other.color()),
                ))
            }
        };
        if img.width() as usize != meta.width || img.height() as usize != meta.height {
            return Err(Error::format(
                path,
                format!(
                    "png is {}x{} but sidecar says {}x{}",
                    img.width(),
                    img.height(),
                    meta.width,
                    meta.height
                ),
            ));
        }
        let mut labels = Vec::with_capacity(meta.width * meta.height);
        for (i, px) in img.pixels().enumerate() {
            let label = match px.0 {
                [255, 0, 0] => DotLabel::R,
                [0, 255, 0] => DotLabel::G,
                [0, 0, 255] => DotLabel::B,
                other => {
                    return Err(Error::format(
                        path,
                        format!("pixel {i} is not a one-hot code: {other:?}"),
                    ))
                }
            };
            labels.push(label);
        }
        let loaded = DotPattern {
            width: meta.width,
            height: meta.height,
            seed: meta.seed,
            labels,
        };
        let regenerated = generate_pattern(meta.width, meta.height, meta.seed)?;
        if regenerated != loaded {
            return Err(Error::format(
                path,
                format!("png disagrees with regeneration from seed {}", meta.seed),
            ));
        }
        Ok(loaded)
    }
}

/// Per-pixel illumination spectra `L_pat`: each pixel refers to one of the
/// three primaries.
#[derive(Debug, Clone)]
pub struct IlluminationField {
    pattern: DotPattern,
    primaries: ProjectorPrimaries,
}

pub fn pattern_to_illumination(pattern: &DotPattern, primaries: &ProjectorPrimaries) -> IlluminationField {
    IlluminationField {
        pattern: pattern.clone(),
        primaries: primaries.clone(),
    }
}

impl IlluminationField {
    pub fn width(&self) -> usize {
        self.pattern.width
    }

    pub fn height(&self) -> usize {
        self.pattern.height
    }

    pub fn grid(&self) -> &WavelengthGrid {
        self.primaries.grid()
    }

    pub fn spectrum_at(&self, u: usize, v: usize) -> &Spectrum {
        self.primaries.get(self.pattern.label(u, v).index())
    }

    /// Dense `N_λ`-channel image of the field.
    pub fn to_plane(&self) -> ImagePlane {
        let bands = self.grid().band_count;
        ImagePlane::from_fn(self.width(), self.height(), bands, |u, v, k| {
            self.spectrum_at(u, v).values()[k]
        })
    }
}
