//! On-disk sample records.
//!
//! A record is a directory:
//!
//! | file              | contents                                       |
//! |-------------------|------------------------------------------------|
//! | `image.bin`       | camera RGB, 3 planes                           |
//! | `disparity.bin`   | 1 plane, pixels; NaN where nothing is hit      |
//! | `depth.bin`       | 1 plane, meters; NaN where nothing is hit      |
//! | `reflectance.bin` | one plane per band                             |
//! | `mask.bin`        | valid-pixel mask, bit-packed                   |
//! | `meta.json`       | [`SampleMeta`] plus the preview scale          |
//! | `image.png`       | 16-bit RGB preview, not read back              |
//!
//! Plane files start with a 16-byte little-endian header
//! `magic "CDPF", width u32, height u32, planes u32`, followed by planes
//! in order, each row-major, as little-endian IEEE-754 binary64. Mask files
//! use magic `"CDMK"` with `planes = 1` and pack pixels row-major, least
//! significant bit first, padded to a whole byte.
//!
//! The preview PNG stores `round(65535 · clamp(x / preview_scale, 0, 1))`
//! linearly (no gamma).

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask};
use crate::render::{Sample, SampleMeta};

pub const PLANE_MAGIC: [u8; 4] = *b"CDPF";
pub const MASK_MAGIC: [u8; 4] = *b"CDMK";
pub const HEADER_LEN: usize = 16;

pub const IMAGE_FILE: &str = "image.bin";
pub const IMAGE_PREVIEW_FILE: &str = "image.png";
pub const DISPARITY_FILE: &str = "disparity.bin";
pub const DEPTH_FILE: &str = "depth.bin";
pub const REFLECTANCE_FILE: &str = "reflectance.bin";
pub const MASK_FILE: &str = "mask.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileHeader {
    pub magic: [u8; 4],
    pub width: usize,
    pub height: usize,
    pub planes: usize,
}

fn encode_header(h: &FileHeader) -> Result<[u8; HEADER_LEN]> {
    let mut out = [0u8; HEADER_LEN];
    out[..4].copy_from_slice(&h.magic);
    for (i, v) in [h.width, h.height, h.planes].into_iter().enumerate() {
        let v = u32::try_from(v).map_err(|_| Error::Argument(format!("dimension {v} exceeds u32")))?;
        out[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_header(path: &Path, bytes: &[u8], magic: [u8; 4]) -> Result<FileHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(&magic)
            ),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    Ok(FileHeader {
        magic,
        width: word(0),
        height: word(1),
        planes: word(2),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Serializes an image as planar binary64 with a `CDPF` header.
pub fn encode_planes(img: &ImagePlane) -> Result<Vec<u8>> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let header = encode_header(&FileHeader {
        magic: PLANE_MAGIC,
        width: w,
        height: h,
        planes: c,
    })?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * w * h * c);
    out.extend_from_slice(&header);
    for p in 0..c {
        for v in 0..h {
            for u in 0..w {
                out.extend_from_slice(&img.get(u, v, p).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Inverse of [`encode_planes`]; `path` only labels errors.
pub fn decode_planes(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    let h = decode_header(path, bytes, PLANE_MAGIC)?;
    let plane_len = 8 * h.width * h.height;
    let body = &bytes[HEADER_LEN..];
    if plane_len == 0 || h.planes == 0 {
        return Err(Error::format(
            path,
            format!("empty array {}x{}x{}", h.width, h.height, h.planes),
        ));
    }
    let expected = plane_len * h.planes;
    if body.len() < expected {
        let plane = body.len() / plane_len;
        return Err(Error::format(
            path,
            format!(
                "truncated in plane {plane} of {}: {} of {expected} data bytes",
                h.planes,
                body.len()
            ),
        ));
    }
    if body.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after {} planes", body.len() - expected, h.planes),
        ));
    }
    let mut img = ImagePlane::new(h.width, h.height, h.planes);
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let p = i / (h.width * h.height);
        let rest = i % (h.width * h.height);
        let value = f64::from_le_bytes(chunk.try_into().unwrap());
        img.set(rest % h.width, rest / h.width, p, value);
    }
    Ok(img)
}

pub fn write_plane_file(path: &Path, img: &ImagePlane) -> Result<()> {
    write_file(path, &encode_planes(img)?)
}

pub fn read_plane_file(path: &Path) -> Result<ImagePlane> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_planes(path, &bytes)
}

pub fn encode_mask(mask: &Mask) -> Result<Vec<u8>> {
    let header = encode_header(&FileHeader {
        magic: MASK_MAGIC,
        width: mask.width(),
        height: mask.height(),
        planes: 1,
    })?;
    let mut out = header.to_vec();
    out.resize(HEADER_LEN + mask.data().len().div_ceil(8), 0);
    for (i, &b) in mask.data().iter().enumerate() {
        if b {
            out[HEADER_LEN + i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

pub fn decode_mask(path: &Path, bytes: &[u8]) -> Result<Mask> {
    let h = decode_header(path, bytes, MASK_MAGIC)?;
    if h.planes != 1 {
        return Err(Error::format(path, format!("mask must have 1 plane, header says {}", h.planes)));
    }
    let n = h.width * h.height;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n.div_ceil(8) {
        return Err(Error::format(
            path,
            format!("mask body is {} bytes, expected {}", body.len(), n.div_ceil(8)),
        ));
    }
    let data = (0..n).map(|i| body[i / 8] & (1 << (i % 8)) != 0).collect();
    Mask::from_vec(h.width, h.height, data)
}

pub fn write_mask_file(path: &Path, mask: &Mask) -> Result<()> {
    write_file(path, &encode_mask(mask)?)
}

pub fn read_mask_file(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordMeta {
    #[serde(flatten)]
    sample: SampleMeta,
    preview_scale: f64,
}

fn write_preview(path: &Path, img: &ImagePlane, scale: f64) -> Result<()> {
    let buf: Vec<u16> = img
        .data()
        .iter()
        .map(|&x| {
            let t = if x.is_finite() { (x / scale).clamp(0.0, 1.0) } else { 0.0 };
            (t * 65535.0).round() as u16
        })
        .collect();
    let png = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(img.width() as u32, img.height() as u32, buf)
        .ok_or_else(|| Error::format(path, "preview buffer size"))?;
    png.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Writes every array of `sample` into `dir` (created if missing).
pub fn save_sample(dir: &Path, sample: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if sample.image.channels() != 3 {
        return Err(Error::Dimension(format!(
            "sample image must have 3 channels, got {}",
            sample.image.channels()
        )));
    }
    write_plane_file(&dir.join(IMAGE_FILE), &sample.image)?;
    write_plane_file(&dir.join(DISPARITY_FILE), &sample.disparity)?;
    write_plane_file(&dir.join(DEPTH_FILE), &sample.depth)?;
    write_plane_file(&dir.join(REFLECTANCE_FILE), &sample.reflectance)?;
    write_mask_file(&dir.join(MASK_FILE), &sample.mask)?;
    let max = sample.image.max_value();
    let preview_scale = if max.is_finite() && max > 0.0 { max } else { 1.0 };
    write_preview(&dir.join(IMAGE_PREVIEW_FILE), &sample.image, preview_scale)?;
    let meta = RecordMeta {
        sample: sample.meta.clone(),
        preview_scale,
    };
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    write_file(&dir.join(META_FILE), text.as_bytes())
}

fn check_shape(path: &Path, img: &ImagePlane, meta: &SampleMeta, planes: usize) -> Result<()> {
    if img.width() != meta.width || img.height() != meta.height {
        return Err(Error::format(
            path,
            format!(
                "header says {}x{} but meta.json says {}x{}",
                img.width(),
                img.height(),
                meta.width,
                meta.height
            ),
        ));
    }
    if img.channels() != planes {
        return Err(Error::format(
            path,
            format!("{} planes, expected {planes}", img.channels()),
        ));
    }
    Ok(())
}

pub fn load_sample_meta(dir: &Path) -> Result<SampleMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: RecordMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if meta.sample.format != 1 {
        return Err(Error::format(&path, format!("unsupported format {}", meta.sample.format)));
    }
    Ok(meta.sample)
}

/// Loads a record, checking every header against `meta.json`.
pub fn load_sample(dir: &Path) -> Result<Sample> {
    let meta = load_sample_meta(dir)?;
    let load = |name: &str, planes: usize| -> Result<ImagePlane> {
        let path = dir.join(name);
        let img = read_plane_file(&path)?;
        check_shape(&path, &img, &meta, planes)?;
        Ok(img)
    };
    let image = load(IMAGE_FILE, 3)?;
    let disparity = load(DISPARITY_FILE, 1)?;
    let depth = load(DEPTH_FILE, 1)?;
    let reflectance = load(REFLECTANCE_FILE, meta.grid.band_count)?;
    let mask_path = dir.join(MASK_FILE);
    let mask = read_mask_file(&mask_path)?;
    if mask.width() != meta.width || mask.height() != meta.height {
        return Err(Error::format(
            &mask_path,
            format!(
                "header says {}x{} but meta.json says {}x{}",
                mask.width(),
                mask.height(),
                meta.width,
                meta.height
            ),
        ));
    }
    Ok(Sample {
        image,
        disparity,
        depth,
        reflectance,
        mask,
        meta,
    })
}

/// Predicted disparity and reflectance, in the same plane format.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub disparity: ImagePlane,
    /// Written when present; otherwise derived from disparity on load.
    pub depth: Option<ImagePlane>,
    pub reflectance: ImagePlane,
}

pub fn save_prediction(dir: &Path, pred: &Prediction) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_plane_file(&dir.join(DISPARITY_FILE), &pred.disparity)?;
    if let Some(depth) = &pred.depth {
        write_plane_file(&dir.join(DEPTH_FILE), depth)?;
    }
    write_plane_file(&dir.join(REFLECTANCE_FILE), &pred.reflectance)
}

pub fn load_prediction(dir: &Path) -> Result<Prediction> {
    let disparity = read_plane_file(&dir.join(DISPARITY_FILE))?;
    let depth_path = dir.join(DEPTH_FILE);
    let depth = if depth_path.exists() {
        Some(read_plane_file(&depth_path)?)
    } else {
        None
    };
    let reflectance = read_plane_file(&dir.join(REFLECTANCE_FILE))?;
    Ok(Prediction {
        disparity,
        depth,
        reflectance,
    })
}

/// Record directories `<root>/<index:05>`.
pub fn record_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("{index:05}"))
}
