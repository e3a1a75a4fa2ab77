//! ASCII PLY point clouds from depth maps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, Mask};
use crate::render::RectifiedRig;

/// Unprojects each masked pixel through the pinhole camera,
/// `x = (u − cx)·Z/f`, `y = (v − cy)·Z/f`, `z = Z`, colored by `colors`
/// (3 channels in `[0, 1]`, scaled to 8 bits).
pub fn export_point_cloud(depth: &ImagePlane, rig: &RectifiedRig, colors: &ImagePlane, mask: &Mask) -> Result<String> {
    if depth.channels() != 1 || colors.channels() != 3 {
        return Err(Error::Dimension(format!(
            "expected 1-channel depth and 3-channel colors, got {} and {}",
            depth.channels(),
            colors.channels()
        )));
    }
    depth.check_same_dims(colors, "export_point_cloud colors")?;
    mask.check_dims(depth.width(), depth.height(), "export_point_cloud mask")?;
    let [cx, cy] = rig.principal_point;
    let f = rig.focal_px;
    let mut body = String::new();
    let mut count = 0usize;
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            if !mask.get(u, v) {
                continue;
            }
            let z = depth.get(u, v, 0);
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Domain(format!("invalid depth {z} at ({u}, {v})")));
            }
            let x = (u as f64 - cx) * z / f;
            let y = (v as f64 - cy) * z / f;
            let rgb = colors.pixel(u, v).iter().map(|&c| {
                let c = if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 };
                (c * 255.0).round() as u8
            });
            let _ = write!(body, "{x:?} {y:?} {z:?}");
            for c in rgb {
                let _ = write!(body, " {c}");
            }
            body.push('\n');
            count += 1;
        }
    }
    let header = format!(
        "ply\nformat ascii 1.0\nelement vertex {count}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    );
    Ok(header + &body)
}

pub fn write_point_cloud(path: &Path, ply: &str) -> Result<()> {
    std::fs::write(path, ply).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertices(ply: &str) -> Vec<Vec<f64>> {
        let body = ply.split("end_header\n").nth(1).unwrap();
        body.lines()
            .map(|l| l.split(' ').map(|t| t.parse().unwrap()).collect())
            .collect()
    }

    #[test]
    fn center_pixel_on_axis() {
        let rig = RectifiedRig::default();
        let depth = ImagePlane::filled(640, 480, 1, 1.0);
        let colors = ImagePlane::filled(640, 480, 3, 1.0);
        let mask = Mask::from_fn(640, 480, |u, v| (u, v) == (320, 240));
        let ply = export_point_cloud(&depth, &rig, &colors, &mask).unwrap();
        assert!(ply.contains("element vertex 1\n"));
        assert_eq!(vertices(&ply), vec![vec![0.0, 0.0, 1.0, 255.0, 255.0, 255.0]]);
    }

    #[test]
    fn plane_and_vertex_count() {
        let rig = RectifiedRig::default().with_resolution(20, 10);
        let depth = ImagePlane::filled(20, 10, 1, 0.5);
        let colors = ImagePlane::new(20, 10, 3);
        let mask = Mask::from_fn(20, 10, |u, v| (u + v) % 3 != 0);
        let verts = vertices(&export_point_cloud(&depth, &rig, &colors, &mask).unwrap());
        assert_eq!(verts.len(), mask.count());
        assert!(verts.iter().all(|p| (p[2] - 0.5).abs() < 1e-9));
    }

    #[test]
    fn invalid_depth_on_mask() {
        let rig = RectifiedRig::default().with_resolution(2, 2);
        let depth = ImagePlane::filled(2, 2, 1, f64::NAN);
        let colors = ImagePlane::new(2, 2, 3);
        assert!(export_point_cloud(&depth, &rig, &colors, &Mask::filled(2, 2, true)).is_err());
        let ply = export_point_cloud(&depth, &rig, &colors, &Mask::filled(2, 2, false)).unwrap();
        assert!(ply.contains("element vertex 0\n"));
    }
}
