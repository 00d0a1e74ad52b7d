//! PNG/JPEG image loading, 8-bit output encoding, integer-divisor area
//! downsampling, and the raw little-endian depth-map format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imagebuf::{ImageBuf, ScalarMap};
use crate::math::Real;
use crate::projection::CameraModel;

/// Loads an 8-bit image into [0, 1] values (no color-space conversion).
pub fn load_image<T: Real>(path: &Path) -> Result<ImageBuf<T>> {
    let img = image::open(path)
        .map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageBuf::new(w, h);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out.data[i * 3 + c] = T::of(px.0[c] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Writes sRGB bytes `round(clamp(v, 0, 1) * 255)`.
pub fn save_png<T: Real>(img: &ImageBuf<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len());
    for &v in &img.data {
        let b = (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        bytes.push(b);
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, bytes)
            .expect("buffer size matches dimensions");
    buf.save(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Area-mean downsampling by an integer divisor. Output dimensions are the
/// floor quotient; trailing partial blocks average over their actual pixels.
pub fn downsample<T: Real>(img: &ImageBuf<T>, divisor: usize) -> ImageBuf<T> {
    if divisor <= 1 {
        return img.clone();
    }
    let ow = (img.width / divisor).max(1);
    let oh = (img.height / divisor).max(1);
    let mut out = ImageBuf::new(ow, oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let x1 = if ox == ow - 1 { img.width } else { (ox + 1) * divisor };
            let y1 = if oy == oh - 1 { img.height } else { (oy + 1) * divisor };
            let mut acc = [0.0f64; 3];
            let mut count = 0usize;
            for y in oy * divisor..y1 {
                for x in ox * divisor..x1 {
                    let i = (y * img.width + x) * 3;
                    for c in 0..3 {
                        acc[c] += img.data[i + c].to_f64();
                    }
                    count += 1;
                }
            }
            let i = (oy * ow + ox) * 3;
            for c in 0..3 {
                out.data[i + c] = T::of(acc[c] / count as f64);
            }
        }
    }
    out
}

/// Rescales intrinsics for an image downsampled by `divisor`.
pub fn scale_camera<T: Real>(cam: &CameraModel<T>, divisor: usize) -> CameraModel<T> {
    if divisor <= 1 {
        return cam.clone();
    }
    let d = T::of_usize(divisor);
    let mut out = cam.clone();
    out.fx = cam.fx / d;
    out.fy = cam.fy / d;
    out.cx = cam.cx / d;
    out.cy = cam.cy / d;
    out.width = (cam.width / divisor).max(1);
    out.height = (cam.height / divisor).max(1);
    out
}

/// Raw depth map format: magic `PVDF`, u32 version, u32 width, u32 height
/// (little endian), then `width * height` f32 values row-major. Pixels that
/// never crossed the 0.5 cumulative-opacity threshold hold -1.
pub const DEPTH_MAGIC: &[u8; 4] = b"PVDF";
pub const DEPTH_VERSION: u32 = 1;

pub fn save_depth<T: Real>(map: &ScalarMap<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + map.data.len() * 4);
    bytes.extend_from_slice(DEPTH_MAGIC);
    bytes.extend_from_slice(&DEPTH_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(map.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.height as u32).to_le_bytes());
    for &v in &map.data {
        bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: &Path) -> Result<ScalarMap<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::CheckpointMismatch(format!(
            "{}: not a depth file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DEPTH_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "unsupported depth version {version}"
        )));
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + width * height * 4;
    if bytes.len() < need {
        return Err(Error::CheckpointMismatch("depth payload truncated".into()));
    }
    let data = bytes[16..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ScalarMap {
        width,
        height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use approx::assert_relative_eq;

    #[test]
    fn white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        let img = ImageBuf::<f64>::filled(4, 4, Vec3::splat(1.0));
        save_png(&img, &path).unwrap();
        let loaded: ImageBuf<f64> = load_image(&path).unwrap();
        assert!(loaded.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn decode_failure_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not an image").unwrap();
        let err = load_image::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn downsample_examples() {
        // Constant image stays constant.
        let img = ImageBuf::<f64>::filled(4, 4, Vec3::splat(0.7));
        let out = downsample(&img, 2);
        assert_eq!((out.width, out.height), (2, 2));
        assert!(out.data.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        // 2x2 image with half zeros and half ones averages to 0.5.
        let mut img = ImageBuf::<f64>::new(2, 2);
        img.set(0, 0, Vec3::splat(0.0));
        img.set(1, 0, Vec3::splat(0.0));
        img.set(0, 1, Vec3::splat(1.0));
        img.set(1, 1, Vec3::splat(1.0));
        let out = downsample(&img, 2);
        assert_eq!((out.width, out.height), (1, 1));
        assert_relative_eq!(out.get(0, 0).x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn depth_roundtrip() {
        let map = ScalarMap::<f64> {
            width: 3,
            height: 2,
            data: vec![1.5, -1.0, 0.25, 9.0, 2.5, -1.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_depth(&map, &path).unwrap();
        let loaded = load_depth(&path).unwrap();
        assert_eq!((loaded.width, loaded.height), (3, 2));
        assert_eq!(loaded.data[0], 1.5);
        assert_eq!(loaded.data[1], -1.0);
    }

    #[test]
    fn camera_scaling_halves_intrinsics() {
        let cam = CameraModel::<f64> {
            fx: 100.0,
            fy: 80.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
            rotation: crate::math::Mat3::identity(),
            translation: Vec3::zero(),
            znear: 0.01,
        };
        let s = scale_camera(&cam, 2);
        assert_eq!(s.fx, 50.0);
        assert_eq!(s.cx, 16.0);
        assert_eq!((s.width, s.height), (32, 24));
    }
}
