//! COLMAP text-format reader: `cameras.txt`, `images.txt`, `points3D.txt`.
//!
//! Pinhole and simple-pinhole camera models are accepted. Poses are stored
//! by COLMAP as world-to-camera quaternion (w, x, y, z) plus translation,
//! which maps directly onto [`CameraModel`].

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::math::{Quat, Real, Vec3};
use crate::projection::CameraModel;

use super::{Intrinsics, SfmScene, View};

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<F: std::str::FromStr>(
    path: &Path,
    line: usize,
    tokens: &[&str],
    idx: usize,
    what: &str,
) -> Result<F> {
    tokens
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing {what}")))?
        .parse::<F>()
        .map_err(|_| parse_err(path, line, format!("invalid {what} '{}'", tokens[idx])))
}

fn load_cameras(path: &Path) -> Result<Vec<Intrinsics>> {
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let id: u64 = field(path, line, &tokens, 0, "camera id")?;
        let model: String = field(path, line, &tokens, 1, "camera model")?;
        let width: usize = field(path, line, &tokens, 2, "width")?;
        let height: usize = field(path, line, &tokens, 3, "height")?;
        let (fx, fy, cx, cy) = match model.as_str() {
            "PINHOLE" => (
                field(path, line, &tokens, 4, "fx")?,
                field(path, line, &tokens, 5, "fy")?,
                field(path, line, &tokens, 6, "cx")?,
                field(path, line, &tokens, 7, "cy")?,
            ),
            "SIMPLE_PINHOLE" => {
                let f: f64 = field(path, line, &tokens, 4, "focal")?;
                (
                    f,
                    f,
                    field(path, line, &tokens, 5, "cx")?,
                    field(path, line, &tokens, 6, "cy")?,
                )
            }
            other => return Err(Error::UnsupportedCameraModel(other.to_string())),
        };
        out.push(Intrinsics {
            id,
            model,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        });
    }
    Ok(out)
}

struct ImagePose {
    name: String,
    camera_id: u64,
    qvec: [f64; 4],
    tvec: [f64; 3],
}

fn load_images_file(path: &Path) -> Result<Vec<ImagePose>> {
    let lines = read_lines(path)?;
    let mut out = Vec::new();
    // Registered images come in pairs: the pose line and a 2D-point line
    // (possibly empty; empty lines were already filtered, so pose lines are
    // recognized by field count instead of strict alternation).
    let mut expecting_pose = true;
    for (line, text) in lines {
        if !expecting_pose {
            expecting_pose = true;
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() < 10 {
            return Err(parse_err(
                path,
                line,
                format!("expected 10 pose fields, found {}", tokens.len()),
            ));
        }
        let qvec = [
            field(path, line, &tokens, 1, "qw")?,
            field(path, line, &tokens, 2, "qx")?,
            field(path, line, &tokens, 3, "qy")?,
            field(path, line, &tokens, 4, "qz")?,
        ];
        let tvec = [
            field(path, line, &tokens, 5, "tx")?,
            field(path, line, &tokens, 6, "ty")?,
            field(path, line, &tokens, 7, "tz")?,
        ];
        let camera_id: u64 = field(path, line, &tokens, 8, "camera id")?;
        let name = tokens[9].to_string();
        out.push(ImagePose {
            name,
            camera_id,
            qvec,
            tvec,
        });
        expecting_pose = false;
    }
    Ok(out)
}

fn load_points(path: &Path) -> Result<(Vec<Vec3<f64>>, Vec<Vec3<f64>>)> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (line, text) in read_lines(path)? {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let x: f64 = field(path, line, &tokens, 1, "x")?;
        let y: f64 = field(path, line, &tokens, 2, "y")?;
        let z: f64 = field(path, line, &tokens, 3, "z")?;
        let r: f64 = field(path, line, &tokens, 4, "r")?;
        let g: f64 = field(path, line, &tokens, 5, "g")?;
        let b: f64 = field(path, line, &tokens, 6, "b")?;
        points.push(Vec3::new(x, y, z));
        colors.push(Vec3::new(r / 255.0, g / 255.0, b / 255.0));
    }
    Ok((points, colors))
}

/// Loads a COLMAP sparse reconstruction in text format from `dir`. Views are
/// sorted by image name for a deterministic order.
pub fn load_colmap<T: Real>(dir: &Path, znear: f64) -> Result<SfmScene<T>> {
    let cameras_path = dir.join("cameras.txt");
    let images_path = dir.join("images.txt");
    let points_path = dir.join("points3D.txt");
    for p in [&cameras_path, &images_path, &points_path] {
        if !p.exists() {
            return Err(Error::io(
                p.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing COLMAP file"),
            ));
        }
    }
    let intrinsics = load_cameras(&cameras_path)?;
    let mut poses = load_images_file(&images_path)?;
    poses.sort_by(|a, b| a.name.cmp(&b.name));
    let (points, colors) = load_points(&points_path)?;

    let mut views = Vec::with_capacity(poses.len());
    for pose in &poses {
        let intr = intrinsics
            .iter()
            .find(|c| c.id == pose.camera_id)
            .ok_or_else(|| {
                Error::Parse {
                    path: images_path.clone(),
                    line: 0,
                    msg: format!(
                        "image '{}' references unknown camera {}",
                        pose.name, pose.camera_id
                    ),
                }
            })?;
        let q = Quat::new(
            T::of(pose.qvec[0]),
            T::of(pose.qvec[1]),
            T::of(pose.qvec[2]),
            T::of(pose.qvec[3]),
        );
        let q = crate::primitives::normalize_rotation(q)?;
        let camera = CameraModel {
            fx: T::of(intr.fx),
            fy: T::of(intr.fy),
            cx: T::of(intr.cx),
            cy: T::of(intr.cy),
            width: intr.width,
            height: intr.height,
            rotation: q.to_matrix(),
            translation: Vec3::new(
                T::of(pose.tvec[0]),
                T::of(pose.tvec[1]),
                T::of(pose.tvec[2]),
            ),
            znear: T::of(znear),
        };
        views.push(View {
            name: pose.name.clone(),
            camera,
        });
    }
    Ok(SfmScene {
        intrinsics,
        views,
        points: points
            .into_iter()
            .map(|p| p.map(|v| T::of(v)))
            .collect(),
        point_colors: colors
            .into_iter()
            .map(|p| p.map(|v| T::of(v)))
            .collect(),
    })
}

/// Returns the canonical fixture path used by tests and docs.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/colmap_min")
}
