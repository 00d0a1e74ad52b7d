//! Brute-force reference renderer: every pixel ray is intersected against
//! every face of every primitive with the full 3D Moeller-Trumbore test in
//! world space, contributions are sorted exactly per pixel by entry
//! distance, and compositing never stops early.
//!
//! The oracle shares primitive construction and appearance with the main
//! path but implements intersection and compositing independently, so it can
//! catch mistakes in the tiled ray-space pipeline.

use rayon::prelude::*;

use crate::appearance::eval_sh;
use crate::imagebuf::{ImageBuf, ScalarMap};
use crate::math::{Real, Vec3};
use crate::primitives::{normalize_rotation, PrimitiveSet, OPACITY_SCALE};
use crate::projection::CameraModel;
use crate::raster::{ALPHA_LIMIT, DEPTH_INVALID};

#[derive(Clone, Debug)]
pub struct OracleOptions<T> {
    pub background: Vec3<T>,
    pub use_3d_filter: bool,
    pub compute_depth: bool,
}

impl<T: Real> Default for OracleOptions<T> {
    fn default() -> Self {
        Self {
            background: Vec3::zero(),
            use_3d_filter: true,
            compute_depth: false,
        }
    }
}

pub struct OracleOutput<T> {
    pub image: ImageBuf<T>,
    pub depth: Option<ScalarMap<T>>,
    pub alpha: ScalarMap<T>,
}

struct WorldPrimitive<T> {
    vertices: Vec<Vec3<T>>,
    sigma: T,
    rgb: Vec3<T>,
}

const MTIA_EPS: f64 = 1e-12;

/// Full 3D Moeller-Trumbore; returns the ray parameter (Euclidean distance
/// for unit direction) of the crossing.
fn mtia<T: Real>(orig: Vec3<T>, dir: Vec3<T>, v0: Vec3<T>, v1: Vec3<T>, v2: Vec3<T>) -> Option<T> {
    let edge1 = v1 - v0;
    let edge2 = v2 - v0;
    let pvec = dir.cross(edge2);
    let det = edge1.dot(pvec);
    if det.abs() <= T::of(MTIA_EPS) {
        return None;
    }
    let inv = T::one() / det;
    let tvec = orig - v0;
    let u = tvec.dot(pvec) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(edge1);
    let v = dir.dot(qvec) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    Some(edge2.dot(qvec) * inv)
}

/// Renders an exact reference image (plus optional depth and an alpha map).
pub fn render_exact<T: Real>(
    set: &PrimitiveSet<T>,
    cam: &CameraModel<T>,
    opts: &OracleOptions<T>,
) -> OracleOutput<T> {
    let faces = set.kind().faces();
    let vcount = set.kind().vertex_count();
    let cam_pos = cam.position();
    let scale = T::of(OPACITY_SCALE);

    let prims: Vec<WorldPrimitive<T>> = (0..set.len())
        .filter_map(|i| {
            let q = normalize_rotation(set.rotations[i]).ok()?;
            let mut vertices = vec![Vec3::zero(); vcount];
            if opts.use_3d_filter {
                set.build_vertices_into(i, q, &mut vertices);
            } else {
                crate::primitives::build_vertices(
                    set.kind(),
                    set.centers[i],
                    q,
                    set.distances_of(i),
                    &mut vertices,
                );
            }
            let min_d = if opts.use_3d_filter {
                set.min_effective_distance(i)
            } else {
                set.distances_of(i)
                    .iter()
                    .fold(T::infinity(), |a, &d| a.min(d))
            };
            if !(min_d > T::zero()) {
                return None;
            }
            let alpha = set.opacity(i);
            let sigma = -(T::one() - scale * alpha).ln() / (T::of(2.0) * min_d);
            let dir = (set.centers[i] - cam_pos).normalized();
            let (rgb, _) = eval_sh(set.sh_of(i), set.active_sh_degree, dir);
            Some(WorldPrimitive {
                vertices,
                sigma,
                rgb,
            })
        })
        .collect();

    let (w, h) = (cam.width, cam.height);
    let half = T::of(0.5);
    let rows: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut color_row = vec![T::zero(); w * 3];
            let mut depth_row = vec![T::of(DEPTH_INVALID); w];
            let mut alpha_row = vec![T::zero(); w];
            let mut contributions: Vec<(T, T, Vec3<T>)> = Vec::new();
            for x in 0..w {
                let px = T::of_usize(x) + half;
                let py = T::of_usize(y) + half;
                let dir = cam.pixel_ray_dir(px, py);
                contributions.clear();
                for p in &prims {
                    let mut entry = T::infinity();
                    let mut exit = T::neg_infinity();
                    let mut hits = 0usize;
                    for f in faces {
                        if let Some(t) =
                            mtia(cam_pos, dir, p.vertices[f[0]], p.vertices[f[1]], p.vertices[f[2]])
                        {
                            hits += 1;
                            entry = entry.min(t);
                            exit = exit.max(t);
                        }
                    }
                    if hits < 2 || entry <= T::zero() {
                        continue;
                    }
                    let o = (T::one() - (-p.sigma * (exit - entry)).exp()).min(T::of(ALPHA_LIMIT));
                    contributions.push((entry, o, p.rgb));
                }
                contributions.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut t = T::one();
                let mut rgb = Vec3::zero();
                let mut depth = T::of(DEPTH_INVALID);
                let mut crossed = false;
                for &(entry, o, c) in &contributions {
                    rgb += c.scale(t * o);
                    t *= T::one() - o;
                    if !crossed && T::one() - t > half {
                        depth = entry;
                        crossed = true;
                    }
                }
                rgb += opts.background.scale(t);
                color_row[x * 3] = rgb.x;
                color_row[x * 3 + 1] = rgb.y;
                color_row[x * 3 + 2] = rgb.z;
                depth_row[x] = depth;
                alpha_row[x] = T::one() - t;
            }
            (color_row, depth_row, alpha_row)
        })
        .collect();

    let mut image = ImageBuf::new(w, h);
    let mut depth = opts.compute_depth.then(|| ScalarMap::new(w, h, T::of(DEPTH_INVALID)));
    let mut alpha = ScalarMap::new(w, h, T::zero());
    for (y, (color_row, depth_row, alpha_row)) in rows.into_iter().enumerate() {
        image.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&color_row);
        if let Some(d) = depth.as_mut() {
            d.data[y * w..(y + 1) * w].copy_from_slice(&depth_row);
        }
        alpha.data[y * w..(y + 1) * w].copy_from_slice(&alpha_row);
    }
    OracleOutput {
        image,
        depth,
        alpha,
    }
}
