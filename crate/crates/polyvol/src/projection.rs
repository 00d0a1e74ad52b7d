//! Camera model and per-primitive projection into the affine ray-space
//! approximation, where pixel rays become vertical lines.
//!
//! The ray-space map is `phi(p) = (fx*px/pz + cx, fy*py/pz + cy, |p|)`. Its
//! third coordinate is Euclidean distance from the camera center, so
//! differences of ray-space depths are true chord lengths along a ray. In
//! approximate mode the map is linearized around the primitive center; in
//! exact mode every vertex is mapped by `phi` directly.

use crate::appearance::eval_sh;
use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Real, Vec3};
use crate::primitives::{local_offsets, normalize_rotation, PrimitiveSet};

/// Bounding boxes are inflated by this factor for the frustum cull so
/// primitives straddling the image border are not dropped.
pub const GUARD_BAND: f64 = 1.3;

/// Pinhole intrinsics and rigid world-to-camera transform.
#[derive(Clone, Debug)]
pub struct CameraModel<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub znear: T,
}

impl<T: Real> CameraModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) || self.width == 0 || self.height == 0 {
            return Err(Error::DegenerateParameter(
                "camera requires positive focal lengths and image size".into(),
            ));
        }
        if self.rotation.orthonormality_error() > T::of(1e-6) {
            return Err(Error::DegenerateParameter(
                "camera rotation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3<T> {
        -self.rotation.transpose_mul_vec(self.translation)
    }

    /// Unit world-space direction of the ray through pixel-space point
    /// (px, py).
    pub fn pixel_ray_dir(&self, px: T, py: T) -> Vec3<T> {
        let d_cam = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, T::one());
        self.rotation.transpose_mul_vec(d_cam).normalized()
    }
}

/// Affine ray-space Jacobian evaluated at a camera-space point.
#[derive(Clone, Copy, Debug)]
pub struct RaySpaceJacobian<T> {
    pub matrix: Mat3<T>,
    pub at: Vec3<T>,
}

/// Forward ray-space map; `None` when the point is at or behind the near
/// plane.
pub fn ray_space_map<T: Real>(p_cam: Vec3<T>, cam: &CameraModel<T>) -> Option<Vec3<T>> {
    if p_cam.z <= cam.znear {
        return None;
    }
    Some(Vec3::new(
        cam.fx * p_cam.x / p_cam.z + cam.cx,
        cam.fy * p_cam.y / p_cam.z + cam.cy,
        p_cam.norm(),
    ))
}

/// Analytic Jacobian of [`ray_space_map`] at `p_cam`.
pub fn jacobian_at<T: Real>(p_cam: Vec3<T>, cam: &CameraModel<T>) -> Option<RaySpaceJacobian<T>> {
    if p_cam.z <= cam.znear {
        return None;
    }
    let Vec3 { x, y, z } = p_cam;
    let n = p_cam.norm();
    let zz = z * z;
    let matrix = Mat3::new([
        [cam.fx / z, T::zero(), -cam.fx * x / zz],
        [T::zero(), cam.fy / z, -cam.fy * y / zz],
        [x / n, y / n, z / n],
    ]);
    Some(RaySpaceJacobian { matrix, at: p_cam })
}

/// Derivatives of the Jacobian w.r.t. the evaluation point, one matrix per
/// component of `p_cam`. Needed by the backward pass because the expansion
/// point of the affine approximation is itself a function of the primitive
/// center.
pub fn jacobian_point_derivatives<T: Real>(
    p_cam: Vec3<T>,
    cam: &CameraModel<T>,
) -> [Mat3<T>; 3] {
    let Vec3 { x, y, z } = p_cam;
    let n = p_cam.norm();
    let n3 = n * n * n;
    let zz = z * z;
    let z3 = zz * z;
    let o = T::zero();
    let two = T::of(2.0);
    let nn = n * n;
    let dx = Mat3::new([
        [o, o, -cam.fx / zz],
        [o, o, o],
        [(nn - x * x) / n3, -(x * y) / n3, -(x * z) / n3],
    ]);
    let dy = Mat3::new([
        [o, o, o],
        [o, o, -cam.fy / zz],
        [-(x * y) / n3, (nn - y * y) / n3, -(y * z) / n3],
    ]);
    let dz = Mat3::new([
        [-cam.fx / zz, o, two * cam.fx * x / z3],
        [o, -cam.fy / zz, two * cam.fy * y / z3],
        [-(x * z) / n3, -(y * z) / n3, (nn - z * z) / n3],
    ]);
    [dx, dy, dz]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Affine ray-space approximation around the primitive center.
    Approximate,
    /// Per-vertex exact ray-space mapping (the no-ray-space ablation).
    Exact,
}

/// A primitive after view transform and ray-space projection, ready for
/// per-pixel intersection.
#[derive(Clone, Debug)]
pub struct RaySpacePrimitive<T> {
    pub id: usize,
    pub center_ray: Vec3<T>,
    pub vertices_ray: [Vec3<T>; 6],
    pub vertex_count: usize,
    pub rgb: Vec3<T>,
    pub sigma: T,
    pub depth_key: T,
}

/// Everything the backward pass needs to pull ray-space gradients back to
/// world-space features.
#[derive(Clone, Debug)]
pub struct ProjectionCache<T> {
    pub id: usize,
    pub mode: ProjectionMode,
    pub c_cam: Vec3<T>,
    pub jacobian: Mat3<T>,
    /// Camera-space offsets `v_cam - c_cam`.
    pub offsets_cam: [Vec3<T>; 6],
    pub vertex_count: usize,
    /// Normalized rotation and its raw norm (for the normalization pullback).
    pub rotation_unit: Quat<T>,
    pub rotation_raw_norm: T,
    /// Effective (smoothed) distances and the factor `d_i / d_eff_i`.
    pub eff_distances: [T; 4],
    pub eff_scale: [T; 4],
    /// Unit view direction from camera to center, and its length.
    pub view_dir: Vec3<T>,
    pub view_dist: T,
    pub sh_clamped: [bool; 3],
    pub alpha: T,
    /// Frozen density denominator `2 * min(d_eff)`.
    pub sigma_denominator: T,
}

/// Screen-space bounding box in pixel units (not yet tile aligned).
#[derive(Clone, Copy, Debug)]
pub struct ScreenBbox<T> {
    pub min_x: T,
    pub max_x: T,
    pub min_y: T,
    pub max_y: T,
}

impl<T: Real> ScreenBbox<T> {
    pub fn of_vertices(verts: &[Vec3<T>]) -> Self {
        let mut bb = ScreenBbox {
            min_x: T::infinity(),
            max_x: T::neg_infinity(),
            min_y: T::infinity(),
            max_y: T::neg_infinity(),
        };
        for v in verts {
            bb.min_x = bb.min_x.min(v.x);
            bb.max_x = bb.max_x.max(v.x);
            bb.min_y = bb.min_y.min(v.y);
            bb.max_y = bb.max_y.max(v.y);
        }
        bb
    }

    /// Longer side in pixels.
    pub fn long_side(&self) -> T {
        (self.max_x - self.min_x).max(self.max_y - self.min_y)
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Survives the frustum cull if the guard-band-inflated box intersects
    /// the image rectangle.
    pub fn intersects_image(&self, width: usize, height: usize) -> bool {
        let half_w = (self.max_x - self.min_x) * T::of(0.5);
        let half_h = (self.max_y - self.min_y) * T::of(0.5);
        let cx = (self.min_x + self.max_x) * T::of(0.5);
        let cy = (self.min_y + self.max_y) * T::of(0.5);
        let g = T::of(GUARD_BAND);
        let min_x = cx - half_w * g;
        let max_x = cx + half_w * g;
        let min_y = cy - half_h * g;
        let max_y = cy + half_h * g;
        max_x >= T::zero()
            && min_x <= T::of_usize(width)
            && max_y >= T::zero()
            && min_y <= T::of_usize(height)
    }
}

/// Projects one primitive. Returns `None` when culled (behind the near
/// plane, non-finite features, or degenerate rotation).
///
/// `sigma_denom_override` replaces the density denominator `2 * min(d_eff)`
/// with a frozen value; finite-difference harnesses use it to mirror the
/// stop-gradient on the normalization factor.
pub fn project_primitive<T: Real>(
    set: &PrimitiveSet<T>,
    index: usize,
    cam: &CameraModel<T>,
    mode: ProjectionMode,
    use_3d_filter: bool,
    sigma_denom_override: Option<T>,
) -> Option<(RaySpacePrimitive<T>, ProjectionCache<T>)> {
    let center = set.centers[index];
    if !center.is_finite() {
        return None;
    }
    let raw_q = set.rotations[index];
    let raw_norm = raw_q.norm();
    let q_unit = normalize_rotation(raw_q).ok()?;

    let c_cam = cam.world_to_camera(center);
    let center_ray = ray_space_map(c_cam, cam)?;
    let jac = jacobian_at(c_cam, cam)?;

    let stride = set.distance_stride();
    let vcount = set.kind().vertex_count();
    let s3d = if use_3d_filter {
        set.filter_3d[index]
    } else {
        T::zero()
    };
    let mut eff = [T::zero(); 4];
    let mut eff_scale = [T::one(); 4];
    let mut min_eff = T::infinity();
    for (k, &d) in set.distances_of(index).iter().enumerate() {
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let e = (d * d + s3d * s3d).sqrt();
        eff[k] = e;
        eff_scale[k] = d / e;
        min_eff = min_eff.min(e);
    }

    let rot = q_unit.to_matrix();
    let mut local = [Vec3::zero(); 6];
    local_offsets(set.kind(), &eff[..stride], &mut local[..vcount]);
    let mut offsets_cam = [Vec3::zero(); 6];
    for k in 0..vcount {
        offsets_cam[k] = cam.rotation.mul_vec(rot.mul_vec(local[k]));
    }

    let mut vertices_ray = [Vec3::zero(); 6];
    match mode {
        ProjectionMode::Approximate => {
            for k in 0..vcount {
                vertices_ray[k] = center_ray + jac.matrix.mul_vec(offsets_cam[k]);
            }
        }
        ProjectionMode::Exact => {
            for k in 0..vcount {
                vertices_ray[k] = ray_space_map(c_cam + offsets_cam[k], cam)?;
            }
        }
    }

    let cam_pos = cam.position();
    let to_center = center - cam_pos;
    let view_dist = to_center.norm();
    let view_dir = to_center.scale(T::one() / view_dist);
    let (rgb, sh_clamped) = eval_sh(set.sh_of(index), set.active_sh_degree, view_dir);

    let alpha = set.opacity(index);
    let sigma_denominator = sigma_denom_override.unwrap_or(T::of(2.0) * min_eff);
    let scale = T::of(crate::primitives::OPACITY_SCALE);
    let sigma = -(T::one() - scale * alpha).ln() / sigma_denominator;
    if !sigma.is_finite() {
        return None;
    }

    let rsp = RaySpacePrimitive {
        id: index,
        center_ray,
        vertices_ray,
        vertex_count: vcount,
        rgb,
        sigma,
        depth_key: center_ray.z,
    };
    let cache = ProjectionCache {
        id: index,
        mode,
        c_cam,
        jacobian: jac.matrix,
        offsets_cam,
        vertex_count: vcount,
        rotation_unit: q_unit,
        rotation_raw_norm: raw_norm,
        eff_distances: eff,
        eff_scale,
        view_dir,
        view_dist,
        sh_clamped,
        alpha,
        sigma_denominator,
    };
    Some((rsp, cache))
}
