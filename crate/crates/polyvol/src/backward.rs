//! Analytic backward pass from image-space loss gradients to every primitive
//! feature, plus a finite-difference validation harness.
//!
//! The pass replays each pixel's composited contributions back-to-front from
//! the stored final transmittance, distributes gradients onto per-chord alpha
//! and color, backpropagates through the ray-space triangle intersection,
//! and pulls the resulting vertex gradients through the projection and view
//! transforms onto center, rotation, distance, opacity, and SH features.
//!
//! Tile results are merged in tile order, so accumulated gradients are
//! bit-identical across runs regardless of thread count.

use rayon::prelude::*;

use crate::appearance::{normalize_backward, sh_backward};
use crate::error::{Error, Result};
use crate::imagebuf::ImageBuf;
use crate::math::{sigmoid, Mat3, Real, Vec3};
use crate::primitives::{density_alpha_derivative, PrimitiveKind, PrimitiveSet, SH_FLOATS, TET_BASIS};
use crate::projection::{jacobian_at, jacobian_point_derivatives, CameraModel, ProjectionCache, ProjectionMode};
use crate::raster::{intersect, pixel_alpha, RenderOptions, RenderOutput, ALPHA_LIMIT};

/// Per-primitive gradient accumulators mirroring every optimizable feature,
/// plus the per-view 2D positional-gradient statistic consumed by population
/// control.
#[derive(Clone, Debug)]
pub struct GradientBuffer<T> {
    pub d_center: Vec<Vec3<T>>,
    pub d_rotation: Vec<[T; 4]>,
    /// Flattened, `distance_stride` values per primitive.
    pub d_distance: Vec<T>,
    pub d_opacity: Vec<T>,
    /// Flattened, 48 values per primitive.
    pub d_sh: Vec<T>,
    /// Norm of the summed 2D ray-space positional gradient for this pass.
    pub view_grad_xy: Vec<T>,
    /// Whether the primitive entered the worklist this pass.
    pub visible: Vec<bool>,
    distance_stride: usize,
}

impl<T: Real> GradientBuffer<T> {
    pub fn new(set: &PrimitiveSet<T>) -> Self {
        let n = set.len();
        let stride = set.distance_stride();
        Self {
            d_center: vec![Vec3::zero(); n],
            d_rotation: vec![[T::zero(); 4]; n],
            d_distance: vec![T::zero(); n * stride],
            d_opacity: vec![T::zero(); n],
            d_sh: vec![T::zero(); n * SH_FLOATS],
            view_grad_xy: vec![T::zero(); n],
            visible: vec![false; n],
            distance_stride: stride,
        }
    }

    pub fn len(&self) -> usize {
        self.d_center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_center.is_empty()
    }

    pub fn zero(&mut self) {
        self.d_center.fill(Vec3::zero());
        self.d_rotation.fill([T::zero(); 4]);
        self.d_distance.fill(T::zero());
        self.d_opacity.fill(T::zero());
        self.d_sh.fill(T::zero());
        self.view_grad_xy.fill(T::zero());
        self.visible.fill(false);
    }

    pub fn is_finite(&self) -> bool {
        self.d_center.iter().all(|v| v.is_finite())
            && self.d_rotation.iter().flatten().all(|v| v.is_finite())
            && self.d_distance.iter().all(|v| v.is_finite())
            && self.d_opacity.iter().all(|v| v.is_finite())
            && self.d_sh.iter().all(|v| v.is_finite())
    }
}

/// Gradients of one pixel's loss w.r.t. each composited contribution.
/// Contributions are given front-to-back as (alpha, color); the replay walks
/// them back-to-front reconstructing per-contribution transmittance from the
/// final value.
pub fn blend_backward<T: Real>(
    contribs: &[(T, Vec3<T>)],
    background: Vec3<T>,
    final_t: T,
    d_pixel: Vec3<T>,
) -> Vec<(T, Vec3<T>)> {
    let mut out = vec![(T::zero(), Vec3::zero()); contribs.len()];
    let mut suffix = background;
    let mut t_run = final_t;
    for (k, &(o, c)) in contribs.iter().enumerate().rev() {
        let t_k = t_run / (T::one() - o);
        let d_c = d_pixel.scale(t_k * o);
        let d_o = (c - suffix).dot(d_pixel) * t_k;
        out[k] = (d_o, d_c);
        suffix = c.scale(o) + suffix.scale(T::one() - o);
        t_run = t_k;
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AlphaBackward<T> {
    pub d_i1: T,
    pub d_i2: T,
    pub d_sigma: T,
}

/// Gradients of the chord opacity `o = 1 - exp(-sigma * (i2 - i1))`. When
/// the forward value hit the numeric clamp, the path is flat and all
/// gradients are zero.
pub fn alpha_backward<T: Real>(sigma: T, i1: T, i2: T, d_o: T) -> AlphaBackward<T> {
    let e = (-sigma * (i2 - i1)).exp();
    if T::one() - e >= T::of(ALPHA_LIMIT) {
        return AlphaBackward::default();
    }
    AlphaBackward {
        d_i1: -sigma * e * d_o,
        d_i2: sigma * e * d_o,
        d_sigma: (i2 - i1) * e * d_o,
    }
}

/// Backpropagates an intersection-depth gradient onto the three ray-space
/// corners of the hit face. `u`, `v`, `det` are the cached forward values.
pub fn mtia_backward<T: Real>(
    v0: Vec3<T>,
    v1: Vec3<T>,
    v2: Vec3<T>,
    rx: T,
    ry: T,
    u: T,
    v: T,
    det: T,
    d_i: T,
    d_verts: &mut [Vec3<T>; 3],
) {
    let ax = v1.x - v0.x;
    let ay = v1.y - v0.y;
    let bx = v2.x - v0.x;
    let by = v2.y - v0.y;
    let px = rx - v0.x;
    let py = ry - v0.y;

    // Partials of the determinant and the two barycentric numerators w.r.t.
    // the six in-plane corner coordinates (v0x, v0y, v1x, v1y, v2x, v2y).
    let d_det = [ay - by, bx - ax, by, -bx, -ay, ax];
    let d_nu = [py - by, bx - px, T::zero(), T::zero(), -py, px];
    let d_nv = [ay - py, px - ax, py, -px, T::zero(), T::zero()];

    let dz0 = v1.z - v0.z; // di/du
    let dz1 = v2.z - v0.z; // di/dv
    let inv_det = T::one() / det;

    let mut d_xy = [T::zero(); 6];
    for k in 0..6 {
        let du = (d_nu[k] - u * d_det[k]) * inv_det;
        let dv = (d_nv[k] - v * d_det[k]) * inv_det;
        d_xy[k] = (dz0 * du + dz1 * dv) * d_i;
    }
    let w = T::one() - u - v;
    d_verts[0] += Vec3::new(d_xy[0], d_xy[1], w * d_i);
    d_verts[1] += Vec3::new(d_xy[2], d_xy[3], u * d_i);
    d_verts[2] += Vec3::new(d_xy[4], d_xy[5], v * d_i);
}

/// Ray-space gradients accumulated for one projected primitive over all
/// pixels of one view.
#[derive(Clone, Debug)]
pub struct PrimPassGrad<T> {
    pub d_vray: [Vec3<T>; 6],
    pub d_rgb: Vec3<T>,
    pub d_sigma: T,
}

impl<T: Real> PrimPassGrad<T> {
    fn zero() -> Self {
        Self {
            d_vray: [Vec3::zero(); 6],
            d_rgb: Vec3::zero(),
            d_sigma: T::zero(),
        }
    }

    fn is_zero(&self) -> bool {
        self.d_sigma == T::zero()
            && self.d_rgb == Vec3::zero()
            && self.d_vray.iter().all(|v| *v == Vec3::zero())
    }

    fn add(&mut self, o: &Self) {
        for k in 0..6 {
            self.d_vray[k] += o.d_vray[k];
        }
        self.d_rgb += o.d_rgb;
        self.d_sigma += o.d_sigma;
    }
}

/// World-space gradients of one primitive for one view.
#[derive(Clone, Debug)]
pub struct FinalGrad<T> {
    pub id: usize,
    pub d_center: Vec3<T>,
    pub d_rotation: [T; 4],
    pub d_distance: [T; 4],
    pub d_opacity: T,
    pub d_sh: [T; SH_FLOATS],
    pub view_grad_xy: T,
}

/// Pulls accumulated ray-space gradients back onto world-space features:
/// through the affine ray-space map (including the dependence of its
/// Jacobian on the expansion point), the camera rotation, the primitive
/// rotation (via the quaternion normalization), the distances (via the 3D
/// smoothing filter), opacity (frozen density denominator), and the SH
/// coefficients plus view direction.
pub fn transform_backward<T: Real>(
    kind: PrimitiveKind,
    cache: &ProjectionCache<T>,
    cam: &CameraModel<T>,
    acc: &PrimPassGrad<T>,
    sh: &[T],
    active_sh_degree: u8,
) -> FinalGrad<T> {
    let vcount = cache.vertex_count;
    let rot = cache.rotation_unit.to_matrix();

    // Sum of vertex gradients doubles as the ray-space center gradient.
    let mut g_sum = Vec3::zero();
    for k in 0..vcount {
        g_sum += acc.d_vray[k];
    }
    let view_grad_xy = (g_sum.x * g_sum.x + g_sum.y * g_sum.y).sqrt();

    let mut d_c_cam = Vec3::zero();
    let mut d_rot_mat = Mat3::zero();
    let mut d_eff = [T::zero(); 4];

    match cache.mode {
        ProjectionMode::Approximate => {
            d_c_cam = cache.jacobian.transpose_mul_vec(g_sum);
            let jd = jacobian_point_derivatives(cache.c_cam, cam);
            for k in 0..vcount {
                let g = acc.d_vray[k];
                let off = cache.offsets_cam[k];
                // d(J(c) * off)/dc contracted with the vertex gradient.
                d_c_cam += Vec3::new(
                    g.dot(jd[0].mul_vec(off)),
                    g.dot(jd[1].mul_vec(off)),
                    g.dot(jd[2].mul_vec(off)),
                );
                let d_off_cam = cache.jacobian.transpose_mul_vec(g);
                accumulate_offset_grad(
                    kind,
                    cache,
                    &rot,
                    cam,
                    k,
                    d_off_cam,
                    &mut d_rot_mat,
                    &mut d_eff,
                );
            }
        }
        ProjectionMode::Exact => {
            for k in 0..vcount {
                let g = acc.d_vray[k];
                let v_cam = cache.c_cam + cache.offsets_cam[k];
                let jac = jacobian_at(v_cam, cam)
                    .map(|j| j.matrix)
                    .unwrap_or_else(Mat3::zero);
                let d_v_cam = jac.transpose_mul_vec(g);
                d_c_cam += d_v_cam;
                accumulate_offset_grad(
                    kind,
                    cache,
                    &rot,
                    cam,
                    k,
                    d_v_cam,
                    &mut d_rot_mat,
                    &mut d_eff,
                );
            }
        }
    }

    let mut d_center = cam.rotation.transpose_mul_vec(d_c_cam);

    // Appearance: coefficients and the view-direction path to the center.
    let mut d_sh = [T::zero(); SH_FLOATS];
    let mut d_dir = Vec3::zero();
    sh_backward(
        sh,
        active_sh_degree,
        cache.view_dir,
        cache.sh_clamped,
        acc.d_rgb,
        &mut d_sh,
        &mut d_dir,
    );
    d_center += normalize_backward(cache.view_dir, cache.view_dist, d_dir);

    // Opacity through the density numerator only.
    let d_alpha = acc.d_sigma * density_alpha_derivative(cache.alpha, cache.sigma_denominator);
    let d_opacity = d_alpha * cache.alpha * (T::one() - cache.alpha);

    // Distances: effective distance back to the raw feature.
    let mut d_distance = [T::zero(); 4];
    for k in 0..kind.distance_count() {
        d_distance[k] = d_eff[k] * cache.eff_scale[k];
    }

    // Rotation: contract with dR/dq, then pull through the normalization.
    let jac_q = cache.rotation_unit.matrix_jacobian();
    let mut d_q_unit = [T::zero(); 4];
    for (j, dq) in jac_q.iter().enumerate() {
        d_q_unit[j] = d_rot_mat.frobenius_dot(dq);
    }
    let qu = cache.rotation_unit.to_array();
    let dot = (0..4).map(|j| d_q_unit[j] * qu[j]).sum::<T>();
    let mut d_rotation = [T::zero(); 4];
    for j in 0..4 {
        d_rotation[j] = (d_q_unit[j] - dot * qu[j]) / cache.rotation_raw_norm;
    }

    FinalGrad {
        id: cache.id,
        d_center,
        d_rotation,
        d_distance,
        d_opacity,
        d_sh,
        view_grad_xy,
    }
}

/// Splits a camera-space offset gradient onto the rotation matrix and the
/// effective distance of vertex `k`.
#[allow(clippy::too_many_arguments)]
fn accumulate_offset_grad<T: Real>(
    kind: PrimitiveKind,
    cache: &ProjectionCache<T>,
    rot: &Mat3<T>,
    cam: &CameraModel<T>,
    k: usize,
    d_off_cam: Vec3<T>,
    d_rot_mat: &mut Mat3<T>,
    d_eff: &mut [T; 4],
) {
    // Offset chain: off_cam = R_cam * R(q) * (d_eff * u_k).
    let w = cam.rotation.transpose_mul_vec(d_off_cam);
    let (axis, unit) = local_unit_direction::<T>(kind, k);
    let s_local = unit.scale(cache.eff_distances[axis]);
    d_rot_mat.add_outer(w, s_local);
    d_eff[axis] += rot.transpose_mul_vec(w).dot(unit);
}

/// Unit direction of vertex `k` in the primitive's local frame and the index
/// of the distance feature it scales.
fn local_unit_direction<T: Real>(kind: PrimitiveKind, k: usize) -> (usize, Vec3<T>) {
    match kind {
        PrimitiveKind::Octahedron => {
            let axis = k / 2;
            let sign = if k % 2 == 0 { T::one() } else { -T::one() };
            let mut v = Vec3::zero();
            match axis {
                0 => v.x = sign,
                1 => v.y = sign,
                _ => v.z = sign,
            }
            (axis, v)
        }
        PrimitiveKind::Tetrahedron => (
            k,
            Vec3::new(
                T::of(TET_BASIS[k][0]),
                T::of(TET_BASIS[k][1]),
                T::of(TET_BASIS[k][2]),
            ),
        ),
    }
}

/// Full backward pass for one view. `d_pixel` is the loss gradient w.r.t.
/// the rendered image (same layout). Gradients accumulate additively into
/// `grads`.
pub fn backward_pass<T: Real>(
    set: &PrimitiveSet<T>,
    cam: &CameraModel<T>,
    opts: &RenderOptions<T>,
    out: &RenderOutput<T>,
    d_pixel: &[T],
    grads: &mut GradientBuffer<T>,
) -> Result<()> {
    let records = out
        .records
        .as_ref()
        .ok_or_else(|| Error::Internal("backward_pass requires a training-mode render".into()))?;
    if d_pixel.len() != out.image.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "pixel gradient length {} vs image {}",
            d_pixel.len(),
            out.image.data.len()
        )));
    }
    if grads.len() != set.len() || grads.distance_stride != set.distance_stride() {
        return Err(Error::ShapeMismatch(
            "gradient buffer does not match primitive set".into(),
        ));
    }
    let faces = set.kind().faces();
    let grid = &out.grid;
    let width = out.image.width;
    let half = T::of(0.5);

    // Per-tile replay, each tile producing sparse (compact, grad) pairs.
    let tile_grads: Vec<Result<Vec<(u32, PrimPassGrad<T>)>>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            let run = out.worklist.run(tile);
            if run.is_empty() {
                return Ok(Vec::new());
            }
            let mut local: Vec<PrimPassGrad<T>> = vec![PrimPassGrad::zero(); run.len()];
            let (x0, y0, x1, y1) = grid.tile_rect(tile);
            for y in y0..y1 {
                for x in x0..x1 {
                    let gi = y * width + x;
                    let last = records.last_entry[gi] as usize;
                    if last == 0 {
                        continue;
                    }
                    let rx = T::of_usize(x) + half;
                    let ry = T::of_usize(y) + half;
                    let d_pix = Vec3::new(
                        d_pixel[gi * 3],
                        d_pixel[gi * 3 + 1],
                        d_pixel[gi * 3 + 2],
                    );
                    let mut suffix = opts.background;
                    let mut t_run = records.final_t[gi];
                    let mut replayed = 0u32;
                    for local_idx in (0..last).rev() {
                        let entry = run[local_idx];
                        let rp = &out.projected[entry.compact as usize];
                        let Some(hit) = intersect(rp, faces, rx, ry) else {
                            continue;
                        };
                        replayed += 1;
                        let o = pixel_alpha(rp.sigma, hit.entry.depth, hit.exit.depth);
                        let t_k = t_run / (T::one() - o);
                        let g = &mut local[local_idx];
                        g.d_rgb += d_pix.scale(t_k * o);
                        let d_o = (rp.rgb - suffix).dot(d_pix) * t_k;
                        let ab = alpha_backward(rp.sigma, hit.entry.depth, hit.exit.depth, d_o);
                        g.d_sigma += ab.d_sigma;
                        for (face_hit, d_i) in [(hit.entry, ab.d_i1), (hit.exit, ab.d_i2)] {
                            let f = faces[face_hit.face];
                            let mut d_face = [Vec3::zero(); 3];
                            mtia_backward(
                                rp.vertices_ray[f[0]],
                                rp.vertices_ray[f[1]],
                                rp.vertices_ray[f[2]],
                                rx,
                                ry,
                                face_hit.u,
                                face_hit.v,
                                face_hit.det,
                                d_i,
                                &mut d_face,
                            );
                            for c in 0..3 {
                                g.d_vray[f[c]] += d_face[c];
                            }
                        }
                        suffix = rp.rgb.scale(o) + suffix.scale(T::one() - o);
                        t_run = t_k;
                    }
                    if replayed != records.n_contrib[gi] {
                        return Err(Error::Internal(format!(
                            "replay mismatch at pixel ({x},{y}): {replayed} vs {}",
                            records.n_contrib[gi]
                        )));
                    }
                }
            }
            Ok(run
                .iter()
                .zip(local)
                .filter(|(_, g)| !g.is_zero())
                .map(|(e, g)| (e.compact, g))
                .collect())
        })
        .collect();

    // Merge in tile order for deterministic accumulation.
    let mut per_compact: Vec<PrimPassGrad<T>> = vec![PrimPassGrad::zero(); out.projected.len()];
    let mut touched = vec![false; out.projected.len()];
    for tg in tile_grads {
        for (compact, g) in tg? {
            per_compact[compact as usize].add(&g);
            touched[compact as usize] = true;
        }
    }
    for e in &out.worklist.entries {
        grads.visible[out.projected[e.compact as usize].id] = true;
    }

    // Finalize per primitive in parallel, then scatter sequentially.
    let finals: Vec<FinalGrad<T>> = (0..out.projected.len())
        .into_par_iter()
        .filter(|&c| touched[c])
        .map(|c| {
            let cache = &out.caches[c];
            transform_backward(
                set.kind(),
                cache,
                cam,
                &per_compact[c],
                set.sh_of(cache.id),
                set.active_sh_degree,
            )
        })
        .collect();

    let stride = set.distance_stride();
    for f in finals {
        let i = f.id;
        grads.d_center[i] += f.d_center;
        for j in 0..4 {
            grads.d_rotation[i][j] += f.d_rotation[j];
        }
        for j in 0..stride {
            grads.d_distance[i * stride + j] += f.d_distance[j];
        }
        grads.d_opacity[i] += f.d_opacity;
        for j in 0..SH_FLOATS {
            grads.d_sh[i * SH_FLOATS + j] += f.d_sh[j];
        }
        grads.view_grad_xy[i] += f.view_grad_xy;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Finite-difference validation harness
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdStatus {
    Ok,
    /// Parameter sits within one step of a visibility or clamp boundary.
    Excluded,
    Fail,
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub primitive: usize,
    pub param: String,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
    pub status: FdStatus,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tolerance: f64,
    pub checked: usize,
    pub excluded: usize,
    pub failed: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

/// Indexes every optimizable scalar of a primitive set.
#[derive(Clone, Copy, Debug)]
pub enum ParamRef {
    Center(usize, usize),
    Rotation(usize, usize),
    Distance(usize, usize),
    Opacity(usize),
    Sh(usize, usize),
}

impl ParamRef {
    pub fn primitive(&self) -> usize {
        match *self {
            ParamRef::Center(i, _)
            | ParamRef::Rotation(i, _)
            | ParamRef::Distance(i, _)
            | ParamRef::Opacity(i)
            | ParamRef::Sh(i, _) => i,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            ParamRef::Center(i, a) => format!("p{i}.center.{}", ["x", "y", "z"][a]),
            ParamRef::Rotation(i, a) => format!("p{i}.rotation.{}", ["w", "x", "y", "z"][a]),
            ParamRef::Distance(i, a) => format!("p{i}.distance[{a}]"),
            ParamRef::Opacity(i) => format!("p{i}.opacity_logit"),
            ParamRef::Sh(i, a) => format!("p{i}.sh[{a}]"),
        }
    }

    pub fn all(set_len: usize, stride: usize, sh_limit: usize) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for i in 0..set_len {
            for a in 0..3 {
                out.push(ParamRef::Center(i, a));
            }
            for a in 0..4 {
                out.push(ParamRef::Rotation(i, a));
            }
            for a in 0..stride {
                out.push(ParamRef::Distance(i, a));
            }
            out.push(ParamRef::Opacity(i));
            for a in 0..sh_limit {
                out.push(ParamRef::Sh(i, a));
            }
        }
        out
    }

    pub fn get<T: Real>(&self, set: &PrimitiveSet<T>) -> T {
        let stride = set.distance_stride();
        match *self {
            ParamRef::Center(i, a) => set.centers[i].to_array()[a],
            ParamRef::Rotation(i, a) => set.rotations[i].to_array()[a],
            ParamRef::Distance(i, a) => set.distances[i * stride + a],
            ParamRef::Opacity(i) => set.opacity_logits[i],
            ParamRef::Sh(i, a) => set.sh[i * SH_FLOATS + a],
        }
    }

    pub fn set_value<T: Real>(&self, set: &mut PrimitiveSet<T>, v: T) {
        let stride = set.distance_stride();
        match *self {
            ParamRef::Center(i, a) => {
                let mut arr = set.centers[i].to_array();
                arr[a] = v;
                set.centers[i] = Vec3::from_array(arr);
            }
            ParamRef::Rotation(i, a) => {
                let mut arr = set.rotations[i].to_array();
                arr[a] = v;
                set.rotations[i] = crate::math::Quat::from_array(arr);
            }
            ParamRef::Distance(i, a) => set.distances[i * stride + a] = v,
            ParamRef::Opacity(i) => set.opacity_logits[i] = v,
            ParamRef::Sh(i, a) => set.sh[i * SH_FLOATS + a] = v,
        }
    }

    pub fn analytic<T: Real>(&self, grads: &GradientBuffer<T>) -> T {
        match *self {
            ParamRef::Center(i, a) => grads.d_center[i].to_array()[a],
            ParamRef::Rotation(i, a) => grads.d_rotation[i][a],
            ParamRef::Distance(i, a) => grads.d_distance[i * grads.distance_stride + a],
            ParamRef::Opacity(i) => grads.d_opacity[i],
            ParamRef::Sh(i, a) => grads.d_sh[i * SH_FLOATS + a],
        }
    }
}

/// Scene + views against fixed target images; the loss is the trainer's
/// L1/SSIM mixture.
pub struct FdProblem<'a, T: Real> {
    pub set: &'a PrimitiveSet<T>,
    pub cameras: &'a [CameraModel<T>],
    pub targets: &'a [ImageBuf<T>],
    pub opts: RenderOptions<T>,
    pub ssim_weight: f64,
}

pub struct FdConfig {
    /// Relative tolerance; a parameter passes when
    /// `|a - fd| <= tolerance * max(|a|, |fd|) + abs_tolerance`.
    pub tolerance: f64,
    /// Absolute term absorbing the finite-difference truncation noise floor
    /// (and, for single precision, the accumulation roundoff of the
    /// analytic pass).
    pub abs_tolerance: f64,
    /// Test hook: relative perturbation applied to every analytic gradient,
    /// to prove the harness catches a corrupted gradient path.
    pub inject_error: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            abs_tolerance: 1e-9,
            inject_error: 0.0,
        }
    }
}

/// Loss and topology signature of a double-precision scene evaluation. The
/// signature changes whenever a ray gains or loses an intersection, a hit
/// migrates to a different face, a SH channel flips its clamp, a pixel's
/// contributor count changes, or a pixel crosses its target value (the L1
/// kink) — all points where the loss is not differentiable and a
/// finite-difference comparison is meaningless.
fn eval_loss_f64(
    set: &PrimitiveSet<f64>,
    cameras: &[CameraModel<f64>],
    targets: &[ImageBuf<f64>],
    opts: &RenderOptions<f64>,
    ssim_weight: f64,
) -> (f64, u64) {
    let mut total = 0.0;
    let mut signature = 0u64;
    for (cam, target) in cameras.iter().zip(targets) {
        let out = crate::raster::render(set, cam, opts);
        let (loss, _) =
            crate::trainer::loss_with_grad(&out.image, target, ssim_weight, false).unwrap();
        total += loss;
        for (i, (&x, &y)) in out.image.data.iter().zip(&target.data).enumerate() {
            let s = match x.partial_cmp(&y) {
                Some(std::cmp::Ordering::Greater) => 1u64,
                Some(std::cmp::Ordering::Less) => 2u64,
                _ => 3u64,
            };
            signature = signature.wrapping_add((s << (i % 56)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
        signature = signature
            .wrapping_mul(1_000_003)
            .wrapping_add(out.counters.intersected);
        signature = signature
            .wrapping_mul(1_000_003)
            .wrapping_add(out.counters.face_hash);
        if let Some(r) = &out.records {
            let contrib: u64 = r.n_contrib.iter().map(|&c| c as u64).sum();
            signature = signature.wrapping_mul(1_000_003).wrapping_add(contrib);
        }
        let clamps: u64 = out
            .caches
            .iter()
            .map(|c| c.sh_clamped.iter().filter(|&&b| b).count() as u64)
            .sum();
        signature = signature.wrapping_mul(1_000_003).wrapping_add(clamps);
        for &m in &out.filter_masks {
            signature = signature.wrapping_mul(31).wrapping_add(m as u64);
        }
    }
    (total / cameras.len() as f64, signature)
}

/// Central-difference check of every selected parameter. The analytic
/// gradient comes from the pipeline under test at its native precision; the
/// reference differences are always evaluated in double precision with the
/// density denominators frozen at their base values.
pub fn finite_difference_check<T: Real>(
    problem: &FdProblem<'_, T>,
    params: &[ParamRef],
    config: &FdConfig,
) -> Result<FdReport> {
    // Analytic gradients at native precision.
    let mut grads = GradientBuffer::new(problem.set);
    let scale = T::of(1.0 / problem.cameras.len() as f64);
    for (cam, target) in problem.cameras.iter().zip(problem.targets) {
        let mut opts = problem.opts.clone();
        opts.training = true;
        let out = crate::raster::render(problem.set, cam, &opts);
        let (_, d_pixel) =
            crate::trainer::loss_with_grad(&out.image, target, problem.ssim_weight, true)?;
        let mut d_pixel = d_pixel.unwrap();
        for g in d_pixel.iter_mut() {
            *g *= scale;
        }
        backward_pass(problem.set, cam, &opts, &out, &d_pixel, &mut grads)?;
    }

    // Double-precision reference problem with frozen denominators.
    let set64 = problem.set.convert::<f64>();
    let cams64: Vec<CameraModel<f64>> = problem
        .cameras
        .iter()
        .map(convert_camera::<T, f64>)
        .collect();
    let targets64: Vec<ImageBuf<f64>> = problem.targets.iter().map(|t| t.convert()).collect();
    let mut opts64 = convert_options::<T, f64>(&problem.opts);
    opts64.training = true;
    opts64.sigma_denominators = Some(
        (0..set64.len())
            .map(|i| {
                if opts64.use_3d_filter {
                    2.0 * set64.min_effective_distance(i)
                } else {
                    2.0 * set64
                        .distances_of(i)
                        .iter()
                        .fold(f64::INFINITY, |a, &d| a.min(d))
                }
            })
            .collect(),
    );

    let mut entries = Vec::with_capacity(params.len());
    let mut excluded = 0;
    let mut failed = 0;
    for p in params {
        let base = p.get(&set64);
        let h = (1e-4 * base.abs()).max(1e-6);
        let eval_at = |offset: f64| {
            let mut moved = set64.clone();
            p.set_value(&mut moved, base + offset);
            eval_loss_f64(&moved, &cams64, &targets64, &opts64, problem.ssim_weight)
        };
        // Central differences at h and h/2, Richardson-combined to cancel
        // the O(h^2) truncation term (the composite's third derivatives grow
        // like density^3, which plain differences cannot resolve at the
        // adaptive step size).
        let (lp, sig_p) = eval_at(h);
        let (lm, sig_m) = eval_at(-h);
        let (lp2, sig_p2) = eval_at(h / 2.0);
        let (lm2, sig_m2) = eval_at(-h / 2.0);
        let d_h = (lp - lm) / (2.0 * h);
        let d_h2 = (lp2 - lm2) / h;
        let fd = (4.0 * d_h2 - d_h) / 3.0;
        let topology_stable = sig_p == sig_m && sig_p2 == sig_m2 && sig_p == sig_p2;
        let analytic = p.analytic(&grads).to_f64() * (1.0 + config.inject_error);

        let status = if !topology_stable {
            excluded += 1;
            FdStatus::Excluded
        } else {
            let diff = (analytic - fd).abs();
            if diff <= config.tolerance * analytic.abs().max(fd.abs()) + config.abs_tolerance {
                FdStatus::Ok
            } else {
                failed += 1;
                FdStatus::Fail
            }
        };
        let rel_err = if analytic == fd {
            0.0
        } else {
            (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(config.abs_tolerance)
        };
        entries.push(FdEntry {
            primitive: p.primitive(),
            param: p.name(),
            analytic,
            fd,
            rel_err,
            status,
        });
    }
    Ok(FdReport {
        checked: entries.len(),
        excluded,
        failed,
        entries,
        tolerance: config.tolerance,
    })
}

pub fn convert_camera<T: Real, U: Real>(cam: &CameraModel<T>) -> CameraModel<U> {
    let mut rows = [[U::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rows[i][j] = U::of(cam.rotation.rows[i][j].to_f64());
        }
    }
    CameraModel {
        fx: U::of(cam.fx.to_f64()),
        fy: U::of(cam.fy.to_f64()),
        cx: U::of(cam.cx.to_f64()),
        cy: U::of(cam.cy.to_f64()),
        width: cam.width,
        height: cam.height,
        rotation: Mat3::new(rows),
        translation: cam.translation.map(|v| U::of(v.to_f64())),
        znear: U::of(cam.znear.to_f64()),
    }
}

pub fn convert_options<T: Real, U: Real>(opts: &RenderOptions<T>) -> RenderOptions<U> {
    RenderOptions {
        projection: opts.projection,
        kernel_2d: opts.kernel_2d.map(|k| U::of(k.to_f64())),
        use_3d_filter: opts.use_3d_filter,
        background: opts.background.map(|v| U::of(v.to_f64())),
        early_stop: opts.early_stop,
        training: opts.training,
        compute_depth: opts.compute_depth,
        sigma_denominators: opts
            .sigma_denominators
            .as_ref()
            .map(|v| v.iter().map(|&x| U::of(x.to_f64())).collect()),
    }
}

/// Applies the logistic derivative chain used when gradients arrive w.r.t.
/// opacity rather than its logit.
pub fn opacity_logit_chain<T: Real>(logit_value: T, d_alpha: T) -> T {
    let a = sigmoid(logit_value);
    d_alpha * a * (T::one() - a)
}
