//! Deterministic synthetic scenes and cameras shared by tests, examples,
//! and the bundled gradient-check fixture.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::appearance::SH_C0;
use crate::math::{logit, Mat3, Quat, Real, Vec3};
use crate::primitives::{normalize_rotation, PrimitiveKind, PrimitiveSet, SH_FLOATS};
use crate::projection::CameraModel;

/// Camera at the origin looking down +z with the principal point centered on
/// the middle pixel.
pub fn axis_camera<T: Real>(width: usize, height: usize, focal: f64) -> CameraModel<T> {
    CameraModel {
        fx: T::of(focal),
        fy: T::of(focal),
        cx: T::of(width as f64 / 2.0 + 0.5),
        cy: T::of(height as f64 / 2.0 + 0.5),
        width,
        height,
        rotation: Mat3::identity(),
        translation: Vec3::zero(),
        znear: T::of(0.01),
    }
}

/// Camera on a sphere of `radius` around `target`, looking at it.
pub fn orbit_camera<T: Real>(
    width: usize,
    height: usize,
    focal: f64,
    target: Vec3<f64>,
    radius: f64,
    azimuth: f64,
    elevation: f64,
) -> CameraModel<T> {
    let pos = Vec3::new(
        target.x + radius * elevation.cos() * azimuth.cos(),
        target.y + radius * elevation.sin(),
        target.z + radius * elevation.cos() * azimuth.sin(),
    );
    let forward = (target - pos).normalized();
    let up_hint = if forward.y.abs() > 0.99 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let right = up_hint.cross(forward).normalized();
    let down = forward.cross(right);
    let rot = Mat3::from_rows(right, down, forward);
    let translation = -rot.mul_vec(pos);
    let mut rows = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rows[i][j] = T::of(rot.rows[i][j]);
        }
    }
    CameraModel {
        fx: T::of(focal),
        fy: T::of(focal),
        cx: T::of(width as f64 / 2.0),
        cy: T::of(height as f64 / 2.0),
        width,
        height,
        rotation: Mat3::new(rows),
        translation: translation.map(|v| T::of(v)),
        znear: T::of(0.01),
    }
}

/// DC-only coefficients for a base color in [0, 1].
pub fn dc_sh<T: Real>(rgb: Vec3<f64>) -> [T; SH_FLOATS] {
    let mut sh = [T::zero(); SH_FLOATS];
    sh[0] = T::of((rgb.x - 0.5) / SH_C0);
    sh[1] = T::of((rgb.y - 0.5) / SH_C0);
    sh[2] = T::of((rgb.z - 0.5) / SH_C0);
    sh
}

#[derive(Clone, Debug)]
pub struct SceneParams {
    pub kind: PrimitiveKind,
    pub count: usize,
    /// Centers drawn uniformly from this half-extent box around `depth`.
    pub spread: f64,
    pub depth: f64,
    pub size_range: (f64, f64),
    pub alpha_range: (f64, f64),
    /// Magnitude of random non-DC SH coefficients (0 disables).
    pub sh_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            kind: PrimitiveKind::Octahedron,
            count: 6,
            spread: 0.4,
            depth: 4.0,
            size_range: (0.06, 0.22),
            alpha_range: (0.2, 0.6),
            sh_noise: 0.05,
        }
    }
}

/// Random scene in front of an [`axis_camera`].
pub fn random_scene<T: Real>(params: &SceneParams, rng: &mut ChaCha8Rng) -> PrimitiveSet<T> {
    let mut set = PrimitiveSet::new(params.kind);
    set.active_sh_degree = 3;
    let stride = params.kind.distance_count();
    for _ in 0..params.count {
        let center = Vec3::new(
            T::of((rng.random::<f64>() - 0.5) * 2.0 * params.spread),
            T::of((rng.random::<f64>() - 0.5) * 2.0 * params.spread),
            T::of(params.depth + (rng.random::<f64>() - 0.5) * 2.0 * params.spread),
        );
        let q = normalize_rotation(Quat::new(
            T::of(rng.random::<f64>() - 0.5),
            T::of(rng.random::<f64>() - 0.5),
            T::of(rng.random::<f64>() - 0.5),
            T::of(rng.random::<f64>() - 0.5),
        ))
        .unwrap();
        let d: Vec<T> = (0..stride)
            .map(|_| {
                T::of(
                    params.size_range.0
                        + rng.random::<f64>() * (params.size_range.1 - params.size_range.0),
                )
            })
            .collect();
        let alpha = params.alpha_range.0
            + rng.random::<f64>() * (params.alpha_range.1 - params.alpha_range.0);
        let rgb = Vec3::new(
            0.25 + rng.random::<f64>() * 0.5,
            0.25 + rng.random::<f64>() * 0.5,
            0.25 + rng.random::<f64>() * 0.5,
        );
        let mut sh = dc_sh::<T>(rgb);
        if params.sh_noise > 0.0 {
            for v in sh.iter_mut().skip(3) {
                *v = T::of((rng.random::<f64>() - 0.5) * 2.0 * params.sh_noise);
            }
        }
        set.push(center, q, &d, T::of(logit(alpha)), &sh, T::zero());
    }
    set
}

/// Jitters every feature slightly; used to build target images that differ
/// from the scene under test.
pub fn jitter_scene<T: Real>(
    set: &PrimitiveSet<T>,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> PrimitiveSet<T> {
    let mut out = set.clone();
    for c in out.centers.iter_mut() {
        *c += Vec3::new(
            T::of((rng.random::<f64>() - 0.5) * scale),
            T::of((rng.random::<f64>() - 0.5) * scale),
            T::of((rng.random::<f64>() - 0.5) * scale),
        );
    }
    for d in out.distances.iter_mut() {
        *d = (*d * T::of(1.0 + (rng.random::<f64>() - 0.5) * scale)).max(T::of(1e-4));
    }
    for s in out.sh.iter_mut() {
        *s += T::of((rng.random::<f64>() - 0.5) * scale * 0.5);
    }
    out
}
