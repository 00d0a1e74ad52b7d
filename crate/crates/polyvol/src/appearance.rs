//! View-dependent color from real spherical harmonics up to degree 3, with
//! analytic gradients for the coefficients and the view direction.

use crate::math::{Real, Vec3};
use crate::primitives::SH_FLOATS;

pub const SH_BASIS_COUNT: usize = 16;
pub const MAX_SH_DEGREE: u8 = 3;

/// Y_0^0 normalization constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

fn basis_count(degree: u8) -> usize {
    let d = degree.min(MAX_SH_DEGREE) as usize;
    (d + 1) * (d + 1)
}

/// Evaluates the SH basis functions at a unit direction.
pub fn sh_basis<T: Real>(degree: u8, dir: Vec3<T>) -> [T; SH_BASIS_COUNT] {
    let mut b = [T::zero(); SH_BASIS_COUNT];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[0] = T::of(SH_C0);
    if degree >= 1 {
        let c1 = T::of(SH_C1);
        b[1] = -c1 * y;
        b[2] = c1 * z;
        b[3] = -c1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = T::of(SH_C2[0]) * x * y;
        b[5] = T::of(SH_C2[1]) * y * z;
        b[6] = T::of(SH_C2[2]) * (T::of(2.0) * zz - xx - yy);
        b[7] = T::of(SH_C2[3]) * x * z;
        b[8] = T::of(SH_C2[4]) * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = T::of(SH_C3[0]) * y * (T::of(3.0) * xx - yy);
        b[10] = T::of(SH_C3[1]) * x * y * z;
        b[11] = T::of(SH_C3[2]) * y * (T::of(4.0) * zz - xx - yy);
        b[12] = T::of(SH_C3[3]) * z * (T::of(2.0) * zz - T::of(3.0) * xx - T::of(3.0) * yy);
        b[13] = T::of(SH_C3[4]) * x * (T::of(4.0) * zz - xx - yy);
        b[14] = T::of(SH_C3[5]) * z * (xx - yy);
        b[15] = T::of(SH_C3[6]) * x * (xx - T::of(3.0) * yy);
    }
    b
}

/// Gradients of each basis function w.r.t. the direction components.
fn sh_basis_dir_grad<T: Real>(degree: u8, dir: Vec3<T>) -> [Vec3<T>; SH_BASIS_COUNT] {
    let mut g = [Vec3::zero(); SH_BASIS_COUNT];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let zero = T::zero();
    if degree >= 1 {
        let c1 = T::of(SH_C1);
        g[1] = Vec3::new(zero, -c1, zero);
        g[2] = Vec3::new(zero, zero, c1);
        g[3] = Vec3::new(-c1, zero, zero);
    }
    if degree >= 2 {
        let two = T::of(2.0);
        let four = T::of(4.0);
        g[4] = Vec3::new(y, x, zero).scale(T::of(SH_C2[0]));
        g[5] = Vec3::new(zero, z, y).scale(T::of(SH_C2[1]));
        g[6] = Vec3::new(-two * x, -two * y, four * z).scale(T::of(SH_C2[2]));
        g[7] = Vec3::new(z, zero, x).scale(T::of(SH_C2[3]));
        g[8] = Vec3::new(two * x, -two * y, zero).scale(T::of(SH_C2[4]));
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let three = T::of(3.0);
        let six = T::of(6.0);
        let eight = T::of(8.0);
        let four = T::of(4.0);
        let two = T::of(2.0);
        g[9] = Vec3::new(six * x * y, three * xx - three * yy, zero).scale(T::of(SH_C3[0]));
        g[10] = Vec3::new(y * z, x * z, x * y).scale(T::of(SH_C3[1]));
        g[11] = Vec3::new(
            -two * x * y,
            four * zz - xx - three * yy,
            eight * y * z,
        )
        .scale(T::of(SH_C3[2]));
        g[12] = Vec3::new(
            -six * x * z,
            -six * y * z,
            six * zz - three * xx - three * yy,
        )
        .scale(T::of(SH_C3[3]));
        g[13] = Vec3::new(
            four * zz - three * xx - yy,
            -two * x * y,
            eight * x * z,
        )
        .scale(T::of(SH_C3[4]));
        g[14] = Vec3::new(two * x * z, -two * y * z, xx - yy).scale(T::of(SH_C3[5]));
        g[15] = Vec3::new(three * xx - three * yy, -six * x * y, zero).scale(T::of(SH_C3[6]));
    }
    g
}

/// Evaluates view-dependent color: `max(0, sum_c sh_c * Y_c(dir) + 0.5)` per
/// channel. Returns the color and the per-channel clamp mask (true when the
/// channel was clamped to zero).
pub fn eval_sh<T: Real>(sh: &[T], degree: u8, dir: Vec3<T>) -> (Vec3<T>, [bool; 3]) {
    debug_assert_eq!(sh.len(), SH_FLOATS);
    let basis = sh_basis(degree, dir);
    let n = basis_count(degree);
    let half = T::of(0.5);
    let mut rgb = [half; 3];
    for c in 0..n {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v += basis[c] * sh[c * 3 + ch];
        }
    }
    let mut clamped = [false; 3];
    for ch in 0..3 {
        if rgb[ch] < T::zero() {
            rgb[ch] = T::zero();
            clamped[ch] = true;
        }
    }
    (Vec3::new(rgb[0], rgb[1], rgb[2]), clamped)
}

/// Backward pass of [`eval_sh`]. Clamped channels propagate no gradient.
/// Returns gradients for the 48 coefficients and for the (unit) direction.
pub fn sh_backward<T: Real>(
    sh: &[T],
    degree: u8,
    dir: Vec3<T>,
    clamped: [bool; 3],
    d_rgb: Vec3<T>,
    d_sh: &mut [T],
    d_dir: &mut Vec3<T>,
) {
    debug_assert_eq!(sh.len(), SH_FLOATS);
    debug_assert_eq!(d_sh.len(), SH_FLOATS);
    let basis = sh_basis(degree, dir);
    let basis_grad = sh_basis_dir_grad(degree, dir);
    let n = basis_count(degree);
    let d_rgb = [
        if clamped[0] { T::zero() } else { d_rgb.x },
        if clamped[1] { T::zero() } else { d_rgb.y },
        if clamped[2] { T::zero() } else { d_rgb.z },
    ];
    for c in 0..n {
        for ch in 0..3 {
            d_sh[c * 3 + ch] += basis[c] * d_rgb[ch];
            *d_dir += basis_grad[c].scale(sh[c * 3 + ch] * d_rgb[ch]);
        }
    }
}

/// Pulls a direction gradient back to the unnormalized vector `v` where
/// `dir = v / |v|`: projects out the radial component and divides by `|v|`.
pub fn normalize_backward<T: Real>(dir_unit: Vec3<T>, length: T, d_dir: Vec3<T>) -> Vec3<T> {
    let radial = dir_unit.scale(d_dir.dot(dir_unit));
    (d_dir - radial).scale(T::one() / length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit_dir(rng: &mut ChaCha8Rng) -> Vec3<f64> {
        loop {
            let v = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let n = v.norm();
            if n > 0.1 {
                return v.scale(1.0 / n);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let sh = [0.0f64; SH_FLOATS];
        let (rgb, clamped) = eval_sh(&sh, 3, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(rgb, Vec3::new(0.5, 0.5, 0.5));
        assert_eq!(clamped, [false; 3]);
    }

    #[test]
    fn dc_only_scales_by_y00() {
        let mut sh = [0.0f64; SH_FLOATS];
        sh[0] = 0.7;
        sh[1] = -3.0; // green DC drives the channel negative -> clamped
        let (rgb, clamped) = eval_sh(&sh, 0, Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(rgb.x, SH_C0 * 0.7 + 0.5, epsilon = 1e-15);
        assert_eq!(rgb.y, 0.0);
        assert!(clamped[1]);
    }

    #[test]
    fn degree_gating_ignores_higher_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sh = [0.0f64; SH_FLOATS];
        for v in sh.iter_mut().skip(3) {
            *v = rng.random::<f64>() - 0.5;
        }
        let d1 = random_unit_dir(&mut rng);
        let d2 = random_unit_dir(&mut rng);
        let (a, _) = eval_sh(&sh, 0, d1);
        let (b, _) = eval_sh(&sh, 0, d2);
        assert_eq!(a, b);
    }

    #[test]
    fn clamped_channel_gets_zero_coefficient_gradient() {
        let mut sh = [0.0f64; SH_FLOATS];
        sh[0] = -10.0; // red clamped
        let dir = Vec3::new(0.0, 0.0, 1.0);
        let (_, clamped) = eval_sh(&sh, 3, dir);
        assert!(clamped[0]);
        let mut d_sh = [0.0f64; SH_FLOATS];
        let mut d_dir = Vec3::zero();
        sh_backward(&sh, 3, dir, clamped, Vec3::new(1.0, 1.0, 0.0), &mut d_sh, &mut d_dir);
        assert_eq!(d_sh[0], 0.0);
        assert_relative_eq!(d_sh[1], SH_C0, epsilon = 1e-15); // green DC, unclamped
    }

    #[test]
    fn coefficient_and_direction_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut sh = [0.0f64; SH_FLOATS];
            for v in sh.iter_mut() {
                *v = rng.random::<f64>() * 0.4 - 0.2;
            }
            sh[0] += 0.5; // keep channels away from the clamp
            sh[1] += 0.5;
            sh[2] += 0.5;
            let dir = random_unit_dir(&mut rng);
            let d_rgb = Vec3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let (_, clamped) = eval_sh(&sh, 3, dir);
            let mut d_sh = [0.0f64; SH_FLOATS];
            let mut d_dir = Vec3::zero();
            sh_backward(&sh, 3, dir, clamped, d_rgb, &mut d_sh, &mut d_dir);

            let loss = |sh: &[f64], dir: Vec3<f64>| -> f64 {
                let (rgb, _) = eval_sh(sh, 3, dir);
                rgb.dot(d_rgb)
            };
            let h = 1e-6;
            for k in 0..SH_FLOATS {
                let mut plus = sh;
                let mut minus = sh;
                plus[k] += h;
                minus[k] -= h;
                let fd = (loss(&plus, dir) - loss(&minus, dir)) / (2.0 * h);
                assert_relative_eq!(fd, d_sh[k], epsilon = 1e-7, max_relative = 1e-5);
            }
            // Direction gradient (unconstrained; normalization handled by caller).
            let dirs = [
                (Vec3::new(h, 0.0, 0.0), d_dir.x),
                (Vec3::new(0.0, h, 0.0), d_dir.y),
                (Vec3::new(0.0, 0.0, h), d_dir.z),
            ];
            for (dv, analytic) in dirs {
                let fd = (loss(&sh, dir + dv) - loss(&sh, dir - dv)) / (2.0 * h);
                assert_relative_eq!(fd, analytic, epsilon = 1e-7, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn normalize_backward_projects_radial_component() {
        let v = Vec3::new(1.0, 2.0, -0.5);
        let len = v.norm();
        let dir = v.scale(1.0 / len);
        // Gradient along the direction itself vanishes after pull-back.
        let g = normalize_backward(dir, len, dir);
        assert!(g.norm() < 1e-15);
        // Check against finite differences of normalize.
        let d_dir = Vec3::new(0.3, -0.7, 0.2);
        let analytic = normalize_backward(dir, len, d_dir);
        let h = 1e-7;
        for (axis, expect) in [(0, analytic.x), (1, analytic.y), (2, analytic.z)] {
            let mut vp = v;
            let mut vm = v;
            match axis {
                0 => {
                    vp.x += h;
                    vm.x -= h;
                }
                1 => {
                    vp.y += h;
                    vm.y -= h;
                }
                _ => {
                    vp.z += h;
                    vm.z -= h;
                }
            }
            let f = |u: Vec3<f64>| u.normalized().dot(d_dir);
            let fd = (f(vp) - f(vm)) / (2.0 * h);
            assert_relative_eq!(fd, expect, epsilon = 1e-8);
        }
    }
}
