//! Image metrics: PSNR and SSIM (11x11 Gaussian window, sigma 1.5), with an
//! analytic SSIM gradient for the training loss. One implementation is
//! shared by the trainer and evaluation paths.

use crate::error::Result;
use crate::imagebuf::ImageBuf;
use crate::math::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR in dB for images in [0, 1]; `None` for identical images (infinite).
pub fn compute_psnr<T: Real>(a: &ImageBuf<T>, b: &ImageBuf<T>) -> Result<Option<f64>> {
    a.same_shape(b)?;
    let mut mse = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x.to_f64() - y.to_f64();
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (1.0 / mse).log10()))
}

fn gaussian_kernel<T: Real>() -> [T; SSIM_WINDOW] {
    let mut k = [T::zero(); SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    let mut raw = [0.0f64; SSIM_WINDOW];
    for (i, r) in raw.iter_mut().enumerate() {
        *r = (-((i as f64 - c) * (i as f64 - c)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *r;
    }
    for i in 0..SSIM_WINDOW {
        k[i] = T::of(raw[i] / sum);
    }
    k
}

/// Separable Gaussian blur with zero padding, per channel.
fn blur<T: Real>(src: &[T], width: usize, height: usize, channels: usize) -> Vec<T> {
    let kernel = gaussian_kernel::<T>();
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![T::zero(); src.len()];
    // Horizontal.
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = T::zero();
                for (k, &w) in kernel.iter().enumerate() {
                    let xx = x as isize + k as isize - r as isize;
                    if xx < 0 || xx >= width as isize {
                        continue;
                    }
                    acc += w * src[(y * width + xx as usize) * channels + c];
                }
                tmp[(y * width + x) * channels + c] = acc;
            }
        }
    }
    // Vertical.
    let mut out = vec![T::zero(); src.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = T::zero();
                for (k, &w) in kernel.iter().enumerate() {
                    let yy = y as isize + k as isize - r as isize;
                    if yy < 0 || yy >= height as isize {
                        continue;
                    }
                    acc += w * tmp[(yy as usize * width + x) * channels + c];
                }
                out[(y * width + x) * channels + c] = acc;
            }
        }
    }
    out
}

/// Mean SSIM over pixels and channels, optionally with the gradient w.r.t.
/// the first image.
pub fn compute_ssim_with_grad<T: Real>(
    x: &ImageBuf<T>,
    y: &ImageBuf<T>,
    want_grad: bool,
) -> Result<(f64, Option<Vec<T>>)> {
    x.same_shape(y)?;
    let (w, h) = (x.width, x.height);
    let n = w * h * 3;
    let x2: Vec<T> = x.data.iter().map(|&v| v * v).collect();
    let y2: Vec<T> = y.data.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.data.iter().zip(&y.data).map(|(&a, &b)| a * b).collect();

    let mu_x = blur(&x.data, w, h, 3);
    let mu_y = blur(&y.data, w, h, 3);
    let m_x2 = blur(&x2, w, h, 3);
    let m_y2 = blur(&y2, w, h, 3);
    let m_xy = blur(&xy, w, h, 3);

    let c1 = T::of(SSIM_C1);
    let c2 = T::of(SSIM_C2);
    let two = T::of(2.0);

    let mut ssim_sum = 0.0f64;
    // Per-pixel coefficient maps feeding the backward convolution.
    let mut p1 = want_grad.then(|| vec![T::zero(); n]);
    let mut p2 = want_grad.then(|| vec![T::zero(); n]);
    let mut p3 = want_grad.then(|| vec![T::zero(); n]);

    for i in 0..n {
        let mx = mu_x[i];
        let my = mu_y[i];
        let sx = m_x2[i] - mx * mx;
        let sy = m_y2[i] - my * my;
        let sxy = m_xy[i] - mx * my;
        let a1 = two * mx * my + c1;
        let a2 = two * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sx + sy + c2;
        let d = b1 * b2;
        let s = a1 * a2 / d;
        ssim_sum += s.to_f64();
        if let (Some(p1), Some(p2), Some(p3)) = (p1.as_mut(), p2.as_mut(), p3.as_mut()) {
            // dS/dx(p) = conv(G, P1) + y(p) conv(G, P2) + x(p) conv(G, P3)
            // where P1 collects the mu-terms, P2 multiplies y(p), and P3
            // multiplies x(p).
            let t1 = two * my * a2 / d;
            let t2 = two * a1 / d;
            let t3 = s * two * mx / b1;
            let t4 = s * two / b2;
            p1[i] = t1 - t2 * my - t3 + t4 * mx;
            p2[i] = t2;
            p3[i] = -t4;
        }
    }
    let mean = ssim_sum / n as f64;

    let grad = if want_grad {
        let g1 = blur(&p1.unwrap(), w, h, 3);
        let g2 = blur(&p2.unwrap(), w, h, 3);
        let g3 = blur(&p3.unwrap(), w, h, 3);
        let inv_n = T::of(1.0 / n as f64);
        let mut g = vec![T::zero(); n];
        for i in 0..n {
            g[i] = (g1[i] + y.data[i] * g2[i] + x.data[i] * g3[i]) * inv_n;
        }
        Some(g)
    } else {
        None
    };
    Ok((mean, grad))
}

pub fn compute_ssim<T: Real>(a: &ImageBuf<T>, b: &ImageBuf<T>) -> Result<f64> {
    Ok(compute_ssim_with_grad(a, b, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageBuf<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageBuf::new(w, h);
        for v in img.data.iter_mut() {
            *v = rng.random::<f64>();
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuf::<f64>::filled(4, 4, crate::math::Vec3::splat(0.0));
        let b = ImageBuf::<f64>::filled(4, 4, crate::math::Vec3::splat(0.1));
        // MSE = 0.01 -> 20 dB.
        assert_relative_eq!(compute_psnr(&a, &b).unwrap().unwrap(), 20.0, epsilon = 1e-9);
        assert!(compute_psnr(&a, &a).unwrap().is_none());
        // Symmetric.
        assert_eq!(
            compute_psnr(&a, &b).unwrap(),
            compute_psnr(&b, &a).unwrap()
        );
        let c = ImageBuf::<f64>::new(3, 4);
        assert!(compute_psnr(&a, &c).is_err());
    }

    #[test]
    fn ssim_of_image_with_itself_is_one() {
        let img = random_image(24, 16, 5);
        let s = compute_ssim(&img, &img).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_penalizes_differences() {
        let a = random_image(24, 24, 6);
        let mut b = a.clone();
        for (i, v) in b.data.iter_mut().enumerate() {
            if i % 7 == 0 {
                *v = (*v + 0.5).min(1.0);
            }
        }
        let s = compute_ssim(&a, &b).unwrap();
        assert!(s < 0.99);
        assert!(s > -1.0);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let x = random_image(12, 10, 7);
        let y = random_image(12, 10, 8);
        let (_, grad) = compute_ssim_with_grad(&x, &y, true).unwrap();
        let grad = grad.unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let i = (rng.random::<f64>() * x.data.len() as f64) as usize;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            let sp = compute_ssim(&xp, &y).unwrap();
            let sm = compute_ssim(&xm, &y).unwrap();
            let fd = (sp - sm) / (2.0 * h);
            assert_relative_eq!(fd, grad[i], epsilon = 1e-8, max_relative = 1e-6);
        }
    }
}
