//! Developer harness for the synthetic-recovery scenario: prints held-out
//! PSNR for a configuration sweep. Not part of the test suite.

use polyvol::backward::convert_camera;
use polyvol::fixtures::{dc_sh, orbit_camera};
use polyvol::imagebuf::ImageBuf;
use polyvol::math::{logit, Quat, Vec3};
use polyvol::metrics::compute_psnr;
use polyvol::oracle::{render_exact, OracleOptions};
use polyvol::population::{init_from_sfm, PopulationConfig};
use polyvol::primitives::{normalize_rotation, PrimitiveKind, PrimitiveSet};
use polyvol::projection::CameraModel;
use polyvol::raster::{render, RenderOptions};
use polyvol::trainer::{train_loop, TrainConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn ground_truth(kind: PrimitiveKind, seed: u64) -> PrimitiveSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = PrimitiveSet::new(kind);
    gt.active_sh_degree = 0;
    for ix in 0..4 {
        for iy in 0..4 {
            for iz in 0..4 {
                let cell = |i: usize| -0.75 + 0.5 * i as f64;
                let center = Vec3::new(
                    cell(ix) + (rng.random::<f64>() - 0.5) * 0.3,
                    cell(iy) + (rng.random::<f64>() - 0.5) * 0.3,
                    cell(iz) + (rng.random::<f64>() - 0.5) * 0.3,
                );
                let q = normalize_rotation(Quat::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ))
                .unwrap();
                let d: Vec<f64> = (0..kind.distance_count())
                    .map(|_| 0.09 + rng.random::<f64>() * 0.09)
                    .collect();
                let alpha = 0.65 + rng.random::<f64>() * 0.3;
                let rgb = Vec3::new(
                    0.15 + rng.random::<f64>() * 0.7,
                    0.15 + rng.random::<f64>() * 0.7,
                    0.15 + rng.random::<f64>() * 0.7,
                );
                gt.push(center, q, &d, logit(alpha), &dc_sh(rgb), 0.0);
            }
        }
    }
    gt
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = if args.iter().any(|a| a == "tet") {
        PrimitiveKind::Tetrahedron
    } else {
        PrimitiveKind::Octahedron
    };
    let points_per: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let noise: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.08);
    let grad_threshold: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4e-4);
    let iterations: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4000);

    let gt = ground_truth(kind, 500);
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let cameras64: Vec<CameraModel<f64>> = (0..40)
        .map(|k| {
            let az = golden * k as f64;
            let el = -0.45 + 0.9 * (k as f64 + 0.5) / 40.0;
            orbit_camera::<f64>(128, 128, 120.0, Vec3::zero(), 4.5, az, el)
        })
        .collect();
    let t0 = std::time::Instant::now();
    let gt_images64: Vec<ImageBuf<f64>> = cameras64
        .iter()
        .map(|cam| render_exact(&gt, cam, &OracleOptions::default()).image)
        .collect();
    eprintln!("oracle GT render: {:.1}s", t0.elapsed().as_secs_f64());

    let cameras: Vec<CameraModel<f32>> = cameras64
        .iter()
        .map(convert_camera::<f64, f32>)
        .collect();
    let images: Vec<ImageBuf<f32>> = gt_images64.iter().map(|i| i.convert()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let c0 = polyvol::appearance::SH_C0;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for i in 0..gt.len() {
        let sh = gt.sh_of(i);
        let rgb = Vec3::new(
            (sh[0] * c0 + 0.5) as f32,
            (sh[1] * c0 + 0.5) as f32,
            (sh[2] * c0 + 0.5) as f32,
        );
        for _ in 0..points_per {
            points.push(Vec3::new(
                (gt.centers[i].x + (rng.random::<f64>() - 0.5) * 2.0 * noise) as f32,
                (gt.centers[i].y + (rng.random::<f64>() - 0.5) * 2.0 * noise) as f32,
                (gt.centers[i].z + (rng.random::<f64>() - 0.5) * 2.0 * noise) as f32,
            ));
            colors.push(rgb);
        }
    }
    let init = init_from_sfm(kind, &points, &colors, &mut rng).unwrap();
    eprintln!(
        "init: {} primitives, mean distance {:.3}",
        init.len(),
        init.distances.iter().map(|d| *d as f64).sum::<f64>() / init.distances.len() as f64
    );

    let config = TrainConfig {
        iterations,
        population: PopulationConfig {
            densify_start: 500,
            densify_stop: iterations / 2,
            grad_threshold,
            opacity_reset_interval: 0,
            ..Default::default()
        },
        log_interval: 500,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let outcome = train_loop(
        init,
        &cameras[..36],
        &images[..36],
        &config,
        |line| {
            if line.contains("event=densify") || line.contains("iter=") {
                eprintln!("  {line}");
            }
        },
        |_, _| Ok(()),
    )
    .unwrap();
    eprintln!("train: {:.1}s", t0.elapsed().as_secs_f64());

    let mut opts: RenderOptions<f32> = config.render_options();
    opts.training = false;
    let mut sum = 0.0;
    for k in 36..40 {
        let out = render(&outcome.set, &cameras[k], &opts);
        let p = compute_psnr(&out.image, &images[k]).unwrap().unwrap_or(f64::INFINITY);
        eprintln!("  test view {k}: {p:.2} dB");
        sum += p;
    }
    println!(
        "RESULT kind={} points_per={points_per} noise={noise} thr={grad_threshold} iters={iterations}: \
         mean held-out PSNR {:.2} dB, {} primitives",
        kind.name(),
        sum / 4.0,
        outcome.set.len()
    );
}
