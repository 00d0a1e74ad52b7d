//! End-to-end gradient checks of the full render + loss pipeline against
//! central finite differences, plus structural gradient identities.

mod common;

use common::{axis_camera, jitter_scene, random_scene, SceneParams};
use polyvol::backward::{
    backward_pass, finite_difference_check, FdConfig, FdProblem, GradientBuffer, ParamRef,
};
use polyvol::math::Vec3;
use polyvol::primitives::PrimitiveKind;
use polyvol::raster::{render, RenderOptions};
use polyvol::trainer::loss_with_grad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_scene(kind: PrimitiveKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SceneParams {
        kind,
        count: 4,
        ..Default::default()
    };
    let set = random_scene::<f64>(&params, &mut rng);
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let target_scene = jitter_scene(&set, &mut rng, 0.05);
    let opts = RenderOptions::default();
    let target = render(&target_scene, &cam, &opts).image;

    let problem = FdProblem {
        set: &set,
        cameras: std::slice::from_ref(&cam),
        targets: std::slice::from_ref(&target),
        opts,
        ssim_weight: 0.2,
    };
    let all = ParamRef::all(set.len(), set.distance_stride(), 48);
    let report = finite_difference_check(
        &problem,
        &all,
        &FdConfig {
            tolerance: 1e-5,
            ..Default::default()
        },
    )
    .unwrap();
    for e in &report.entries {
        assert_ne!(
            e.status,
            polyvol::backward::FdStatus::Fail,
            "{}: analytic {} vs fd {} (rel {})",
            e.param,
            e.analytic,
            e.fd,
            e.rel_err
        );
    }
    // The check must actually exercise gradients, not pass vacuously.
    let live = report
        .entries
        .iter()
        .filter(|e| e.analytic.abs() > 1e-7)
        .count();
    assert!(live > report.entries.len() / 4, "only {live} live params");
}

#[test]
fn octahedron_gradients_match_finite_differences() {
    check_scene(PrimitiveKind::Octahedron, 101);
    check_scene(PrimitiveKind::Octahedron, 102);
}

#[test]
fn tetrahedron_gradients_match_finite_differences() {
    check_scene(PrimitiveKind::Tetrahedron, 103);
}

#[test]
fn exact_projection_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let params = SceneParams {
        count: 3,
        ..Default::default()
    };
    let set = random_scene::<f64>(&params, &mut rng);
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let target_scene = jitter_scene(&set, &mut rng, 0.05);
    let opts = RenderOptions {
        projection: polyvol::ProjectionMode::Exact,
        ..Default::default()
    };
    let target = render(&target_scene, &cam, &opts).image;
    let problem = FdProblem {
        set: &set,
        cameras: std::slice::from_ref(&cam),
        targets: std::slice::from_ref(&target),
        opts,
        ssim_weight: 0.2,
    };
    let all = ParamRef::all(set.len(), set.distance_stride(), 4);
    let report = finite_difference_check(
        &problem,
        &all,
        &FdConfig {
            tolerance: 1e-5,
            ..Default::default()
        },
    )
    .unwrap();
    let failures: Vec<String> = report
        .entries
        .iter()
        .filter(|e| e.status == polyvol::backward::FdStatus::Fail)
        .map(|e| format!("{}: {} vs {} (rel {})", e.param, e.analytic, e.fd, e.rel_err))
        .collect();
    assert!(report.passed(), "{}", failures.join("\n"));
}

#[test]
fn injected_gradient_error_is_caught() {
    // Negative control: a corrupted gradient path must not pass the check.
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let set = random_scene::<f64>(&SceneParams::default(), &mut rng);
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let target = render(&jitter_scene(&set, &mut rng, 0.05), &cam, &RenderOptions::default()).image;
    let problem = FdProblem {
        set: &set,
        cameras: std::slice::from_ref(&cam),
        targets: std::slice::from_ref(&target),
        opts: RenderOptions::default(),
        ssim_weight: 0.2,
    };
    let params = ParamRef::all(set.len(), set.distance_stride(), 3);
    let report = finite_difference_check(
        &problem,
        &params,
        &FdConfig {
            tolerance: 1e-5,
            inject_error: 0.05,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!report.passed());
}

#[test]
fn zero_opacity_primitive_has_zero_geometric_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut set = random_scene::<f64>(
        &SceneParams {
            count: 2,
            ..Default::default()
        },
        &mut rng,
    );
    // Drive one primitive fully transparent (logit -> very negative).
    set.opacity_logits[1] = -40.0;
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let mut opts = RenderOptions::default();
    opts.training = true;
    let out = render(&set, &cam, &opts);
    let target = polyvol::ImageBuf::filled(32, 32, Vec3::splat(0.25));
    let (_, d_pixel) = loss_with_grad(&out.image, &target, 0.2, true).unwrap();
    let mut grads = GradientBuffer::new(&set);
    backward_pass(&set, &cam, &opts, &out, &d_pixel.unwrap(), &mut grads).unwrap();
    assert!(grads.d_center[1].norm() < 1e-14);
    assert!(grads.d_distance[set.distance_stride()..2 * set.distance_stride()]
        .iter()
        .all(|&g| g.abs() < 1e-14));
    assert!(grads.d_rotation[1].iter().all(|&g| g.abs() < 1e-14));
}

#[test]
fn background_gradient_equals_final_transmittance() {
    // The rendered image is affine in the background color with coefficient
    // T per pixel; check the identity exactly with two renders.
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let set = random_scene::<f64>(&SceneParams::default(), &mut rng);
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let mut a = RenderOptions::default();
    a.background = Vec3::splat(0.0);
    a.early_stop = false;
    let mut b = a.clone();
    b.background = Vec3::splat(1.0);
    let out_a = render(&set, &cam, &a);
    let out_b = render(&set, &cam, &b);
    for (i, (&t, px)) in out_a
        .final_t
        .iter()
        .zip(out_a.image.data.chunks_exact(3))
        .enumerate()
    {
        let diff = out_b.image.data[i * 3] - px[0];
        assert!((diff - t).abs() < 1e-12, "pixel {i}: {diff} vs {t}");
    }
}

#[test]
fn color_gradient_partition_of_unity() {
    // Summing per-contribution color gradients plus the background path
    // reproduces the pixel gradient (linearity of compositing in colors).
    use polyvol::backward::blend_backward;
    let contribs = vec![
        (0.3, Vec3::new(0.2, 0.4, 0.6)),
        (0.5, Vec3::new(0.8, 0.1, 0.3)),
        (0.2, Vec3::new(0.5, 0.5, 0.5)),
    ];
    let bg = Vec3::splat(0.7);
    let final_t = contribs.iter().fold(1.0, |t, &(o, _)| t * (1.0 - o));
    let d_pixel = Vec3::new(0.4, -0.2, 1.0);
    let grads = blend_backward(&contribs, bg, final_t, d_pixel);
    // d pixel/d c_k = T_k o_k; sum over k plus T_final equals 1 per channel.
    let mut weight = Vec3::zero();
    for (g, &(o, _)) in grads.iter().zip(&contribs) {
        // g.1 = d_pixel * T_k o_k, so T_k o_k = g.1 / d_pixel componentwise.
        weight += Vec3::new(g.1.x / d_pixel.x, g.1.y / d_pixel.y, g.1.z / d_pixel.z);
        let _ = o;
    }
    weight += Vec3::splat(final_t);
    assert!((weight - Vec3::splat(1.0)).norm() < 1e-12);
}

#[test]
fn quaternion_gradients_orthogonal_to_unit_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let set = random_scene::<f64>(&SceneParams::default(), &mut rng);
    let cam = axis_camera::<f64>(32, 32, 100.0);
    let mut opts = RenderOptions::default();
    opts.training = true;
    let out = render(&set, &cam, &opts);
    let target = render(&jitter_scene(&set, &mut rng, 0.04), &cam, &opts).image;
    let (_, d_pixel) = loss_with_grad(&out.image, &target, 0.2, true).unwrap();
    let mut grads = GradientBuffer::new(&set);
    backward_pass(&set, &cam, &opts, &out, &d_pixel.unwrap(), &mut grads).unwrap();
    for i in 0..set.len() {
        let q = set.rotations[i].to_array();
        let g = grads.d_rotation[i];
        let dot: f64 = (0..4).map(|k| q[k] * g[k]).sum();
        let gnorm: f64 = (0..4).map(|k| g[k] * g[k]).sum::<f64>().sqrt();
        if gnorm > 1e-12 {
            assert!(dot.abs() / gnorm < 1e-6, "primitive {i}: dot {dot}");
        }
    }
}
