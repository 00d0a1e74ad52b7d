//! Loss computation, per-parameter-group Adam, learning-rate schedules, and
//! the training loop with population-control hooks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward_pass, GradientBuffer};
use crate::error::{Error, Result};
use crate::imagebuf::ImageBuf;
use crate::math::{Real, Vec3};
use crate::metrics::{compute_psnr, compute_ssim_with_grad};
use crate::population::{
    densify_and_prune, mcmc_step, opacity_reset, update_smoothing_filter, DensifyStats,
    PopulationConfig, RowSource,
};
use crate::primitives::{PrimitiveSet, SH_FLOATS};
use crate::projection::{CameraModel, ProjectionMode};
use crate::raster::{render, RenderOptions};

/// How the scalar scene-size proxy is measured from the training cameras.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtentMode {
    /// Maximum distance between a camera position and the mean camera
    /// position (the default).
    CameraToMean,
    /// Maximum pairwise camera distance.
    MaxPairwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    Black,
    White,
}

impl Background {
    pub fn color<T: Real>(self) -> Vec3<T> {
        match self {
            Background::Black => Vec3::zero(),
            Background::White => Vec3::splat(T::one()),
        }
    }
}

/// Training hyperparameters. Learning-rate defaults follow the reported
/// table; position and distance rates are additionally scaled by the scene
/// extent at use.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_color: f64,
    pub lr_sh: f64,
    pub lr_opacity: f64,
    pub lr_rotation: f64,
    /// Multiplied by the scene extent.
    pub lr_distance: f64,
    /// Position schedule endpoints, multiplied by the scene extent.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub ssim_weight: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub background: Background,
    pub aa_2d: bool,
    pub kernel_2d: f64,
    pub aa_3d: bool,
    pub ray_space: bool,
    pub sh_ramp_interval: usize,
    pub extent_mode: ExtentMode,
    pub population: PopulationConfig,
    pub checkpoint_iterations: Vec<usize>,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            lr_color: 2.5e-3,
            lr_sh: 1.25e-4,
            lr_opacity: 2.5e-2,
            lr_rotation: 1e-3,
            lr_distance: 1e-4 / 2.6,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            ssim_weight: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-15,
            seed: 0,
            background: Background::Black,
            aa_2d: true,
            kernel_2d: crate::raster::DEFAULT_KERNEL_2D,
            aa_3d: true,
            ray_space: true,
            sh_ramp_interval: 1000,
            extent_mode: ExtentMode::CameraToMean,
            population: PopulationConfig::default(),
            checkpoint_iterations: Vec::new(),
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn render_options<T: Real>(&self) -> RenderOptions<T> {
        RenderOptions {
            projection: if self.ray_space {
                ProjectionMode::Approximate
            } else {
                ProjectionMode::Exact
            },
            kernel_2d: self.aa_2d.then(|| T::of(self.kernel_2d)),
            use_3d_filter: self.aa_3d,
            background: self.background.color(),
            early_stop: true,
            training: false,
            compute_depth: false,
            sigma_denominators: None,
        }
    }
}

/// Scene-size proxy from the training cameras.
#[derive(Clone, Copy, Debug)]
pub struct SceneExtent<T> {
    pub extent: T,
    pub center: Vec3<T>,
}

pub fn scene_extent<T: Real>(cameras: &[CameraModel<T>], mode: ExtentMode) -> SceneExtent<T> {
    let positions: Vec<Vec3<T>> = cameras.iter().map(|c| c.position()).collect();
    let n = T::of_usize(positions.len().max(1));
    let center = positions
        .iter()
        .fold(Vec3::zero(), |a, &p| a + p)
        .scale(T::one() / n);
    let extent = match mode {
        ExtentMode::CameraToMean => positions
            .iter()
            .fold(T::zero(), |a, &p| a.max((p - center).norm())),
        ExtentMode::MaxPairwise => {
            let mut best = T::zero();
            for (i, &a) in positions.iter().enumerate() {
                for &b in positions.iter().skip(i + 1) {
                    best = best.max((a - b).norm());
                }
            }
            best
        }
    };
    SceneExtent {
        // Degenerate camera rigs (single pose) fall back to unit scale.
        extent: if extent > T::zero() { extent } else { T::one() },
        center,
    }
}

/// Combined loss `L = (1 - w) * L1 + w * (1 - SSIM)` with an optional
/// analytic gradient w.r.t. the rendered image.
pub fn loss_with_grad<T: Real>(
    rendered: &ImageBuf<T>,
    target: &ImageBuf<T>,
    ssim_weight: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<T>>)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len();
    let mut l1 = 0.0f64;
    for (&x, &y) in rendered.data.iter().zip(&target.data) {
        l1 += (x - y).abs().to_f64();
    }
    l1 /= n as f64;
    let (ssim, ssim_grad) = compute_ssim_with_grad(rendered, target, want_grad)?;
    let loss = (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim);
    let grad = if want_grad {
        let ssim_grad = ssim_grad.unwrap();
        let w_l1 = T::of((1.0 - ssim_weight) / n as f64);
        let w_ssim = T::of(ssim_weight);
        let mut g = vec![T::zero(); n];
        for i in 0..n {
            let diff = rendered.data[i] - target.data[i];
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            g[i] = w_l1 * sign - w_ssim * ssim_grad[i];
        }
        Some(g)
    } else {
        None
    };
    Ok((loss, grad))
}

/// Log-linear position learning rate from `lr_init * extent` down to
/// `lr_final * extent` across the run.
pub fn position_lr(iter: usize, config: &TrainConfig, extent: f64) -> f64 {
    let t = if config.iterations == 0 {
        0.0
    } else {
        (iter as f64 / config.iterations as f64).clamp(0.0, 1.0)
    };
    let ratio = config.lr_position_final / config.lr_position_init;
    config.lr_position_init * ratio.powf(t) * extent
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    /// One bias-corrected update over a flattened parameter group. Returns
    /// false (leaving parameters untouched) when any gradient is non-finite.
    pub fn step_group(
        &mut self,
        params: &mut [T],
        grads: &[T],
        lr: T,
        beta1: T,
        beta2: T,
        eps: T,
    ) -> bool {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (T::one() - beta1) * g;
            *v = beta2 * *v + (T::one() - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        true
    }

    /// Rebuilds moment arrays after a population edit: survivors keep their
    /// moments, fresh rows start at zero. `width` is the number of scalars
    /// per primitive in this group.
    pub fn apply_edit(&mut self, script: &[RowSource], width: usize) {
        let mut m = vec![T::zero(); script.len() * width];
        let mut v = vec![T::zero(); script.len() * width];
        for (dst, src) in script.iter().enumerate() {
            if !src.fresh {
                for k in 0..width {
                    m[dst * width + k] = self.m[src.old * width + k];
                    v[dst * width + k] = self.v[src.old * width + k];
                }
            }
        }
        self.m = m;
        self.v = v;
    }

    pub fn zero_rows(&mut self, rows: &[usize], width: usize) {
        for &r in rows {
            for k in 0..width {
                self.m[r * width + k] = T::zero();
                self.v[r * width + k] = T::zero();
            }
        }
    }
}

/// Minimum raw distance enforced after every step.
pub const DISTANCE_FLOOR: f64 = 1e-7;

/// Adam states for the six parameter groups.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub center: AdamState<T>,
    pub rotation: AdamState<T>,
    pub distance: AdamState<T>,
    pub opacity: AdamState<T>,
    pub sh_dc: AdamState<T>,
    pub sh_rest: AdamState<T>,
}

/// Per-group learning rates for one iteration.
#[derive(Clone, Copy, Debug)]
pub struct GroupLrs {
    pub center: f64,
    pub rotation: f64,
    pub distance: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl GroupLrs {
    pub fn at(config: &TrainConfig, iter: usize, extent: f64) -> Self {
        Self {
            center: position_lr(iter, config, extent),
            rotation: config.lr_rotation,
            distance: config.lr_distance * extent,
            opacity: config.lr_opacity,
            sh_dc: config.lr_color,
            sh_rest: config.lr_sh,
        }
    }
}

impl<T: Real> Optimizer<T> {
    pub fn new(set: &PrimitiveSet<T>) -> Self {
        let n = set.len();
        let stride = set.distance_stride();
        Self {
            center: AdamState::new(n * 3),
            rotation: AdamState::new(n * 4),
            distance: AdamState::new(n * stride),
            opacity: AdamState::new(n),
            sh_dc: AdamState::new(n * 3),
            sh_rest: AdamState::new(n * (SH_FLOATS - 3)),
        }
    }

    /// Applies one Adam step to every group and enforces the post-step
    /// clamps (positive distances, unit rotations). Returns the names of
    /// groups skipped because of non-finite gradients.
    pub fn step(
        &mut self,
        set: &mut PrimitiveSet<T>,
        grads: &GradientBuffer<T>,
        lrs: &GroupLrs,
        config: &TrainConfig,
    ) -> Vec<&'static str> {
        let b1 = T::of(config.adam_beta1);
        let b2 = T::of(config.adam_beta2);
        let eps = T::of(config.adam_eps);
        let n = set.len();
        let stride = set.distance_stride();
        let mut skipped = Vec::new();

        // Centers.
        let mut flat: Vec<T> = Vec::with_capacity(n * 3);
        for c in &set.centers {
            flat.extend_from_slice(&c.to_array());
        }
        let g: Vec<T> = grads.d_center.iter().flat_map(|g| g.to_array()).collect();
        if self
            .center
            .step_group(&mut flat, &g, T::of(lrs.center), b1, b2, eps)
        {
            for (i, c) in set.centers.iter_mut().enumerate() {
                *c = Vec3::new(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
            }
        } else {
            skipped.push("center");
        }

        // Rotations (renormalized afterwards).
        let mut flat: Vec<T> = set.rotations.iter().flat_map(|q| q.to_array()).collect();
        let g: Vec<T> = grads.d_rotation.iter().flatten().copied().collect();
        if self
            .rotation
            .step_group(&mut flat, &g, T::of(lrs.rotation), b1, b2, eps)
        {
            for (i, q) in set.rotations.iter_mut().enumerate() {
                let raw = crate::math::Quat::new(
                    flat[i * 4],
                    flat[i * 4 + 1],
                    flat[i * 4 + 2],
                    flat[i * 4 + 3],
                );
                *q = crate::primitives::normalize_rotation(raw).unwrap_or(*q);
            }
        } else {
            skipped.push("rotation");
        }

        // Distances (clamped to stay strictly positive).
        let mut flat = set.distances.clone();
        if self
            .distance
            .step_group(&mut flat, &grads.d_distance, T::of(lrs.distance), b1, b2, eps)
        {
            let floor = T::of(DISTANCE_FLOOR);
            for d in flat.iter_mut() {
                *d = d.max(floor);
            }
            set.distances = flat;
        } else {
            skipped.push("distance");
        }
        debug_assert_eq!(set.distances.len(), n * stride);

        // Opacity logits.
        let mut flat = set.opacity_logits.clone();
        if self
            .opacity
            .step_group(&mut flat, &grads.d_opacity, T::of(lrs.opacity), b1, b2, eps)
        {
            set.opacity_logits = flat;
        } else {
            skipped.push("opacity");
        }

        // SH: DC and rest are separate groups with separate rates.
        let mut dc: Vec<T> = Vec::with_capacity(n * 3);
        let mut rest: Vec<T> = Vec::with_capacity(n * (SH_FLOATS - 3));
        let mut g_dc: Vec<T> = Vec::with_capacity(n * 3);
        let mut g_rest: Vec<T> = Vec::with_capacity(n * (SH_FLOATS - 3));
        for i in 0..n {
            dc.extend_from_slice(&set.sh[i * SH_FLOATS..i * SH_FLOATS + 3]);
            rest.extend_from_slice(&set.sh[i * SH_FLOATS + 3..(i + 1) * SH_FLOATS]);
            g_dc.extend_from_slice(&grads.d_sh[i * SH_FLOATS..i * SH_FLOATS + 3]);
            g_rest.extend_from_slice(&grads.d_sh[i * SH_FLOATS + 3..(i + 1) * SH_FLOATS]);
        }
        let ok_dc = self
            .sh_dc
            .step_group(&mut dc, &g_dc, T::of(lrs.sh_dc), b1, b2, eps);
        let ok_rest = self
            .sh_rest
            .step_group(&mut rest, &g_rest, T::of(lrs.sh_rest), b1, b2, eps);
        if ok_dc || ok_rest {
            for i in 0..n {
                if ok_dc {
                    set.sh[i * SH_FLOATS..i * SH_FLOATS + 3]
                        .copy_from_slice(&dc[i * 3..(i + 1) * 3]);
                }
                if ok_rest {
                    set.sh[i * SH_FLOATS + 3..(i + 1) * SH_FLOATS].copy_from_slice(
                        &rest[i * (SH_FLOATS - 3)..(i + 1) * (SH_FLOATS - 3)],
                    );
                }
            }
        }
        if !ok_dc {
            skipped.push("sh_dc");
        }
        if !ok_rest {
            skipped.push("sh_rest");
        }
        skipped
    }

    pub fn apply_edit(&mut self, script: &[RowSource], stride: usize) {
        self.center.apply_edit(script, 3);
        self.rotation.apply_edit(script, 4);
        self.distance.apply_edit(script, stride);
        self.opacity.apply_edit(script, 1);
        self.sh_dc.apply_edit(script, 3);
        self.sh_rest.apply_edit(script, SH_FLOATS - 3);
    }

    pub fn zero_rows(&mut self, rows: &[usize], stride: usize) {
        self.center.zero_rows(rows, 3);
        self.rotation.zero_rows(rows, 4);
        self.distance.zero_rows(rows, stride);
        self.opacity.zero_rows(rows, 1);
        self.sh_dc.zero_rows(rows, 3);
        self.sh_rest.zero_rows(rows, SH_FLOATS - 3);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

pub struct TrainOutcome<T> {
    pub set: PrimitiveSet<T>,
    pub final_loss: f64,
    pub iterations_run: usize,
    /// Maximum population observed over the run.
    pub peak_population: usize,
}

/// Runs the optimization loop. `log` receives line-delimited structured
/// records; `on_checkpoint` fires at configured iterations and at the end.
pub fn train_loop<T: Real>(
    mut set: PrimitiveSet<T>,
    cameras: &[CameraModel<T>],
    images: &[ImageBuf<T>],
    config: &TrainConfig,
    mut log: impl FnMut(&str),
    mut on_checkpoint: impl FnMut(usize, &PrimitiveSet<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if cameras.is_empty() || cameras.len() != images.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cameras vs {} images",
            cameras.len(),
            images.len()
        )));
    }
    for cam in cameras {
        cam.validate()?;
    }
    let extent = scene_extent(cameras, config.extent_mode).extent.to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pop = &config.population;
    if pop.mcmc_enabled {
        let cap = if pop.mcmc_cap == 0 { set.len() } else { pop.mcmc_cap };
        if set.len() > cap {
            return Err(Error::Config(format!(
                "mcmc_cap {cap} below initial population {}",
                set.len()
            )));
        }
    }

    if config.aa_3d {
        update_smoothing_filter(&mut set, cameras, T::of(pop.smoothing_kappa))?;
    }
    let mut optimizer = Optimizer::new(&set);
    let mut stats: DensifyStats<T> = DensifyStats::new(set.len());
    let mut order: Vec<usize> = Vec::new();
    let mut opacity_was_reset = false;
    let mut final_loss = 0.0;
    let mut peak_population = set.len();

    let mut opts: RenderOptions<T> = config.render_options();
    opts.training = true;

    log(&format!(
        "event=start iterations={} primitives={} extent={extent:.6} precision={}",
        config.iterations,
        set.len(),
        T::PRECISION
    ));

    for iter in 1..=config.iterations {
        set.active_sh_degree = ((iter / config.sh_ramp_interval) as u8).min(3);
        if order.is_empty() {
            order = (0..cameras.len()).collect();
            order.shuffle(&mut rng);
        }
        let view = order.pop().unwrap();
        let cam = &cameras[view];
        let target = &images[view];

        let t_iter = std::time::Instant::now();
        let out = render(&set, cam, &opts);
        let (loss, d_pixel) = loss_with_grad(&out.image, target, config.ssim_weight, true)?;
        final_loss = loss;
        let d_pixel = d_pixel.unwrap();
        let mut grads = GradientBuffer::new(&set);
        backward_pass(&set, cam, &opts, &out, &d_pixel, &mut grads)?;

        // Densification statistics.
        for rp in &out.projected {
            let i = rp.id;
            if grads.visible[i] {
                stats.grad_accum[i] += grads.view_grad_xy[i];
                stats.obs_count[i] += 1;
            }
        }
        for (rp, bb) in out.projected.iter().zip(&out.bboxes) {
            stats.max_screen_px[rp.id] = stats.max_screen_px[rp.id].max(bb.long_side());
        }

        let lrs = GroupLrs::at(config, iter, extent);
        let skipped = optimizer.step(&mut set, &grads, &lrs, config);
        for group in skipped {
            log(&format!(
                "event=warning iter={iter} msg=non_finite_gradients group={group}"
            ));
        }

        // Population control.
        let in_window = iter >= pop.densify_start && iter <= pop.densify_stop;
        let on_interval = pop.densify_interval > 0 && iter % pop.densify_interval == 0;
        if pop.mcmc_enabled {
            if in_window && on_interval {
                let (reset_rows, relocated) =
                    mcmc_step(&mut set, pop, T::of(lrs.center), &mut rng)?;
                optimizer.zero_rows(&reset_rows, set.distance_stride());
                stats = DensifyStats::new(set.len());
                if config.aa_3d {
                    update_smoothing_filter(&mut set, cameras, T::of(pop.smoothing_kappa))?;
                }
                log(&format!(
                    "event=mcmc iter={iter} relocated={relocated} primitives={}",
                    set.len()
                ));
            }
        } else if on_interval && in_window {
            let (new_set, script, event) = densify_and_prune(
                &set,
                &stats,
                pop,
                T::of(extent),
                true,
                opacity_was_reset,
                &mut rng,
            );
            set = new_set;
            optimizer.apply_edit(&script, set.distance_stride());
            stats = DensifyStats::new(set.len());
            if set.is_empty() {
                log(&format!("event=warning iter={iter} msg=population_empty"));
            }
            if config.aa_3d && !set.is_empty() {
                update_smoothing_filter(&mut set, cameras, T::of(pop.smoothing_kappa))?;
            }
            if !event.is_noop() {
                log(&format!(
                    "event=densify iter={iter} cloned={} split={} pruned={} relocated=0 primitives={}",
                    event.cloned,
                    event.split,
                    event.pruned,
                    set.len()
                ));
            }
        }
        if pop.opacity_reset_interval > 0 && iter % pop.opacity_reset_interval == 0 {
            opacity_reset(&mut set);
            opacity_was_reset = true;
            log(&format!("event=opacity_reset iter={iter}"));
        }
        peak_population = peak_population.max(set.len());

        if iter % config.log_interval == 0 || iter == config.iterations {
            let psnr = compute_psnr(&out.image, target)?
                .map(|p| format!("{p:.3}"))
                .unwrap_or_else(|| "inf".into());
            log(&format!(
                "iter={iter} loss={loss:.6} psnr={psnr} primitives={} ms={:.2}",
                set.len(),
                t_iter.elapsed().as_secs_f64() * 1e3
            ));
        }
        if config.checkpoint_iterations.contains(&iter) {
            on_checkpoint(iter, &set)?;
        }
    }
    log(&format!(
        "event=done iterations={} loss={final_loss:.6} primitives={}",
        config.iterations,
        set.len()
    ));
    Ok(TrainOutcome {
        set,
        final_loss,
        iterations_run: config.iterations,
        peak_population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{logit, Mat3, Quat};
    use crate::primitives::PrimitiveKind;
    use approx::assert_relative_eq;

    #[test]
    fn loss_examples() {
        let a = ImageBuf::<f64>::filled(16, 16, Vec3::splat(0.4));
        // Identical images: zero loss, zero gradient.
        let (l, g) = loss_with_grad(&a, &a, 0.2, true).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.unwrap().iter().all(|&v| v.abs() < 1e-12));
        // Pure L1 with a constant offset.
        let b = ImageBuf::<f64>::filled(16, 16, Vec3::splat(0.5));
        let (l, _) = loss_with_grad(&a, &b, 0.0, false).unwrap();
        assert_relative_eq!(l, 0.1, epsilon = 1e-12);
        let c = ImageBuf::<f64>::new(8, 8);
        assert!(loss_with_grad(&a, &c, 0.2, false).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut a = ImageBuf::<f64>::new(12, 9);
        let mut b = ImageBuf::<f64>::new(12, 9);
        for v in a.data.iter_mut() {
            *v = rng.random();
        }
        for v in b.data.iter_mut() {
            *v = rng.random();
        }
        let (_, g) = loss_with_grad(&a, &b, 0.2, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for k in (0..a.data.len()).step_by(37) {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[k] += h;
            am.data[k] -= h;
            let (lp, _) = loss_with_grad(&ap, &b, 0.2, false).unwrap();
            let (lm, _) = loss_with_grad(&am, &b, 0.2, false).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert_relative_eq!(fd, g[k], epsilon = 1e-9, max_relative = 1e-6);
        }
    }

    #[test]
    fn position_lr_schedule_endpoints_and_midpoint() {
        let config = TrainConfig {
            iterations: 1000,
            ..Default::default()
        };
        let extent = 2.0;
        assert_relative_eq!(position_lr(0, &config, extent), 1.6e-4 * 2.0, epsilon = 1e-18);
        assert_relative_eq!(
            position_lr(1000, &config, extent),
            1.6e-6 * 2.0,
            epsilon = 1e-18
        );
        // Geometric mean at the midpoint.
        assert_relative_eq!(
            position_lr(500, &config, extent),
            1.6e-5 * 2.0,
            max_relative = 1e-12
        );
        // Doubling the extent doubles the rate at every iteration.
        for iter in [0, 123, 999] {
            assert_relative_eq!(
                position_lr(iter, &config, 2.0 * extent),
                2.0 * position_lr(iter, &config, extent),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut state = AdamState::<f64>::new(2);
        state.m = vec![0.5, -0.5];
        state.v = vec![0.25, 0.25];
        let mut params = vec![1.0, -2.0];
        let ok = state.step_group(&mut params, &[0.0, 0.0], 0.1, 0.9, 0.999, 1e-15);
        assert!(ok);
        // Moments decay toward zero; parameters move by the decayed momentum
        // only, which stays bounded by lr.
        assert!(state.m[0] < 0.5);
        assert!((params[0] - 1.0).abs() <= 0.1 + 1e-12);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut state = AdamState::<f64>::new(1);
        let mut params = vec![3.0];
        state.step_group(&mut params, &[0.7], 0.01, 0.9, 0.999, 1e-15);
        // Bias-corrected first step is -lr * sign(g) up to eps.
        assert_relative_eq!(params[0], 3.0 - 0.01, epsilon = 1e-9);
    }

    #[test]
    fn adam_skips_non_finite_gradients() {
        let mut state = AdamState::<f64>::new(1);
        let mut params = vec![3.0];
        let ok = state.step_group(&mut params, &[f64::NAN], 0.01, 0.9, 0.999, 1e-15);
        assert!(!ok);
        assert_eq!(params[0], 3.0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // Minimize 0.5 * theta^2 from theta = 1.
        let mut state = AdamState::<f64>::new(1);
        let mut params = vec![1.0];
        let mut last = 1.0f64;
        for _ in 0..2000 {
            let g = params[0];
            state.step_group(&mut params, &[g], 0.01, 0.9, 0.999, 1e-15);
            last = params[0];
        }
        assert!(last.abs() < 1e-3, "theta = {last}");
    }

    #[test]
    fn scene_extent_modes() {
        let mk = |pos: Vec3<f64>| CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
            rotation: Mat3::identity(),
            translation: -pos,
            znear: 0.01,
        };
        let cams = vec![
            mk(Vec3::new(-1.0, 0.0, 0.0)),
            mk(Vec3::new(3.0, 0.0, 0.0)),
        ];
        let e = scene_extent(&cams, ExtentMode::CameraToMean);
        assert_relative_eq!(e.extent, 2.0, epsilon = 1e-12);
        assert_relative_eq!(e.center.x, 1.0, epsilon = 1e-12);
        let e = scene_extent(&cams, ExtentMode::MaxPairwise);
        assert_relative_eq!(e.extent, 4.0, epsilon = 1e-12);
        // Single camera falls back to unit extent.
        let e = scene_extent(&cams[..1], ExtentMode::CameraToMean);
        assert_eq!(e.extent, 1.0);
    }

    #[test]
    fn edit_script_preserves_and_zeroes_moments() {
        let mut state = AdamState::<f64>::new(4);
        state.m = vec![1.0, 2.0, 3.0, 4.0];
        state.v = vec![5.0, 6.0, 7.0, 8.0];
        state.apply_edit(
            &[
                RowSource { old: 1, fresh: false },
                RowSource { old: 1, fresh: true },
                RowSource { old: 0, fresh: false },
            ],
            2,
        );
        assert_eq!(state.m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(state.v, vec![7.0, 8.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn zero_iteration_training_returns_initialization() {
        let mut set = PrimitiveSet::<f64>::new(PrimitiveKind::Octahedron);
        set.push(
            Vec3::new(0.0, 0.0, 3.0),
            Quat::identity(),
            &[0.1, 0.1, 0.1],
            logit(0.5),
            &[0.0; SH_FLOATS],
            0.0,
        );
        let cam = CameraModel {
            fx: 50.0,
            fy: 50.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
            znear: 0.01,
        };
        let img = ImageBuf::filled(16, 16, Vec3::splat(0.5));
        let config = TrainConfig {
            iterations: 0,
            aa_3d: false,
            ..Default::default()
        };
        let before = set.clone();
        let out = train_loop(set, &[cam], &[img], &config, |_| {}, |_, _| Ok(())).unwrap();
        assert_eq!(out.set.centers, before.centers);
        assert_eq!(out.set.distances, before.distances);
    }
}
