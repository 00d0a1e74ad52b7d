//! Population control: initialization from SfM points, adaptive
//! densification (clone/split) and pruning, opacity reset, a budgeted
//! MCMC-style relocation alternative, and the per-primitive 3D smoothing
//! filter derived from training-view sampling rates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Quat, Real, Vec3};
use crate::primitives::{PrimitiveKind, PrimitiveSet, SH_FLOATS};
use crate::projection::CameraModel;

/// Per-primitive statistics accumulated between densification events.
#[derive(Clone, Debug)]
pub struct DensifyStats<T> {
    /// Summed 2D view-space positional-gradient magnitudes.
    pub grad_accum: Vec<T>,
    /// Number of views the primitive was visible in.
    pub obs_count: Vec<u32>,
    /// Largest screen bbox side (pixels) since the last reset.
    pub max_screen_px: Vec<T>,
}

impl<T: Real> DensifyStats<T> {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![T::zero(); n],
            obs_count: vec![0; n],
            max_screen_px: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    pub fn mean_grad(&self, i: usize) -> Option<T> {
        (self.obs_count[i] > 0).then(|| self.grad_accum[i] / T::of(self.obs_count[i] as f64))
    }
}

/// Defaults follow the reported experimental settings verbatim.
#[derive(Clone, Debug)]
pub struct PopulationConfig {
    pub densify_interval: usize,
    pub densify_start: usize,
    pub densify_stop: usize,
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    pub prune_world_frac: f64,
    pub prune_screen_px: f64,
    /// Primitives below this fraction of the scene extent are cloned,
    /// larger ones split.
    pub clone_vs_split_frac: f64,
    /// Distance multiplier for split children.
    pub split_shrink: f64,
    /// 0 disables opacity resets.
    pub opacity_reset_interval: usize,
    pub mcmc_enabled: bool,
    /// Hard primitive budget in MCMC mode; 0 means "use the initial count".
    pub mcmc_cap: usize,
    /// Distances divided by this factor imitate Gaussian standard deviations.
    pub mcmc_scale_align: f64,
    pub mcmc_dead_opacity: f64,
    pub mcmc_noise_lr: f64,
    pub smoothing_kappa: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            densify_interval: 250,
            densify_start: 500,
            densify_stop: 15_000,
            grad_threshold: 1.5e-4,
            prune_opacity: 0.025,
            prune_world_frac: 0.4,
            prune_screen_px: 20.0,
            clone_vs_split_frac: 0.01,
            split_shrink: 1.0 / 1.2,
            opacity_reset_interval: 3000,
            mcmc_enabled: false,
            mcmc_cap: 0,
            mcmc_scale_align: 2.6,
            mcmc_dead_opacity: 0.005,
            mcmc_noise_lr: 5e5,
            smoothing_kappa: 0.2,
        }
    }
}

/// Where each row of an edited set came from; `fresh` rows start with zeroed
/// optimizer moments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowSource {
    pub old: usize,
    pub fresh: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PopulationEvent {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub relocated: usize,
}

impl PopulationEvent {
    pub fn is_noop(&self) -> bool {
        *self == PopulationEvent::default()
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Initial opacity assigned to every primitive.
pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_DISTANCE_MIN: f64 = 1e-5;
pub const INIT_DISTANCE_MAX: f64 = 0.5;

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<Box<KdNode>>,
    right: Option<Box<KdNode>>,
}

fn kd_build<T: Real>(points: &[Vec3<T>], indices: &mut [usize], depth: usize) -> Option<Box<KdNode>> {
    if indices.is_empty() {
        return None;
    }
    let axis = depth % 3;
    let mid = indices.len() / 2;
    indices.select_nth_unstable_by(mid, |&a, &b| {
        let pa = points[a].to_array()[axis];
        let pb = points[b].to_array()[axis];
        pa.partial_cmp(&pb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let point = indices[mid];
    let (left, rest) = indices.split_at_mut(mid);
    let right = &mut rest[1..];
    Some(Box::new(KdNode {
        point,
        axis,
        left: kd_build(points, left, depth + 1),
        right: kd_build(points, right, depth + 1),
    }))
}

fn kd_nearest<T: Real>(
    node: &KdNode,
    points: &[Vec3<T>],
    query: usize,
    best: &mut (T, usize),
) {
    let p = points[node.point];
    if node.point != query {
        let d2 = (p - points[query]).dot(p - points[query]);
        if d2 < best.0 {
            *best = (d2, node.point);
        }
    }
    let delta = points[query].to_array()[node.axis] - p.to_array()[node.axis];
    let (near, far) = if delta < T::zero() {
        (&node.left, &node.right)
    } else {
        (&node.right, &node.left)
    };
    if let Some(n) = near {
        kd_nearest(n, points, query, best);
    }
    if let Some(f) = far {
        if delta * delta < best.0 {
            kd_nearest(f, points, query, best);
        }
    }
}

/// Distance from each point to its nearest neighbor.
pub fn nearest_neighbor_distances<T: Real>(points: &[Vec3<T>]) -> Vec<T> {
    if points.len() < 2 {
        return vec![T::infinity(); points.len()];
    }
    let mut indices: Vec<usize> = (0..points.len()).collect();
    let root = kd_build(points, &mut indices, 0).expect("nonempty tree");
    (0..points.len())
        .map(|i| {
            let mut best = (T::infinity(), usize::MAX);
            kd_nearest(&root, points, i, &mut best);
            best.0.sqrt()
        })
        .collect()
}

/// Uniformly random unit quaternion from four standard normal draws.
pub fn random_rotation<T: Real, R: Rng>(rng: &mut R) -> Quat<T> {
    loop {
        let n: [f64; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (n.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm > 1e-9 {
            return Quat::new(
                T::of(n[0] / norm),
                T::of(n[1] / norm),
                T::of(n[2] / norm),
                T::of(n[3] / norm),
            );
        }
    }
}

/// One primitive per SfM point: all distances set to the clamped
/// nearest-neighbor distance, opacity 0.1, uniformly random rotation, and a
/// DC-only color matching the point color.
pub fn init_from_sfm<T: Real, R: Rng>(
    kind: PrimitiveKind,
    points: &[Vec3<T>],
    colors: &[Vec3<T>],
    rng: &mut R,
) -> Result<PrimitiveSet<T>> {
    if points.is_empty() {
        return Err(Error::DegenerateParameter(
            "initialization requires at least one SfM point".into(),
        ));
    }
    if points.len() != colors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points vs {} colors",
            points.len(),
            colors.len()
        )));
    }
    let nn = nearest_neighbor_distances(points);
    let mut set = PrimitiveSet::new(kind);
    let stride = kind.distance_count();
    let opacity = T::of(logit(INIT_OPACITY));
    let c0 = T::of(crate::appearance::SH_C0);
    let half = T::of(0.5);
    for (i, (&p, &rgb)) in points.iter().zip(colors).enumerate() {
        let d = nn[i]
            .max(T::of(INIT_DISTANCE_MIN))
            .min(T::of(INIT_DISTANCE_MAX));
        let distances = vec![d; stride];
        let mut sh = [T::zero(); SH_FLOATS];
        sh[0] = (rgb.x - half) / c0;
        sh[1] = (rgb.y - half) / c0;
        sh[2] = (rgb.z - half) / c0;
        set.push(
            p,
            random_rotation(rng),
            &distances,
            opacity,
            &sh,
            T::zero(),
        );
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Densification and pruning
// ---------------------------------------------------------------------------

fn sample_split_offset<T: Real, R: Rng>(
    kind: PrimitiveKind,
    distances: &[T],
    rotation: Quat<T>,
    rng: &mut R,
) -> Vec3<T> {
    let local = match kind {
        PrimitiveKind::Octahedron => {
            // Per-axis std equal to the corresponding distance, rotated after.
            Vec3::new(
                T::of(StandardNormal.sample(rng)) * distances[0],
                T::of(StandardNormal.sample(rng)) * distances[1],
                T::of(StandardNormal.sample(rng)) * distances[2],
            )
        }
        PrimitiveKind::Tetrahedron => {
            let std = distances.iter().fold(T::zero(), |a, &d| a.max(d)) * T::of(0.5);
            Vec3::new(
                T::of(StandardNormal.sample(rng)) * std,
                T::of(StandardNormal.sample(rng)) * std,
                T::of(StandardNormal.sample(rng)) * std,
            )
        }
    };
    let q = crate::primitives::normalize_rotation(rotation).unwrap_or_else(|_| Quat::identity());
    q.to_matrix().mul_vec(local)
}

/// Clone/split primitives with large view-space positional gradients, then
/// prune. Returns the edited set, the optimizer edit script, and event
/// counts. `screen_prune_active` gates the 20-pixel rule (it only applies
/// once opacities have been reset at least once).
pub fn densify_and_prune<T: Real, R: Rng>(
    set: &PrimitiveSet<T>,
    stats: &DensifyStats<T>,
    config: &PopulationConfig,
    extent: T,
    densify_active: bool,
    screen_prune_active: bool,
    rng: &mut R,
) -> (PrimitiveSet<T>, Vec<RowSource>, PopulationEvent) {
    assert_eq!(stats.len(), set.len());
    let kind = set.kind();
    let stride = set.distance_stride();
    let threshold = T::of(config.grad_threshold);
    let clone_limit = T::of(config.clone_vs_split_frac) * extent;
    let shrink = T::of(config.split_shrink);

    let mut grown = PrimitiveSet::new(kind);
    grown.active_sh_degree = set.active_sh_degree;
    let mut script: Vec<RowSource> = Vec::new();
    let mut screen_stats: Vec<T> = Vec::new();
    let mut event = PopulationEvent::default();

    for i in 0..set.len() {
        let candidate = densify_active
            && stats
                .mean_grad(i)
                .map(|g| g > threshold)
                .unwrap_or(false);
        let size = set.world_size(i);
        if candidate && size <= clone_limit {
            // Clone: identical copy without gradient momentum.
            grown.push_from(set, i);
            script.push(RowSource { old: i, fresh: false });
            screen_stats.push(stats.max_screen_px[i]);
            grown.push_from(set, i);
            script.push(RowSource { old: i, fresh: true });
            screen_stats.push(T::zero());
            event.cloned += 1;
        } else if candidate {
            // Split into two shrunken children offset by samples from the
            // primitive-shaped distribution; the original is removed.
            let mut child_d = vec![T::zero(); stride];
            for (c, &d) in child_d.iter_mut().zip(set.distances_of(i)) {
                *c = d * shrink;
            }
            for _ in 0..2 {
                let offset = sample_split_offset(kind, set.distances_of(i), set.rotations[i], rng);
                grown.push(
                    set.centers[i] + offset,
                    set.rotations[i],
                    &child_d,
                    set.opacity_logits[i],
                    set.sh_of(i),
                    set.filter_3d[i],
                );
                script.push(RowSource { old: i, fresh: true });
                screen_stats.push(T::zero());
            }
            event.split += 1;
        } else {
            grown.push_from(set, i);
            script.push(RowSource { old: i, fresh: false });
            screen_stats.push(stats.max_screen_px[i]);
        }
    }

    // Prune pass over the grown set.
    let prune_alpha = T::of(config.prune_opacity);
    let world_limit = T::of(config.prune_world_frac) * extent;
    let screen_limit = T::of(config.prune_screen_px);
    let mut out = PrimitiveSet::new(kind);
    out.active_sh_degree = set.active_sh_degree;
    let mut out_script = Vec::new();
    for i in 0..grown.len() {
        let too_transparent = grown.opacity(i) < prune_alpha;
        let too_large_world = grown.world_size(i) > world_limit;
        let too_large_screen = screen_prune_active && screen_stats[i] > screen_limit;
        if too_transparent || too_large_world || too_large_screen {
            event.pruned += 1;
            continue;
        }
        out.push_from(&grown, i);
        out_script.push(script[i]);
    }
    (out, out_script, event)
}

/// Clamps every opacity down to 0.01 (in logit space).
pub fn opacity_reset<T: Real>(set: &mut PrimitiveSet<T>) {
    let cap = T::of(logit(0.01));
    for l in set.opacity_logits.iter_mut() {
        *l = l.min(cap);
    }
}

// ---------------------------------------------------------------------------
// MCMC-style population control
// ---------------------------------------------------------------------------

/// Standard deviations of the Gaussian a primitive imitates: distances
/// scaled down by the alignment factor.
pub fn imitated_std<T: Real>(distances: &[T], scale_align: T) -> Vec<T> {
    distances.iter().map(|&d| d / scale_align).collect()
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; n + 1]; n + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = 1.0;
        for k in 1..=i {
            row[k] = row[k - 1] * (i - k + 1) as f64 / k as f64;
        }
    }
    t
}

/// New opacity and distance multiplier when one primitive's mass is shared
/// by `n` copies, treating the primitive as a Gaussian.
fn relocation_params(old_opacity: f64, n: usize) -> (f64, f64) {
    let new_opacity = 1.0 - (1.0 - old_opacity).powf(1.0 / n as f64);
    let binoms = binomial_table(n.max(1));
    let mut denom = 0.0;
    for i in 1..=n {
        for k in 0..i {
            denom += binoms[i - 1][k] * (-1.0f64).powi(k as i32) / ((k + 1) as f64).sqrt()
                * new_opacity.powi(k as i32 + 1);
        }
    }
    (new_opacity, old_opacity / denom)
}

/// Relocates dead primitives onto live ones sampled proportionally to
/// opacity, then adds opacity-gated exploration noise shaped like each
/// primitive's imitated Gaussian. Returns indices whose optimizer moments
/// must be zeroed and the relocation count.
pub fn mcmc_step<T: Real, R: Rng>(
    set: &mut PrimitiveSet<T>,
    config: &PopulationConfig,
    position_lr: T,
    rng: &mut R,
) -> Result<(Vec<usize>, usize)> {
    let cap = if config.mcmc_cap == 0 {
        set.len()
    } else {
        config.mcmc_cap
    };
    if set.len() > cap {
        return Err(Error::Config(format!(
            "mcmc_cap {} is smaller than the current population {}",
            cap,
            set.len()
        )));
    }
    let dead_thresh = T::of(config.mcmc_dead_opacity);
    let dead: Vec<usize> = (0..set.len())
        .filter(|&i| set.opacity(i) < dead_thresh)
        .collect();
    let live: Vec<usize> = (0..set.len())
        .filter(|&i| set.opacity(i) >= dead_thresh)
        .collect();

    let mut reset_moments: Vec<usize> = Vec::new();
    let mut relocated = 0usize;
    if !dead.is_empty() && !live.is_empty() {
        // Cumulative opacity distribution over live primitives.
        let mut cum: Vec<f64> = Vec::with_capacity(live.len());
        let mut total = 0.0;
        for &i in &live {
            total += set.opacity(i).to_f64();
            cum.push(total);
        }
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); live.len()];
        for &d in &dead {
            let r = rng.random::<f64>() * total;
            let t = cum.partition_point(|&c| c < r).min(live.len() - 1);
            assigned[t].push(d);
        }
        for (t, dead_list) in assigned.iter().enumerate() {
            if dead_list.is_empty() {
                continue;
            }
            let target = live[t];
            let n = dead_list.len() + 1;
            let (new_opacity, dist_coeff) = relocation_params(set.opacity(target).to_f64(), n);
            let new_logit = T::of(logit(new_opacity.clamp(1e-7, 1.0 - 1e-7)));
            let coeff = T::of(dist_coeff);

            let target_center = set.centers[target];
            let target_rot = set.rotations[target];
            let target_sh: Vec<T> = set.sh_of(target).to_vec();
            let target_filter = set.filter_3d[target];
            let mut target_d: Vec<T> = set.distances_of(target).to_vec();
            for d in target_d.iter_mut() {
                *d *= coeff;
            }
            for &j in std::iter::once(&target).chain(dead_list) {
                set.centers[j] = target_center;
                set.rotations[j] = target_rot;
                set.opacity_logits[j] = new_logit;
                set.distances_of_mut(j).copy_from_slice(&target_d);
                set.sh_of_mut(j).copy_from_slice(&target_sh);
                set.filter_3d[j] = target_filter;
                reset_moments.push(j);
                if j != target {
                    relocated += 1;
                }
            }
        }
    }

    // Exploration noise, gated to near-dead primitives and shaped like the
    // imitated Gaussian.
    let noise_scale = T::of(config.mcmc_noise_lr) * position_lr;
    if noise_scale > T::zero() {
        let align = T::of(config.mcmc_scale_align);
        let hundred = T::of(100.0);
        for i in 0..set.len() {
            let alpha = set.opacity(i);
            let gate = sigmoid(hundred * (dead_thresh - alpha));
            let q = crate::primitives::normalize_rotation(set.rotations[i])
                .unwrap_or_else(|_| Quat::identity());
            let d = set.distances_of(i);
            let local = Vec3::new(
                T::of(StandardNormal.sample(rng)) * d[0] / align,
                T::of(StandardNormal.sample(rng)) * d[1] / align,
                T::of(StandardNormal.sample(rng)) * d[2 % d.len()] / align,
            );
            let noise = q.to_matrix().mul_vec(local).scale(noise_scale * gate);
            set.centers[i] += noise;
        }
    }
    debug_assert!(set.len() <= cap);
    Ok((reset_moments, relocated))
}

// ---------------------------------------------------------------------------
// 3D smoothing filter
// ---------------------------------------------------------------------------

/// Recomputes the per-primitive smoothing filter size:
/// `s_3d = kappa * min over observing cameras of (depth / focal)`.
/// Primitives visible from no camera fall back to their smallest absolute
/// depth; the count of such primitives is returned for logging.
pub fn update_smoothing_filter<T: Real>(
    set: &mut PrimitiveSet<T>,
    cameras: &[CameraModel<T>],
    kappa: T,
) -> Result<usize> {
    if cameras.is_empty() {
        return Err(Error::Config(
            "smoothing filter requires at least one camera".into(),
        ));
    }
    let mut unseen = 0usize;
    for i in 0..set.len() {
        let mut best: Option<T> = None;
        let mut fallback = T::infinity();
        for cam in cameras {
            let p = cam.world_to_camera(set.centers[i]);
            let rate = p.z.abs().max(cam.znear) / cam.fx;
            fallback = fallback.min(rate);
            if p.z <= cam.znear {
                continue;
            }
            let px = cam.fx * p.x / p.z + cam.cx;
            let py = cam.fy * p.y / p.z + cam.cy;
            if px < T::zero()
                || px > T::of_usize(cam.width)
                || py < T::zero()
                || py > T::of_usize(cam.height)
            {
                continue;
            }
            let rate = p.z / cam.fx;
            best = Some(best.map_or(rate, |b: T| b.min(rate)));
        }
        let rate = match best {
            Some(r) => r,
            None => {
                unseen += 1;
                fallback
            }
        };
        set.filter_3d[i] = kappa * rate;
    }
    Ok(unseen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn init_two_points_use_mutual_distance() {
        let points = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        let colors = vec![Vec3::splat(0.5); 2];
        let set =
            init_from_sfm(PrimitiveKind::Octahedron, &points, &colors, &mut rng()).unwrap();
        for i in 0..2 {
            for &d in set.distances_of(i) {
                assert_relative_eq!(d, 0.2, epsilon = 1e-12);
            }
            assert_relative_eq!(set.opacity(i), 0.1, epsilon = 1e-12);
            // Mid-gray input color gives zero DC coefficients.
            assert_eq!(&set.sh_of(i)[..3], &[0.0, 0.0, 0.0]);
            assert_relative_eq!(set.rotations[i].norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_clamps_isolated_points() {
        let points = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        let colors = vec![Vec3::splat(0.9); 2];
        let set =
            init_from_sfm(PrimitiveKind::Tetrahedron, &points, &colors, &mut rng()).unwrap();
        assert!(set.distances_of(0).iter().all(|&d| d == 0.5));
        assert!(init_from_sfm::<f64, _>(PrimitiveKind::Octahedron, &[], &[], &mut rng()).is_err());
    }

    #[test]
    fn nearest_neighbor_matches_brute_force() {
        let mut r = rng();
        let points: Vec<Vec3<f64>> = (0..200)
            .map(|_| {
                Vec3::new(
                    r.random::<f64>() * 4.0,
                    r.random::<f64>() * 4.0,
                    r.random::<f64>() * 4.0,
                )
            })
            .collect();
        let fast = nearest_neighbor_distances(&points);
        for i in 0..points.len() {
            let brute = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| (*p - points[i]).norm())
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(fast[i], brute, epsilon = 1e-12);
        }
    }

    fn small_set(alphas: &[f64], sizes: &[f64]) -> PrimitiveSet<f64> {
        let mut set = PrimitiveSet::new(PrimitiveKind::Octahedron);
        for (&a, &s) in alphas.iter().zip(sizes) {
            set.push(
                Vec3::zero(),
                Quat::identity(),
                &[s, s, s],
                logit(a),
                &[0.0; SH_FLOATS],
                0.0,
            );
        }
        set
    }

    #[test]
    fn prune_rules_use_exact_thresholds() {
        let config = PopulationConfig::default();
        let extent = 10.0;
        // alpha 0.01 pruned; world size > 0.4 * extent pruned; survivors kept.
        let set = small_set(&[0.01, 0.5, 0.5], &[0.1, 2.5, 0.1]); // sizes 0.2, 5.0, 0.2
        let stats = DensifyStats::new(3);
        let (out, script, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        assert_eq!(out.len(), 1);
        assert_eq!(ev.pruned, 2);
        assert_eq!(script, vec![RowSource { old: 2, fresh: false }]);

        // Screen prune active: bbox side above 20 px goes away.
        let set = small_set(&[0.5, 0.5], &[0.1, 0.1]);
        let mut stats = DensifyStats::new(2);
        stats.max_screen_px[1] = 25.0;
        let (out, _, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, true, &mut rng());
        assert_eq!(out.len(), 1);
        assert_eq!(ev.pruned, 1);
        // Inactive gate keeps it.
        let (out, _, _) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn clone_below_one_percent_of_extent() {
        let config = PopulationConfig::default();
        let extent = 100.0;
        // size = 0.5 <= 1.0 = 1% of extent -> clone.
        let set = small_set(&[0.5], &[0.25]);
        let mut stats = DensifyStats::new(1);
        stats.grad_accum[0] = 2e-4;
        stats.obs_count[0] = 1;
        let (out, script, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        assert_eq!(out.len(), 2);
        assert_eq!(ev.cloned, 1);
        assert_eq!(out.centers[0], out.centers[1]);
        assert_eq!(out.distances_of(0), out.distances_of(1));
        assert_eq!(
            script,
            vec![
                RowSource { old: 0, fresh: false },
                RowSource { old: 0, fresh: true }
            ]
        );
        // Below the gradient threshold nothing happens.
        stats.grad_accum[0] = 1.4e-4;
        let (out, _, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        assert_eq!(out.len(), 1);
        assert!(ev.is_noop());
    }

    #[test]
    fn split_shrinks_and_offsets_children() {
        let config = PopulationConfig::default();
        let extent = 1.0;
        let set = small_set(&[0.5], &[2.0]); // size 4 > 1% of extent
        let mut stats = DensifyStats::new(1);
        stats.grad_accum[0] = 1.0;
        stats.obs_count[0] = 1;
        let (out, script, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        // Children of size 2*2/1.2 = 3.33 > 0.4 * extent get pruned right
        // away with this tiny extent, so use a larger extent to keep them.
        assert_eq!(ev.split, 1);
        let _ = (out, script);

        let extent = 100.0;
        let (out, script, ev) =
            densify_and_prune(&set, &stats, &config, extent, true, false, &mut rng());
        assert_eq!(ev.split, 1);
        assert_eq!(out.len(), 2);
        for i in 0..2 {
            for &d in out.distances_of(i) {
                assert_relative_eq!(d, 2.0 / 1.2, epsilon = 1e-12);
            }
            assert!(script[i].fresh);
        }
    }

    #[test]
    fn split_offset_sample_std_matches_distances() {
        // Statistical check of the sampling rule: per-axis std equals the
        // corresponding distance within 5% over 10^4 draws.
        let mut r = rng();
        let d = [2.0, 1.0, 0.5];
        let n = 10_000;
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let o = sample_split_offset(
                PrimitiveKind::Octahedron,
                &d,
                Quat::identity(),
                &mut r,
            );
            let a = o.to_array();
            for k in 0..3 {
                sums[k] += a[k];
                sq[k] += a[k] * a[k];
            }
        }
        for k in 0..3 {
            let mean = sums[k] / n as f64;
            let std = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!(
                (std - d[k]).abs() / d[k] < 0.05,
                "axis {k}: std {std} vs {}",
                d[k]
            );
        }
    }

    #[test]
    fn opacity_reset_examples() {
        let mut set = small_set(&[0.9, 0.005], &[0.1, 0.1]);
        opacity_reset(&mut set);
        assert_relative_eq!(set.opacity(0), 0.01, epsilon = 1e-9);
        assert_relative_eq!(set.opacity(1), 0.005, epsilon = 1e-9);
    }

    #[test]
    fn mcmc_alignment_constant() {
        let std = imitated_std(&[2.6, 2.6, 2.6], 2.6);
        assert_eq!(std, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn mcmc_identity_without_dead_or_noise() {
        let mut set = small_set(&[0.5, 0.6], &[0.1, 0.2]);
        let before = set.clone();
        let mut config = PopulationConfig {
            mcmc_enabled: true,
            mcmc_noise_lr: 0.0,
            ..Default::default()
        };
        config.mcmc_cap = 2;
        let (resets, relocated) = mcmc_step(&mut set, &config, 1e-4, &mut rng()).unwrap();
        assert_eq!(relocated, 0);
        assert!(resets.is_empty());
        assert_eq!(set.centers, before.centers);
        assert_eq!(set.distances, before.distances);
    }

    #[test]
    fn mcmc_relocates_dead_onto_live() {
        let mut set = small_set(&[0.001, 0.8], &[0.1, 0.2]);
        set.centers[1] = Vec3::new(1.0, 2.0, 3.0);
        let config = PopulationConfig {
            mcmc_enabled: true,
            mcmc_cap: 2,
            mcmc_noise_lr: 0.0,
            ..Default::default()
        };
        let (resets, relocated) = mcmc_step(&mut set, &config, 1e-4, &mut rng()).unwrap();
        assert_eq!(relocated, 1);
        assert_eq!(set.centers[0], Vec3::new(1.0, 2.0, 3.0));
        // Mass is split: 1 - (1-o) = o for n=2 -> o_new = 1 - sqrt(1-0.8).
        let expect = 1.0 - (1.0f64 - 0.8).sqrt();
        assert_relative_eq!(set.opacity(0), expect, epsilon = 1e-9);
        assert_relative_eq!(set.opacity(1), expect, epsilon = 1e-9);
        assert_eq!(resets.len(), 2);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn mcmc_cap_violation_errors() {
        let mut set = small_set(&[0.5, 0.5, 0.5], &[0.1, 0.1, 0.1]);
        let config = PopulationConfig {
            mcmc_enabled: true,
            mcmc_cap: 2,
            ..Default::default()
        };
        assert!(mcmc_step(&mut set, &config, 1e-4, &mut rng()).is_err());
    }

    #[test]
    fn relocation_params_identity_for_single_copy() {
        let (o, c) = relocation_params(0.73, 1);
        assert_relative_eq!(o, 0.73, epsilon = 1e-12);
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
    }

    fn axis_camera(z: f64, f: f64) -> CameraModel<f64> {
        CameraModel {
            fx: f,
            fy: f,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, z),
            znear: 0.01,
        }
    }

    #[test]
    fn smoothing_filter_formula() {
        let mut set = small_set(&[0.5], &[0.1]);
        // Camera at the origin looking at the primitive 10 units away.
        let cams = vec![axis_camera(10.0, 1000.0)];
        update_smoothing_filter(&mut set, &cams, 0.2).unwrap();
        assert_relative_eq!(set.filter_3d[0], 0.2 * 10.0 / 1000.0, epsilon = 1e-12);
        // kappa = 0 disables the filter.
        update_smoothing_filter(&mut set, &cams, 0.0).unwrap();
        assert_eq!(set.filter_3d[0], 0.0);
        assert_relative_eq!(set.min_effective_distance(0), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn effective_distance_dominates_both_terms() {
        let mut set = small_set(&[0.5], &[0.3]);
        set.filter_3d[0] = 0.4;
        let mut eff = [0.0; 3];
        set.effective_distances(0, &mut eff);
        for e in eff {
            assert!(e >= 0.4 && e >= 0.3);
            assert_relative_eq!(e, (0.3f64 * 0.3 + 0.4 * 0.4).sqrt(), epsilon = 1e-12);
        }
        // Large distances are barely affected.
        set.distances_of_mut(0)[0] = 1000.0 * 0.4;
        set.effective_distances(0, &mut eff);
        assert!((eff[0] - 400.0).abs() / 400.0 < 1e-6);
    }

    #[test]
    fn unseen_primitive_falls_back_with_warning_count() {
        let mut set = small_set(&[0.5], &[0.1]);
        set.centers[0] = Vec3::new(0.0, 0.0, -5.0); // behind the camera
        let cams = vec![axis_camera(0.0, 100.0)];
        let unseen = update_smoothing_filter(&mut set, &cams, 0.2).unwrap();
        assert_eq!(unseen, 1);
        assert!(set.filter_3d[0] > 0.0);
    }
}
