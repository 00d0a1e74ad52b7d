//! Forward tiled rendering: 2D anti-aliasing shift, tile assignment, global
//! key sort, per-pixel ray-triangle intersection in ray space, chord-based
//! opacity, and front-to-back compositing with color, depth, and alpha
//! outputs.

use rayon::prelude::*;

use crate::imagebuf::{ImageBuf, ScalarMap};
use crate::math::{Real, Vec3};
use crate::primitives::PrimitiveSet;
use crate::projection::{
    project_primitive, ProjectionCache, ProjectionMode, RaySpacePrimitive, ScreenBbox,
};

/// Screen tile edge in pixels.
pub const TILE_SIZE: usize = 16;

/// Compositing stops once transmittance falls below this value (cumulative
/// opacity above 0.999).
pub const STOP_TRANSMITTANCE: f64 = 1e-3;

/// Upper clamp on a single chord opacity; keeps the backward replay's
/// division by (1 - o) finite for needle-shaped primitives.
pub const ALPHA_LIMIT: f64 = 0.9999;

/// Faces with a 2D determinant at or below this magnitude are skipped.
pub const DET_EPS: f64 = 1e-12;

/// Marker for pixels whose depth never crossed the 0.5 cumulative-opacity
/// threshold (valid depths are strictly positive distances).
pub const DEPTH_INVALID: f64 = -1.0;

/// Default 2D anti-aliasing kernel size in pixels; extremal vertices are
/// shifted outward by half of it.
pub const DEFAULT_KERNEL_2D: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            tiles_x: width.div_ceil(TILE_SIZE),
            tiles_y: height.div_ceil(TILE_SIZE),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel rectangle of a tile: (x0, y0, x1, y1), exclusive upper bounds.
    pub fn tile_rect(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(self.width), (y0 + TILE_SIZE).min(self.height))
    }
}

/// Order-preserving bit encoding for float depths.
fn depth_bits(d: f32) -> u32 {
    let b = d.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

/// Packed sort key: tile index in the high 32 bits, encoded depth in the low
/// 32. Ascending order yields per-tile runs in nondecreasing depth.
pub fn pack_sort_key(tile: u32, depth: f32) -> u64 {
    ((tile as u64) << 32) | depth_bits(depth) as u64
}

#[derive(Clone, Copy, Debug)]
pub struct WorkEntry {
    pub key: u64,
    /// Index into the compacted list of projected primitives.
    pub compact: u32,
}

/// Globally sorted (tile, depth)-keyed worklist with per-tile ranges.
#[derive(Clone, Debug, Default)]
pub struct TileWorklist {
    pub entries: Vec<WorkEntry>,
    pub ranges: Vec<(u32, u32)>,
}

impl TileWorklist {
    pub fn run(&self, tile: usize) -> &[WorkEntry] {
        let (a, b) = self.ranges[tile];
        &self.entries[a as usize..b as usize]
    }
}

/// Inclusive pixel-index bounds of the pixel centers covered by a bbox, or
/// `None` when no pixel center falls inside the image.
pub fn pixel_bounds<T: Real>(
    bb: &ScreenBbox<T>,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let half = T::of(0.5);
    let x0 = (bb.min_x - half).ceil().to_f64().max(0.0) as isize;
    let y0 = (bb.min_y - half).ceil().to_f64().max(0.0) as isize;
    let x1 = (bb.max_x - half).floor().to_f64() as isize;
    let y1 = (bb.max_y - half).floor().to_f64() as isize;
    let x1 = x1.min(width as isize - 1);
    let y1 = y1.min(height as isize - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

/// Shifts every vertex attaining the bbox minimum (maximum) in x or y
/// outward by half the kernel in that coordinate only. Returns a bitmask of
/// which vertices were shifted (two bits per vertex: x then y); gradients
/// are exact within one assignment region, so the mask doubles as a
/// discontinuity signature for finite-difference harnesses.
pub fn apply_2d_filter<T: Real>(rp: &mut RaySpacePrimitive<T>, kernel: T) -> u16 {
    if kernel == T::zero() {
        return 0;
    }
    let n = rp.vertex_count;
    let bb = ScreenBbox::of_vertices(&rp.vertices_ray[..n]);
    let half = kernel * T::of(0.5);
    let mut mask = 0u16;
    for (k, v) in rp.vertices_ray[..n].iter_mut().enumerate() {
        let mut dx = T::zero();
        let mut dy = T::zero();
        if v.x == bb.min_x {
            dx -= half;
        }
        if v.x == bb.max_x {
            dx += half;
        }
        if v.y == bb.min_y {
            dy -= half;
        }
        if v.y == bb.max_y {
            dy += half;
        }
        if dx != T::zero() {
            mask |= 1 << (2 * k);
        }
        if dy != T::zero() {
            mask |= 1 << (2 * k + 1);
        }
        v.x += dx;
        v.y += dy;
    }
    mask
}

/// Builds the sorted worklist from projected primitives and their bboxes.
pub fn build_worklist<T: Real>(
    bboxes: &[ScreenBbox<T>],
    depth_keys: &[T],
    grid: &TileGrid,
) -> TileWorklist {
    let mut entries = Vec::new();
    for (compact, bb) in bboxes.iter().enumerate() {
        let Some((x0, y0, x1, y1)) = pixel_bounds(bb, grid.width, grid.height) else {
            continue;
        };
        let (tx0, tx1) = (x0 / TILE_SIZE, x1 / TILE_SIZE);
        let (ty0, ty1) = (y0 / TILE_SIZE, y1 / TILE_SIZE);
        let depth = depth_keys[compact].to_f64() as f32;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let tile = (ty * grid.tiles_x + tx) as u32;
                entries.push(WorkEntry {
                    key: pack_sort_key(tile, depth),
                    compact: compact as u32,
                });
            }
        }
    }
    entries.par_sort_unstable_by_key(|e| (e.key, e.compact));

    let mut ranges = vec![(0u32, 0u32); grid.tile_count()];
    let mut i = 0;
    while i < entries.len() {
        let tile = (entries[i].key >> 32) as usize;
        let start = i;
        while i < entries.len() && (entries[i].key >> 32) as usize == tile {
            i += 1;
        }
        ranges[tile] = (start as u32, i as u32);
    }
    TileWorklist { entries, ranges }
}

/// One face crossing: interpolated ray-space depth plus the cached
/// barycentrics and determinant needed by the backward pass.
#[derive(Clone, Copy, Debug)]
pub struct FaceHit<T> {
    pub face: usize,
    pub depth: T,
    pub u: T,
    pub v: T,
    pub det: T,
}

/// Entry/exit crossings of one pixel ray with one primitive.
#[derive(Clone, Copy, Debug)]
pub struct IntersectionResult<T> {
    pub entry: FaceHit<T>,
    pub exit: FaceHit<T>,
}

impl<T: Real> IntersectionResult<T> {
    pub fn chord(&self) -> T {
        self.exit.depth - self.entry.depth
    }
}

/// 2D point-in-triangle test for one face in ray space, where the pixel ray
/// is the vertical line (rx, ry). Inclusive bounds keep adjacent faces
/// consistent along shared edges.
#[inline]
pub fn intersect_face<T: Real>(
    v0: Vec3<T>,
    v1: Vec3<T>,
    v2: Vec3<T>,
    rx: T,
    ry: T,
) -> Option<(T, T, T, T)> {
    let ax = v1.x - v0.x;
    let ay = v1.y - v0.y;
    let bx = v2.x - v0.x;
    let by = v2.y - v0.y;
    let det = ax * by - ay * bx;
    if det.abs() <= T::of(DET_EPS) {
        return None;
    }
    let px = rx - v0.x;
    let py = ry - v0.y;
    let u = (px * by - py * bx) / det;
    let v = (ax * py - ay * px) / det;
    if u < T::zero() || v < T::zero() || u + v > T::one() {
        return None;
    }
    let w = T::one() - u - v;
    let depth = w * v0.z + u * v1.z + v * v2.z;
    Some((depth, u, v, det))
}

/// Intersects a pixel ray with all faces of a projected primitive. Convex
/// primitives are crossed twice or not at all; rays through shared vertices
/// or edges produce more face hits, which collapse onto the extreme depths.
/// A single face hit is a grazing ray and counts as a miss.
pub fn intersect<T: Real>(
    rp: &RaySpacePrimitive<T>,
    faces: &[[usize; 3]],
    rx: T,
    ry: T,
) -> Option<IntersectionResult<T>> {
    let mut hits = 0usize;
    let mut entry: Option<FaceHit<T>> = None;
    let mut exit: Option<FaceHit<T>> = None;
    for (fi, f) in faces.iter().enumerate() {
        let (v0, v1, v2) = (
            rp.vertices_ray[f[0]],
            rp.vertices_ray[f[1]],
            rp.vertices_ray[f[2]],
        );
        if let Some((depth, u, v, det)) = intersect_face(v0, v1, v2, rx, ry) {
            hits += 1;
            let hit = FaceHit {
                face: fi,
                depth,
                u,
                v,
                det,
            };
            if entry.map_or(true, |e| depth < e.depth) {
                entry = Some(hit);
            }
            if exit.map_or(true, |e| depth > e.depth) {
                exit = Some(hit);
            }
        }
    }
    if hits < 2 {
        return None;
    }
    let (entry, exit) = (entry?, exit?);
    if entry.depth <= T::zero() {
        return None;
    }
    Some(IntersectionResult { entry, exit })
}

/// Chord opacity `1 - exp(-sigma * (i2 - i1))`, clamped to [`ALPHA_LIMIT`].
#[inline]
pub fn pixel_alpha<T: Real>(sigma: T, i1: T, i2: T) -> T {
    let o = T::one() - (-sigma * (i2 - i1)).exp();
    o.min(T::of(ALPHA_LIMIT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Color,
    Depth,
    Alpha,
}

/// Renderer configuration for one pass.
#[derive(Clone, Debug)]
pub struct RenderOptions<T> {
    pub projection: ProjectionMode,
    /// 2D anti-aliasing kernel in pixels; only applied in approximate
    /// projection mode.
    pub kernel_2d: Option<T>,
    /// Whether effective distances include the per-primitive 3D filter.
    pub use_3d_filter: bool,
    pub background: Vec3<T>,
    pub early_stop: bool,
    /// Record per-pixel replay state for the backward pass.
    pub training: bool,
    pub compute_depth: bool,
    /// Per-primitive frozen density denominators; used by finite-difference
    /// harnesses to mirror the stop-gradient on the normalization factor.
    pub sigma_denominators: Option<Vec<T>>,
}

impl<T: Real> Default for RenderOptions<T> {
    fn default() -> Self {
        Self {
            projection: ProjectionMode::Approximate,
            kernel_2d: Some(T::of(DEFAULT_KERNEL_2D)),
            use_3d_filter: true,
            background: Vec3::zero(),
            early_stop: true,
            training: false,
            compute_depth: false,
            sigma_denominators: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderCounters {
    /// Primitives that survived frustum culling.
    pub in_frustum: u64,
    /// Total worklist entries (primitive-tile pairs).
    pub tile_entries: u64,
    /// Per-pixel worklist entries visited.
    pub iterated: u64,
    /// Per-pixel entries that produced a double crossing.
    pub intersected: u64,
    /// Order-independent hash of (pixel, primitive, entry face, exit face)
    /// triples; finite-difference harnesses use it to detect when a hit
    /// migrates across an interior edge (a gradient kink).
    pub face_hash: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderTimings {
    pub preprocess_ms: f64,
    pub sort_ms: f64,
    pub raster_ms: f64,
}

/// Per-pixel replay state recorded in training mode.
#[derive(Clone, Debug)]
pub struct TrainingRecords<T> {
    pub final_t: Vec<T>,
    /// One past the run-local index of the last composited entry; 0 if none.
    pub last_entry: Vec<u32>,
    pub n_contrib: Vec<u32>,
}

pub struct RenderOutput<T> {
    pub image: ImageBuf<T>,
    pub depth: Option<ScalarMap<T>>,
    /// Final transmittance per pixel (alpha output is `1 - final_t`).
    pub final_t: Vec<T>,
    pub projected: Vec<RaySpacePrimitive<T>>,
    pub caches: Vec<ProjectionCache<T>>,
    pub bboxes: Vec<ScreenBbox<T>>,
    /// Per projected primitive: which vertices the 2D filter shifted.
    pub filter_masks: Vec<u16>,
    pub worklist: TileWorklist,
    pub grid: TileGrid,
    pub records: Option<TrainingRecords<T>>,
    pub counters: RenderCounters,
    pub timings: RenderTimings,
}

impl<T: Real> RenderOutput<T> {
    pub fn alpha_map(&self) -> ScalarMap<T> {
        ScalarMap {
            width: self.image.width,
            height: self.image.height,
            data: self.final_t.iter().map(|&t| T::one() - t).collect(),
        }
    }
}

struct TileOutput<T> {
    tile: usize,
    color: Vec<T>,
    depth: Vec<T>,
    final_t: Vec<T>,
    last_entry: Vec<u32>,
    n_contrib: Vec<u32>,
    iterated: u64,
    intersected: u64,
    face_hash: u64,
}

/// Full forward pass for one camera.
pub fn render<T: Real>(
    set: &PrimitiveSet<T>,
    cam: &crate::projection::CameraModel<T>,
    opts: &RenderOptions<T>,
) -> RenderOutput<T> {
    let t0 = std::time::Instant::now();
    let grid = TileGrid::new(cam.width, cam.height);
    let faces = set.kind().faces();

    // Preprocessing: project, filter, bbox, cull.
    let projected_raw: Vec<(RaySpacePrimitive<T>, ProjectionCache<T>)> = (0..set.len())
        .into_par_iter()
        .filter_map(|i| {
            let denom = opts.sigma_denominators.as_ref().map(|s| s[i]);
            project_primitive(set, i, cam, opts.projection, opts.use_3d_filter, denom)
        })
        .collect();

    let kernel = match (opts.projection, opts.kernel_2d) {
        (ProjectionMode::Approximate, Some(k)) => k,
        _ => T::zero(),
    };

    let mut projected = Vec::with_capacity(projected_raw.len());
    let mut caches = Vec::with_capacity(projected_raw.len());
    let mut bboxes = Vec::with_capacity(projected_raw.len());
    let mut filter_masks = Vec::with_capacity(projected_raw.len());
    for (mut rp, cache) in projected_raw {
        let mask = apply_2d_filter(&mut rp, kernel);
        let bb = ScreenBbox::of_vertices(&rp.vertices_ray[..rp.vertex_count]);
        if !bb.intersects_image(cam.width, cam.height) {
            continue;
        }
        projected.push(rp);
        caches.push(cache);
        bboxes.push(bb);
        filter_masks.push(mask);
    }
    let preprocess_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = std::time::Instant::now();
    let depth_keys: Vec<T> = projected.iter().map(|p| p.depth_key).collect();
    let worklist = build_worklist(&bboxes, &depth_keys, &grid);
    let sort_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = std::time::Instant::now();
    let stop = T::of(STOP_TRANSMITTANCE);
    let half = T::of(0.5);
    let tile_outputs: Vec<TileOutput<T>> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = grid.tile_rect(tile);
            let (tw, th) = (x1 - x0, y1 - y0);
            let mut out = TileOutput {
                tile,
                color: vec![T::zero(); tw * th * 3],
                depth: if opts.compute_depth {
                    vec![T::of(DEPTH_INVALID); tw * th]
                } else {
                    Vec::new()
                },
                final_t: vec![T::one(); tw * th],
                last_entry: if opts.training {
                    vec![0u32; tw * th]
                } else {
                    Vec::new()
                },
                n_contrib: if opts.training {
                    vec![0u32; tw * th]
                } else {
                    Vec::new()
                },
                iterated: 0,
                intersected: 0,
                face_hash: 0,
            };
            let run = worklist.run(tile);
            if run.is_empty() {
                finish_background(&mut out, opts, tw, th);
                return out;
            }
            for py in 0..th {
                for px in 0..tw {
                    let rx = T::of_usize(x0 + px) + half;
                    let ry = T::of_usize(y0 + py) + half;
                    let pi = py * tw + px;
                    let mut t = T::one();
                    let mut rgb = Vec3::zero();
                    let mut crossed = false;
                    for (local, entry) in run.iter().enumerate() {
                        out.iterated += 1;
                        let rp = &projected[entry.compact as usize];
                        let bb = &bboxes[entry.compact as usize];
                        if !bb.contains(rx, ry) {
                            continue;
                        }
                        let Some(hit) = intersect(rp, faces, rx, ry) else {
                            continue;
                        };
                        out.intersected += 1;
                        let gi = ((y0 + py) * grid.width + x0 + px) as u64;
                        let key = (gi << 24)
                            | ((entry.compact as u64 & 0xffff) << 8)
                            | ((hit.entry.face as u64) << 4)
                            | hit.exit.face as u64;
                        out.face_hash = out
                            .face_hash
                            .wrapping_add(key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        let o = pixel_alpha(rp.sigma, hit.entry.depth, hit.exit.depth);
                        rgb += rp.rgb.scale(t * o);
                        t *= T::one() - o;
                        if opts.compute_depth && !crossed && T::one() - t > half {
                            out.depth[pi] = hit.entry.depth;
                            crossed = true;
                        }
                        if opts.training {
                            out.last_entry[pi] = (local + 1) as u32;
                            out.n_contrib[pi] += 1;
                        }
                        if opts.early_stop && t < stop {
                            break;
                        }
                    }
                    rgb += opts.background.scale(t);
                    out.color[pi * 3] = rgb.x;
                    out.color[pi * 3 + 1] = rgb.y;
                    out.color[pi * 3 + 2] = rgb.z;
                    out.final_t[pi] = t;
                }
            }
            out
        })
        .collect();

    // Scatter tile buffers into the image; tiles cover disjoint pixels.
    let mut image = ImageBuf::new(cam.width, cam.height);
    let mut depth = opts
        .compute_depth
        .then(|| ScalarMap::new(cam.width, cam.height, T::of(DEPTH_INVALID)));
    let mut final_t = vec![T::one(); cam.width * cam.height];
    let mut records = opts.training.then(|| TrainingRecords {
        final_t: vec![T::one(); cam.width * cam.height],
        last_entry: vec![0u32; cam.width * cam.height],
        n_contrib: vec![0u32; cam.width * cam.height],
    });
    let mut iterated = 0u64;
    let mut intersected = 0u64;
    let mut face_hash = 0u64;
    for out in &tile_outputs {
        iterated += out.iterated;
        intersected += out.intersected;
        face_hash = face_hash.wrapping_add(out.face_hash);
        let (x0, y0, x1, y1) = grid.tile_rect(out.tile);
        let tw = x1 - x0;
        for py in 0..(y1 - y0) {
            for px in 0..tw {
                let pi = py * tw + px;
                let gi = (y0 + py) * cam.width + (x0 + px);
                image.data[gi * 3] = out.color[pi * 3];
                image.data[gi * 3 + 1] = out.color[pi * 3 + 1];
                image.data[gi * 3 + 2] = out.color[pi * 3 + 2];
                final_t[gi] = out.final_t[pi];
                if let Some(d) = depth.as_mut() {
                    d.data[gi] = out.depth[pi];
                }
                if let Some(r) = records.as_mut() {
                    r.final_t[gi] = out.final_t[pi];
                    r.last_entry[gi] = out.last_entry[pi];
                    r.n_contrib[gi] = out.n_contrib[pi];
                }
            }
        }
    }
    let raster_ms = t2.elapsed().as_secs_f64() * 1e3;

    RenderOutput {
        image,
        depth,
        final_t,
        counters: RenderCounters {
            in_frustum: projected.len() as u64,
            tile_entries: worklist.entries.len() as u64,
            iterated,
            intersected,
            face_hash,
        },
        timings: RenderTimings {
            preprocess_ms,
            sort_ms,
            raster_ms,
        },
        projected,
        caches,
        bboxes,
        filter_masks,
        worklist,
        grid,
        records,
    }
}

fn finish_background<T: Real>(
    out: &mut TileOutput<T>,
    opts: &RenderOptions<T>,
    tw: usize,
    th: usize,
) {
    for pi in 0..tw * th {
        out.color[pi * 3] = opts.background.x;
        out.color[pi * 3 + 1] = opts.background.y;
        out.color[pi * 3 + 2] = opts.background.z;
    }
}
