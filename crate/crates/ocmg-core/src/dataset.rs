//! Procedural ground truth: cuboids and window frames with raster-style
//! expert paths, surface point sampling, and waypoint downsampling.
//!
//! Generation is a pure function of the spec (seed included); identical
//! specs produce identical samples.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{Category, GeomError, ObjectSample, Path, Pose, Vec3};
use crate::mesh::{BoxSides, TriMesh};

pub const CUBOID_WIDTH: f64 = 1.0;
pub const WINDOW_THICKNESS: f64 = 0.04;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetError {
    Geom(GeomError),
    DegenerateMesh,
    BadCount,
    InfeasibleSpec(&'static str),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Geom(e) => write!(f, "{e}"),
            DatasetError::DegenerateMesh => write!(f, "mesh has (near-)zero surface area"),
            DatasetError::BadCount => write!(f, "point count must be at least 1"),
            DatasetError::InfeasibleSpec(what) => write!(f, "infeasible spec: {what}"),
        }
    }
}

impl core::error::Error for DatasetError {}

impl From<GeomError> for DatasetError {
    fn from(e: GeomError) -> Self {
        DatasetError::Geom(e)
    }
}

/// Knobs shared by both generators. The defaults give full-resolution
/// samples; [`GenParams::toy`] is the coarse preset used for fast training
/// experiments.
#[derive(Clone, Copy, Debug)]
pub struct GenParams {
    /// Waypoint spacing along passes before downsampling, meters.
    pub pass_step: f64,
    /// Surface points per sample.
    pub cloud_points: usize,
    /// Target mesh tessellation cell edge, meters.
    pub tess_cell: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { pass_step: 0.025, cloud_points: 5120, tess_cell: 0.1 }
    }
}

impl GenParams {
    pub fn toy() -> GenParams {
        GenParams { pass_step: 0.075, cloud_points: 256, tess_cell: 0.25 }
    }
}

/// Fixed 1 m width; height and depth drawn uniformly from [0.5, 1.5].
#[derive(Clone, Copy, Debug)]
pub struct CuboidSpec {
    pub height: f64,
    pub depth: f64,
    pub raster_pitch: f64,
    pub seed: u64,
}

impl CuboidSpec {
    pub fn new(height: f64, depth: f64, raster_pitch: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(0.5..=1.5).contains(&height) || !(0.5..=1.5).contains(&depth) {
            return Err(DatasetError::InfeasibleSpec("cuboid extents must lie in [0.5, 1.5]"));
        }
        if !(raster_pitch > 0.0) {
            return Err(DatasetError::InfeasibleSpec("raster pitch must be positive"));
        }
        if raster_pitch > height.min(depth).min(CUBOID_WIDTH) {
            return Err(DatasetError::InfeasibleSpec("raster pitch exceeds the smallest face extent"));
        }
        Ok(CuboidSpec { height, depth, raster_pitch, seed })
    }

    /// Draws the free dimensions from the seed.
    pub fn sample(seed: u64, raster_pitch: f64) -> Result<Self, DatasetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let height = rng.gen_range(0.5..1.5);
        let depth = rng.gen_range(0.5..1.5);
        CuboidSpec::new(height, depth, raster_pitch, seed)
    }
}

/// Width and height drawn uniformly from [0.4, 1.8]; fixed 4 cm thickness;
/// up to 3 horizontal and 1 vertical crossbars.
#[derive(Clone, Copy, Debug)]
pub struct WindowSpec {
    pub width: f64,
    pub height: f64,
    pub h_bars: u8,
    pub v_bars: u8,
    pub member_breadth: f64,
    pub raster_pitch: f64,
    pub seed: u64,
}

impl WindowSpec {
    pub fn new(
        width: f64,
        height: f64,
        h_bars: u8,
        v_bars: u8,
        member_breadth: f64,
        raster_pitch: f64,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        if !(0.4..=1.8).contains(&width) || !(0.4..=1.8).contains(&height) {
            return Err(DatasetError::InfeasibleSpec("window extents must lie in [0.4, 1.8]"));
        }
        if h_bars > 3 || v_bars > 1 {
            return Err(DatasetError::InfeasibleSpec("crossbar counts out of range"));
        }
        if !(member_breadth > 0.0) || !(raster_pitch > 0.0) {
            return Err(DatasetError::InfeasibleSpec("breadth and pitch must be positive"));
        }
        let spec = WindowSpec { width, height, h_bars, v_bars, member_breadth, raster_pitch, seed };
        let (ox, oy) = spec.opening();
        if ox <= 0.0 || oy <= 0.0 {
            return Err(DatasetError::InfeasibleSpec("frame leaves no opening"));
        }
        if h_bars > 0 && oy / (h_bars as f64 + 1.0) < 2.0 * member_breadth {
            return Err(DatasetError::InfeasibleSpec("horizontal crossbars do not fit"));
        }
        if v_bars > 0 && ox < 2.0 * member_breadth {
            return Err(DatasetError::InfeasibleSpec("vertical crossbar does not fit"));
        }
        Ok(spec)
    }

    /// Draws extents and crossbar counts from the seed, clamping the counts
    /// to what fits the opening geometrically.
    pub fn sample(seed: u64, member_breadth: f64, raster_pitch: f64) -> Result<Self, DatasetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.gen_range(0.4..1.8);
        let height = rng.gen_range(0.4..1.8);
        let h_drawn = rng.gen_range(0..=3u8);
        let v_drawn = rng.gen_range(0..=1u8);
        let oy = height - 2.0 * member_breadth;
        let ox = width - 2.0 * member_breadth;
        let h_fit = if oy > 0.0 {
            (libm::floor(oy / (2.0 * member_breadth)) as i64 - 1).max(0) as u8
        } else {
            0
        };
        let v_fit = u8::from(ox >= 2.0 * member_breadth);
        WindowSpec::new(
            width,
            height,
            h_drawn.min(h_fit).min(3),
            v_drawn.min(v_fit),
            member_breadth,
            raster_pitch,
            seed,
        )
    }

    fn opening(&self) -> (f64, f64) {
        (self.width - 2.0 * self.member_breadth, self.height - 2.0 * self.member_breadth)
    }

    /// Number of paths the generator will emit: one per member per broad side.
    pub fn n_paths(&self) -> usize {
        2 * (4 + self.h_bars as usize + self.v_bars as usize)
    }
}

/// Interior grid lines perturbed by up to 30% of a cell, deterministic in
/// the rng state. Keeps faces planar while breaking the exact thickness
/// ties a perfectly regular grid produces on symmetric objects, which would
/// distort percentile-based coverage scores.
fn jittered_cuts(extent: f64, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (libm::ceil(extent / cell - 1e-12).max(1.0)) as usize;
    let mut cuts = Vec::with_capacity(n + 1);
    cuts.push(0.0);
    for i in 1..n {
        let wobble: f64 = rng.gen_range(-0.3..0.3);
        cuts.push((i as f64 + wobble) / n as f64);
    }
    cuts.push(1.0);
    cuts
}

/// Raster lane offsets across `extent`: floor(extent/pitch)+1 lanes at exact
/// pitch spacing, centered so the margins split the remainder.
pub fn pass_lanes(extent: f64, pitch: f64) -> Vec<f64> {
    let n = libm::floor(extent / pitch + 1e-9) as usize + 1;
    let margin = (extent - (n - 1) as f64 * pitch) / 2.0;
    (0..n).map(|k| margin + k as f64 * pitch).collect()
}

fn line_steps(len: f64, step: f64) -> Vec<f64> {
    let n = libm::floor(len / step + 1e-9) as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    if len - n as f64 * step > 1e-9 {
        out.push(len);
    }
    out
}

/// One boustrophedon raster over a rectangular patch. Passes run along `u`,
/// lanes advance along `v`, and consecutive passes are joined by short
/// transition strokes at the alternating ends, so the result is a single
/// connected path on the patch.
fn raster_poses(
    origin: Vec3,
    u_dir: Vec3,
    v_dir: Vec3,
    lu: f64,
    lv: f64,
    pitch: f64,
    step: f64,
    inward: Vec3,
) -> Vec<Pose> {
    let lanes = pass_lanes(lv, pitch);
    let along = line_steps(lu, step);
    let mut poses: Vec<Pose> = Vec::new();
    let mut push = |u: f64, v: f64| {
        let p = origin + u_dir * u + v_dir * v;
        poses.push(Pose { position: p, orientation: inward });
    };
    for (k, &lane) in lanes.iter().enumerate() {
        let forward = k % 2 == 0;
        if forward {
            for &u in &along {
                push(u, lane);
            }
        } else {
            for &u in along.iter().rev() {
                push(u, lane);
            }
        }
        if k + 1 < lanes.len() {
            let next = lanes[k + 1];
            let end_u = if forward { lu } else { 0.0 };
            for &t in &line_steps(next - lane, step) {
                if t > 1e-12 && t < next - lane - 1e-12 {
                    push(end_u, lane + t);
                }
            }
        }
    }
    poses
}

struct FacePatch {
    origin: Vec3,
    u_dir: Vec3,
    v_dir: Vec3,
    lu: f64,
    lv: f64,
    inward: Vec3,
}

impl FacePatch {
    /// Orients the patch so passes run along the longer extent.
    fn oriented(origin: Vec3, a_dir: Vec3, a_len: f64, b_dir: Vec3, b_len: f64, inward: Vec3) -> Self {
        if a_len >= b_len {
            FacePatch { origin, u_dir: a_dir, v_dir: b_dir, lu: a_len, lv: b_len, inward }
        } else {
            FacePatch { origin, u_dir: b_dir, v_dir: a_dir, lu: b_len, lv: a_len, inward }
        }
    }

    fn path(&self, pitch: f64, step: f64) -> Result<Path, GeomError> {
        Path::new(raster_poses(
            self.origin, self.u_dir, self.v_dir, self.lu, self.lv, pitch, step, self.inward,
        ))
    }
}

/// Six boustrophedon rasters, one per exterior face, with gun orientations
/// equal to the inward face normal and deposition points on the surface.
pub fn generate_cuboid(spec: &CuboidSpec, params: &GenParams) -> Result<ObjectSample, DatasetError> {
    let hx = CUBOID_WIDTH / 2.0;
    let hy = spec.height / 2.0;
    let hz = spec.depth / 2.0;
    let mut mesh = TriMesh::new();
    let mut tess_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e55_e11a);
    mesh.push_box_with(
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, hy, hz),
        BoxSides::ALL,
        |extent| jittered_cuts(extent, params.tess_cell, &mut tess_rng),
    );

    let (ex, ey, ez) = (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0));
    let faces = [
        FacePatch::oriented(Vec3::new(hx, -hy, -hz), ey, 2.0 * hy, ez, 2.0 * hz, -ex),
        FacePatch::oriented(Vec3::new(-hx, -hy, -hz), ey, 2.0 * hy, ez, 2.0 * hz, ex),
        FacePatch::oriented(Vec3::new(-hx, hy, -hz), ex, 2.0 * hx, ez, 2.0 * hz, -ey),
        FacePatch::oriented(Vec3::new(-hx, -hy, -hz), ex, 2.0 * hx, ez, 2.0 * hz, ey),
        FacePatch::oriented(Vec3::new(-hx, -hy, hz), ex, 2.0 * hx, ey, 2.0 * hy, -ez),
        FacePatch::oriented(Vec3::new(-hx, -hy, -hz), ex, 2.0 * hx, ey, 2.0 * hy, ez),
    ];
    let mut paths = Vec::with_capacity(6);
    for f in &faces {
        paths.push(f.path(spec.raster_pitch, params.pass_step)?);
    }
    let cloud = sample_point_cloud(&mesh, params.cloud_points, spec.seed)?;
    Ok(ObjectSample::new(cloud, paths, Some(mesh), Category::Cuboids)?)
}

#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

/// Frame of four perimeter members plus crossbars; one longitudinal raster
/// path per member per broad side (front and back), orientation
/// perpendicular to the painted side.
pub fn generate_window(spec: &WindowSpec, params: &GenParams) -> Result<ObjectSample, DatasetError> {
    let w2 = spec.width / 2.0;
    let h2 = spec.height / 2.0;
    let b = spec.member_breadth;
    let t2 = WINDOW_THICKNESS / 2.0;
    let (oy0, oy1) = (-h2 + b, h2 - b);
    let (ox0, ox1) = (-w2 + b, w2 - b);

    // crossbar center lines, evenly spaced over the opening
    let hbar_centers: Vec<f64> = (1..=spec.h_bars as usize)
        .map(|i| oy0 + i as f64 * (oy1 - oy0) / (spec.h_bars as f64 + 1.0))
        .collect();

    let mut mesh = TriMesh::new();
    let mut tess_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e55_e11a);
    let mut push_rect_box = |r: Rect, sides: BoxSides, mesh: &mut TriMesh| {
        mesh.push_box_with(
            Vec3::new(r.x0, r.y0, -t2),
            Vec3::new(r.x1, r.y1, t2),
            sides,
            |extent| jittered_cuts(extent, params.tess_cell, &mut tess_rng),
        );
    };

    let top = Rect { x0: -w2, x1: w2, y0: h2 - b, y1: h2 };
    let bottom = Rect { x0: -w2, x1: w2, y0: -h2, y1: -h2 + b };
    let left = Rect { x0: -w2, x1: -w2 + b, y0: oy0, y1: oy1 };
    let right = Rect { x0: w2 - b, x1: w2, y0: oy0, y1: oy1 };
    push_rect_box(top, BoxSides::ALL, &mut mesh);
    push_rect_box(bottom, BoxSides::ALL, &mut mesh);
    push_rect_box(left, BoxSides::without_y_caps(), &mut mesh);
    push_rect_box(right, BoxSides::without_y_caps(), &mut mesh);

    let mut members: Vec<Rect> = vec![top, bottom, left, right];

    for &cy in &hbar_centers {
        let bar = Rect { x0: ox0, x1: ox1, y0: cy - b / 2.0, y1: cy + b / 2.0 };
        push_rect_box(bar, BoxSides::without_x_caps(), &mut mesh);
        members.push(bar);
    }

    if spec.v_bars > 0 {
        // mesh pieces stop at each horizontal bar so boxes never interpenetrate
        let bar = Rect { x0: -b / 2.0, x1: b / 2.0, y0: oy0, y1: oy1 };
        let mut lo = oy0;
        for &cy in &hbar_centers {
            if cy - b / 2.0 - lo > 1e-9 {
                push_rect_box(
                    Rect { x0: bar.x0, x1: bar.x1, y0: lo, y1: cy - b / 2.0 },
                    BoxSides::without_y_caps(),
                    &mut mesh,
                );
            }
            lo = cy + b / 2.0;
        }
        if oy1 - lo > 1e-9 {
            push_rect_box(
                Rect { x0: bar.x0, x1: bar.x1, y0: lo, y1: oy1 },
                BoxSides::without_y_caps(),
                &mut mesh,
            );
        }
        // the path itself spans the full opening; over crossings it rides on
        // the horizontal bars' broad faces, which share the same plane
        members.push(bar);
    }

    let ex = Vec3::new(1.0, 0.0, 0.0);
    let ey = Vec3::new(0.0, 1.0, 0.0);
    let ez = Vec3::new(0.0, 0.0, 1.0);
    let mut paths = Vec::with_capacity(spec.n_paths());
    for r in &members {
        let (lx, ly) = (r.x1 - r.x0, r.y1 - r.y0);
        // front (z = +t/2), gun pointing -z
        let front = FacePatch::oriented(Vec3::new(r.x0, r.y0, t2), ex, lx, ey, ly, -ez);
        paths.push(front.path(spec.raster_pitch, params.pass_step)?);
        // back (z = -t/2), gun pointing +z
        let back = FacePatch::oriented(Vec3::new(r.x0, r.y0, -t2), ex, lx, ey, ly, ez);
        paths.push(back.path(spec.raster_pitch, params.pass_step)?);
    }
    debug_assert_eq!(paths.len(), spec.n_paths());

    let cloud = sample_point_cloud(&mesh, params.cloud_points, spec.seed)?;
    Ok(ObjectSample::new(cloud, paths, Some(mesh), Category::Windows)?)
}

/// Area-weighted uniform sampling of 4x candidates followed by greedy
/// farthest-point thinning to exactly `count` points; deterministic given
/// the seed.
pub fn sample_point_cloud(mesh: &TriMesh, count: usize, seed: u64) -> Result<Vec<Vec3>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::BadCount);
    }
    let n_faces = mesh.n_faces();
    let mut cumulative = Vec::with_capacity(n_faces);
    let mut total = 0.0;
    for f in 0..n_faces {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 1e-12) {
        return Err(DatasetError::DegenerateMesh);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_candidates = count.saturating_mul(4);
    let mut candidates = Vec::with_capacity(n_candidates);
    for _ in 0..n_candidates {
        let r = rng.gen_range(0.0..total);
        let f = cumulative.partition_point(|&c| c <= r).min(n_faces - 1);
        let [a, b, c] = mesh.face_vertices(f);
        let su = libm::sqrt(rng.gen_range(0.0..1.0f64));
        let v: f64 = rng.gen_range(0.0..1.0);
        let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
        candidates.push(a * wa + b * wb + c * wc);
    }

    // farthest-point thinning
    let mut selected = Vec::with_capacity(count);
    let mut min_d2: Vec<f64> = candidates.iter().map(|p| (*p - candidates[0]).norm_sq()).collect();
    selected.push(candidates[0]);
    while selected.len() < count {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        let chosen = candidates[best];
        selected.push(chosen);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = (candidates[i] - chosen).norm_sq();
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Greedy arc-length walk: keeps the first pose, then every pose whose
/// cumulative travel from the last kept pose reaches `spacing`, and always
/// the final pose.
pub fn downsample_path(path: &Path, spacing: f64) -> Result<Path, DatasetError> {
    if !(spacing > 0.0) {
        return Err(DatasetError::InfeasibleSpec("spacing must be positive"));
    }
    let poses = path.poses();
    let mut kept = vec![poses[0]];
    let mut last_kept = 0usize;
    let mut cum = 0.0;
    for i in 1..poses.len() {
        cum += (poses[i].position - poses[i - 1].position).norm();
        if cum >= spacing - 1e-12 {
            kept.push(poses[i]);
            last_kept = i;
            cum = 0.0;
        }
    }
    if last_kept != poses.len() - 1 {
        kept.push(poses[poses.len() - 1]);
    }
    Ok(Path::new(kept)?)
}
