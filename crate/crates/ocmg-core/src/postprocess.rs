//! Turns per-mask segment groups into executable ordered paths: duplicate
//! filtering, a k-NN cost graph, minimum branching, DAG longest path,
//! concatenation, and polyline simplification.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::branching::{minimum_branching, BranchError, Branching, Edge};
use crate::geom::{
    pose_distance_sq, segment_distance_sq, GeomError, MetricConfig, Path, Pose, Segment,
};
use crate::segments::SegmentSet;

#[derive(Clone, Debug, PartialEq)]
pub enum PostprocessError {
    Geom(GeomError),
    Branch(BranchError),
    EmptyGroup,
    BadConfig(&'static str),
}

impl fmt::Display for PostprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostprocessError::Geom(e) => write!(f, "{e}"),
            PostprocessError::Branch(e) => write!(f, "{e}"),
            PostprocessError::EmptyGroup => write!(f, "segment group is empty"),
            PostprocessError::BadConfig(w) => write!(f, "invalid postprocess config: {w}"),
        }
    }
}

impl core::error::Error for PostprocessError {}

impl From<GeomError> for PostprocessError {
    fn from(e: GeomError) -> Self {
        PostprocessError::Geom(e)
    }
}

impl From<BranchError> for PostprocessError {
    fn from(e: BranchError) -> Self {
        PostprocessError::Branch(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdpParams {
    /// Positional deviation threshold, same units as the poses.
    pub translation: f64,
    /// Orientation deviation threshold, radians.
    pub rotation: f64,
}

impl Default for RdpParams {
    fn default() -> Self {
        RdpParams { translation: 0.01, rotation: 15.0f64.to_radians() }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PostprocessConfig {
    /// Duplicate threshold in the 6-D metric (compared against squared
    /// distances as a squared threshold).
    pub dup_threshold: f64,
    /// Trade-off weight of the direction term in the edge cost.
    pub direction_weight: f64,
    /// Outgoing edges per node in the segment graph.
    pub knn: usize,
    /// Include the weighted orientation block in the edge gap term.
    pub orientation_in_cost: bool,
    /// Polyline simplification; `None` keeps every waypoint.
    pub rdp: Option<RdpParams>,
    /// Optional fixed-spacing linear resampling after simplification.
    pub resample_spacing: Option<f64>,
    pub metric: MetricConfig,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            dup_threshold: 0.05,
            direction_weight: 1.0,
            knn: 5,
            orientation_in_cost: false,
            rdp: Some(RdpParams::default()),
            resample_spacing: None,
            metric: MetricConfig::default(),
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        if !(self.dup_threshold > 0.0) {
            return Err(PostprocessError::BadConfig("duplicate threshold must be positive"));
        }
        if !(self.direction_weight >= 0.0) {
            return Err(PostprocessError::BadConfig("direction weight must be non-negative"));
        }
        if self.knn == 0 {
            return Err(PostprocessError::BadConfig("knn must be at least 1"));
        }
        if let Some(r) = &self.rdp {
            if !(r.translation > 0.0) || !(r.rotation > 0.0) {
                return Err(PostprocessError::BadConfig("rdp thresholds must be positive"));
            }
        }
        if let Some(s) = self.resample_spacing {
            if !(s > 0.0) {
                return Err(PostprocessError::BadConfig("resample spacing must be positive"));
            }
        }
        Ok(())
    }
}

/// Greedy duplicate removal: visit segment pairs in ascending distance
/// order; whenever a pair under the threshold still has both members, drop
/// the higher-indexed one. Returns the retained indices, ascending.
pub fn filter_duplicates(
    segments: &[Segment],
    dup_threshold: f64,
    metric: &MetricConfig,
) -> Vec<usize> {
    let n = segments.len();
    let threshold_sq = dup_threshold * dup_threshold;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = segment_distance_sq(&segments[i], &segments[j], metric);
            if d < threshold_sq {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut retained = vec![true; n];
    for (_, i, j) in pairs {
        if retained[i] && retained[j] {
            retained[j] = false;
        }
    }
    (0..n).filter(|&i| retained[i]).collect()
}

/// Pose-coincidence tolerance of the subsumption drop, in the 6-D metric.
const SUBSUME_EPS_SQ: f64 = 1e-18;

/// Drops retained segments that carry no waypoint of their own: every pose
/// coincides (to double precision) with a pose of some other retained
/// segment. End-anchored tail segments can leave their predecessor fully
/// covered this way, and a fully covered segment left in the graph forks
/// the branching and costs the chain its unique final waypoint. Predicted
/// segments never coincide to this tolerance, so this pass only ever fires
/// on replayed ground truth.
fn drop_subsumed(segments: &[Segment], retained: Vec<usize>, metric: &MetricConfig) -> Vec<usize> {
    let mut alive = retained;
    let mut i = 0;
    while i < alive.len() {
        let candidate = &segments[alive[i]];
        let covered = candidate.poses().iter().all(|p| {
            alive.iter().enumerate().any(|(j, &other)| {
                j != i
                    && segments[other]
                        .poses()
                        .iter()
                        .any(|q| pose_distance_sq(p, q, metric) < SUBSUME_EPS_SQ)
            })
        });
        if covered {
            alive.remove(i);
        } else {
            i += 1;
        }
    }
    alive
}

/// Cost of appending segment `b` after segment `a`: squared gap between the
/// boundary poses plus a weighted squared difference of the boundary step
/// directions. Positions only, unless configured otherwise.
pub fn edge_cost(a: &Segment, b: &Segment, cfg: &PostprocessConfig) -> f64 {
    let gap = if cfg.orientation_in_cost {
        pose_distance_sq(a.last(), b.first(), &cfg.metric)
    } else {
        (a.last().position - b.first().position).norm_sq()
    };
    let la = a.len();
    let out_dir = a.poses()[la - 1].position - a.poses()[la - 2].position;
    let in_dir = b.poses()[1].position - b.poses()[0].position;
    gap + cfg.direction_weight * (out_dir - in_dir).norm_sq()
}

/// Directed k-NN graph over a segment group under [`edge_cost`].
pub fn build_graph(segments: &[Segment], nodes: &[usize], cfg: &PostprocessConfig) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (a_pos, &a) in nodes.iter().enumerate() {
        let mut costs: Vec<(f64, usize)> = Vec::with_capacity(nodes.len().saturating_sub(1));
        for (b_pos, &b) in nodes.iter().enumerate() {
            if a_pos == b_pos {
                continue;
            }
            costs.push((edge_cost(&segments[a], &segments[b], cfg), b_pos));
        }
        costs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(cost, b_pos) in costs.iter().take(cfg.knn) {
            edges.push(Edge { from: a_pos, to: b_pos, cost });
        }
    }
    edges
}

/// Longest directed path in a branching: maximum hop count, ties broken by
/// minimum total edge cost, then by lexicographically smallest node
/// sequence. Returns node indices in travel order.
pub fn longest_path(branching: &Branching) -> Vec<usize> {
    let n = branching.parent.len();
    if n == 0 {
        return Vec::new();
    }
    let mut children = branching.children();
    for ch in &mut children {
        ch.sort_unstable();
    }

    // best (hops, cost) of a downward path starting at each node
    let mut memo: Vec<Option<(usize, f64, Option<usize>)>> = vec![None; n];
    fn best_from(
        v: usize,
        children: &[Vec<usize>],
        parent: &[Option<(usize, f64)>],
        memo: &mut Vec<Option<(usize, f64, Option<usize>)>>,
    ) -> (usize, f64, Option<usize>) {
        if let Some(m) = memo[v] {
            return m;
        }
        let mut best: (usize, f64, Option<usize>) = (0, 0.0, None);
        for &c in &children[v] {
            let (h, cost, _) = best_from(c, children, parent, memo);
            let edge = parent[c].map(|(_, w)| w).unwrap_or(0.0);
            let cand = (h + 1, cost + edge, Some(c));
            let better = cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1);
            // equal hops and cost: children are visited ascending, keep first
            if better {
                best = cand;
            }
        }
        memo[v] = Some(best);
        best
    }

    let mut start = 0;
    let mut start_best = (0usize, 0.0f64);
    for v in 0..n {
        let (h, c, _) = best_from(v, &children, &branching.parent, &mut memo);
        if h > start_best.0 || (h == start_best.0 && c < start_best.1) {
            start = v;
            start_best = (h, c);
        }
    }
    let mut order = vec![start];
    let mut v = start;
    while let Some((_, _, Some(next))) = memo[v] {
        order.push(next);
        v = next;
    }
    order
}

/// Appends segments in order. When a join's boundary poses fall within the
/// duplicate threshold, the later one is dropped (it duplicates ground the
/// path already covers); otherwise both stay.
pub fn concatenate(
    segments: &[Segment],
    order: &[usize],
    cfg: &PostprocessConfig,
) -> Result<Path, PostprocessError> {
    if order.is_empty() {
        return Err(PostprocessError::EmptyGroup);
    }
    let threshold_sq = cfg.dup_threshold * cfg.dup_threshold;
    let mut poses: Vec<Pose> = Vec::new();
    for &idx in order {
        let seg = &segments[idx];
        let mut start = 0;
        if let Some(last) = poses.last() {
            if pose_distance_sq(last, seg.first(), &cfg.metric) < threshold_sq {
                start = 1;
            }
        }
        for pose in &seg.poses()[start..] {
            // overlapping tails can repeat the running endpoint exactly
            let duplicate = poses
                .last()
                .is_some_and(|last| pose_distance_sq(last, pose, &cfg.metric) == 0.0);
            if !duplicate {
                poses.push(*pose);
            }
        }
    }
    Ok(Path::new(poses)?)
}

/// Ramer-Douglas-Peucker over 6-D waypoints: a pose survives when its
/// positional deviation from the chord exceeds the translation threshold or
/// its orientation strays from the interpolated orientation by more than
/// the rotation threshold. Endpoints always survive.
pub fn rdp_simplify(path: &Path, params: &RdpParams) -> Result<Path, PostprocessError> {
    let poses = path.poses();
    let mut keep = vec![false; poses.len()];
    keep[0] = true;
    keep[poses.len() - 1] = true;
    rdp_mark(poses, 0, poses.len() - 1, params, &mut keep);
    let kept: Vec<Pose> = poses
        .iter()
        .zip(&keep)
        .filter_map(|(p, &k)| if k { Some(*p) } else { None })
        .collect();
    Ok(Path::new(kept)?)
}

fn rdp_mark(poses: &[Pose], lo: usize, hi: usize, params: &RdpParams, keep: &mut [bool]) {
    if hi <= lo + 1 {
        return;
    }
    let a = &poses[lo];
    let b = &poses[hi];
    let chord = b.position - a.position;
    let chord_len_sq = chord.norm_sq();
    let cos_limit = libm::cos(params.rotation);

    let mut worst: Option<(usize, f64)> = None;
    for i in (lo + 1)..hi {
        let p = &poses[i];
        // perpendicular distance to the finite chord
        let t = if chord_len_sq > 0.0 {
            (p.position - a.position).dot(chord) / chord_len_sq
        } else {
            0.0
        }
        .clamp(0.0, 1.0);
        let foot = a.position + chord * t;
        let pos_dev = (p.position - foot).norm();

        let blended = a.orientation * (1.0 - t) + b.orientation * t;
        let ang_score = match blended.normalized() {
            Some(interp) => {
                let c = p.orientation.dot(interp).clamp(-1.0, 1.0);
                // violation grows as the cosine falls below the limit
                if c >= cos_limit {
                    0.0
                } else {
                    libm::acos(c) / params.rotation
                }
            }
            // antipodal endpoint orientations: always a violation
            None => 2.0,
        };
        let score = (pos_dev / params.translation).max(ang_score);
        if score > 1.0 {
            match worst {
                Some((_, s)) if s >= score => {}
                _ => worst = Some((i, score)),
            }
        }
    }
    if let Some((split, _)) = worst {
        keep[split] = true;
        rdp_mark(poses, lo, split, params, keep);
        rdp_mark(poses, split, hi, params, keep);
    }
}

/// Evenly respaces a path along its arc length, keeping endpoints.
pub fn resample_path(path: &Path, spacing: f64) -> Result<Path, PostprocessError> {
    if !(spacing > 0.0) {
        return Err(PostprocessError::BadConfig("resample spacing must be positive"));
    }
    let poses = path.poses();
    let mut arc = vec![0.0f64];
    for pair in poses.windows(2) {
        let d = (pair[1].position - pair[0].position).norm();
        arc.push(arc.last().unwrap() + d);
    }
    let total = *arc.last().unwrap();
    let steps = (libm::ceil(total / spacing - 1e-12) as usize).max(1);
    let mut out = Vec::with_capacity(steps + 1);
    let mut cursor = 0usize;
    for k in 0..=steps {
        let target = total * k as f64 / steps as f64;
        while cursor + 1 < arc.len() - 1 && arc[cursor + 1] < target {
            cursor += 1;
        }
        let span = arc[cursor + 1] - arc[cursor];
        let t = if span > 0.0 { (target - arc[cursor]) / span } else { 0.0 };
        let a = &poses[cursor];
        let b = &poses[cursor + 1];
        let position = a.position + (b.position - a.position) * t;
        let orientation = (a.orientation * (1.0 - t) + b.orientation * t)
            .normalized()
            .unwrap_or(a.orientation);
        out.push(Pose { position, orientation });
    }
    Ok(Path::new(out)?)
}

/// Runs the whole pipeline independently for every mask group: duplicate
/// filter, k-NN graph, minimum branching, longest path, concatenation, and
/// optional simplification/resampling. Groups left without a retained
/// segment produce no path. Returns `(mask id, path)` sorted by mask id.
pub fn postprocess_all(
    set: &SegmentSet,
    mask_of_segment: &[usize],
    cfg: &PostprocessConfig,
) -> Result<Vec<(usize, Path)>, PostprocessError> {
    cfg.validate()?;
    assert_eq!(set.len(), mask_of_segment.len(), "one mask id per segment");
    let mut groups: Vec<usize> = mask_of_segment.to_vec();
    groups.sort_unstable();
    groups.dedup();

    let mut out = Vec::new();
    for &mask in &groups {
        let members: Vec<usize> = (0..set.len()).filter(|&j| mask_of_segment[j] == mask).collect();
        if let Some(path) = postprocess_group(set.segments(), &members, cfg)? {
            out.push((mask, path));
        }
    }
    Ok(out)
}

fn postprocess_group(
    segments: &[Segment],
    members: &[usize],
    cfg: &PostprocessConfig,
) -> Result<Option<Path>, PostprocessError> {
    if members.is_empty() {
        return Ok(None);
    }
    let group: Vec<Segment> = members.iter().map(|&j| segments[j].clone()).collect();
    let retained = filter_duplicates(&group, cfg.dup_threshold, &cfg.metric);
    let retained = drop_subsumed(&group, retained, &cfg.metric);
    if retained.is_empty() {
        return Ok(None);
    }
    let order: Vec<usize> = if retained.len() == 1 {
        vec![retained[0]]
    } else {
        let edges = build_graph(&group, &retained, cfg);
        let branching = minimum_branching(retained.len(), &edges)?;
        longest_path(&branching).into_iter().map(|pos| retained[pos]).collect()
    };
    let mut path = concatenate(&group, &order, cfg)?;
    if let Some(rdp) = &cfg.rdp {
        path = rdp_simplify(&path, rdp)?;
    }
    if let Some(spacing) = cfg.resample_spacing {
        path = resample_path(&path, spacing)?;
    }
    Ok(Some(path))
}
