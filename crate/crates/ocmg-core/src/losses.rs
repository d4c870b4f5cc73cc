//! The Chamfer-family losses over pose and segment sets, the asymmetric
//! point-to-segment training curriculum, mask targets via nearest-neighbour
//! label association, and the matched mask loss.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{pose_distance_sq, segment_distance_sq, MetricConfig, Pose};
use crate::segments::{flatten_to_points, SegmentSet};

pub use crate::assignment::{assignment_cost, hungarian, AssignError};

/// Probabilities are clamped to [CLAMP, 1 - CLAMP] inside every log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub enum LossError {
    EmptySet,
    LambdaMismatch,
    /// Mask vectors must all have one probability per segment slot.
    WidthMismatch,
    LabelsMissing,
    /// Fewer mask slots than real paths.
    SlotsTooFew { slots: usize, paths: usize },
    EpochOutOfRange { epoch: usize, total: usize },
    BadWeights(&'static str),
    Assign(AssignError),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::EmptySet => write!(f, "chamfer terms need non-empty sets"),
            LossError::LambdaMismatch => write!(f, "segment sets differ in lambda"),
            LossError::WidthMismatch => write!(f, "mask width does not match the segment count"),
            LossError::LabelsMissing => write!(f, "ground-truth segments carry no path labels"),
            LossError::SlotsTooFew { slots, paths } => {
                write!(f, "{slots} mask slots cannot hold {paths} paths")
            }
            LossError::EpochOutOfRange { epoch, total } => {
                write!(f, "epoch {epoch} outside schedule of {total}")
            }
            LossError::BadWeights(w) => write!(f, "invalid curriculum weights: {w}"),
            LossError::Assign(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for LossError {}

impl From<AssignError> for LossError {
    fn from(e: AssignError) -> Self {
        LossError::Assign(e)
    }
}

// ---------------------------------------------------------------------------
// Chamfer distances

/// Asymmetric Chamfer distance from pose set `a` to pose set `b`:
/// mean over `a` of the squared 6-D distance to the nearest element of `b`.
pub fn acd_points(a: &[Pose], b: &[Pose], cfg: &MetricConfig) -> Result<f64, LossError> {
    if a.is_empty() || b.is_empty() {
        return Err(LossError::EmptySet);
    }
    let mut acc = 0.0;
    for pa in a {
        acc += nearest_point(pa, b, cfg).1;
    }
    Ok(acc / a.len() as f64)
}

/// Symmetric point-wise Chamfer distance: `acd(a, b) + acd(b, a)`.
pub fn pcd_points(a: &[Pose], b: &[Pose], cfg: &MetricConfig) -> Result<f64, LossError> {
    Ok(acd_points(a, b, cfg)? + acd_points(b, a, cfg)?)
}

/// Asymmetric Chamfer distance between segment sets in R^(6*lambda).
pub fn acd_segments(a: &SegmentSet, b: &SegmentSet, cfg: &MetricConfig) -> Result<f64, LossError> {
    if a.is_empty() || b.is_empty() {
        return Err(LossError::EmptySet);
    }
    if a.lambda() != b.lambda() {
        return Err(LossError::LambdaMismatch);
    }
    let mut acc = 0.0;
    for sa in a.segments() {
        let mut best = f64::INFINITY;
        for sb in b.segments() {
            let d = segment_distance_sq(sa, sb, cfg);
            if d < best {
                best = d;
            }
        }
        acc += best;
    }
    Ok(acc / a.len() as f64)
}

pub fn pcd_segments(a: &SegmentSet, b: &SegmentSet, cfg: &MetricConfig) -> Result<f64, LossError> {
    Ok(acd_segments(a, b, cfg)? + acd_segments(b, a, cfg)?)
}

fn nearest_point(p: &Pose, set: &[Pose], cfg: &MetricConfig) -> (usize, f64) {
    let mut best = f64::INFINITY;
    let mut best_i = 0;
    for (i, q) in set.iter().enumerate() {
        let d = pose_distance_sq(p, q, cfg);
        if d < best {
            best = d;
            best_i = i;
        }
    }
    (best_i, best)
}

fn nearest_segment(s: &crate::geom::Segment, set: &SegmentSet, cfg: &MetricConfig) -> (usize, f64) {
    let mut best = f64::INFINITY;
    let mut best_i = 0;
    for (i, t) in set.segments().iter().enumerate() {
        let d = segment_distance_sq(s, t, cfg);
        if d < best {
            best = d;
            best_i = i;
        }
    }
    (best_i, best)
}

// ---------------------------------------------------------------------------
// Curriculum

/// The four weights of the point-to-segment loss: forward/backward times
/// point-wise/segment-wise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumWeights {
    pub forward_point: f64,
    pub forward_segment: f64,
    pub backward_point: f64,
    pub backward_segment: f64,
}

impl CurriculumWeights {
    pub fn new(fp: f64, fs: f64, bp: f64, bs: f64) -> Result<Self, LossError> {
        let all = [fp, fs, bp, bs];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::BadWeights("weights must be finite and non-negative"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(LossError::BadWeights("at least one weight must be positive"));
        }
        Ok(CurriculumWeights {
            forward_point: fp,
            forward_segment: fs,
            backward_point: bp,
            backward_segment: bs,
        })
    }

    /// The fully point-wise configuration (1, 0, 1, 0): the loss reduces to
    /// the plain symmetric Chamfer distance of the flattened pose sets.
    pub fn point_wise() -> Self {
        CurriculumWeights {
            forward_point: 1.0,
            forward_segment: 0.0,
            backward_point: 1.0,
            backward_segment: 0.0,
        }
    }
}

/// Piecewise-constant weight schedule: starts at (0, 1, 100, 0.01) and
/// multiplies the two backward weights by (0.1, 10) at each of the two
/// milestones, ending balanced at (0, 1, 1, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumSchedule {
    pub initial: CurriculumWeights,
    pub milestones: [usize; 2],
    pub total_epochs: usize,
}

pub const BACKWARD_POINT_FACTOR: f64 = 0.1;
pub const BACKWARD_SEGMENT_FACTOR: f64 = 10.0;

impl CurriculumSchedule {
    /// The reference schedule keeps its milestone-to-length ratios when the
    /// epoch budget is rescaled from 4800.
    pub fn standard(total_epochs: usize) -> Result<Self, LossError> {
        if total_epochs == 0 {
            return Err(LossError::BadWeights("schedule needs at least one epoch"));
        }
        let scale = |m: usize| -> usize {
            libm::round(m as f64 * total_epochs as f64 / 4800.0) as usize
        };
        let schedule = CurriculumSchedule {
            initial: CurriculumWeights::new(0.0, 1.0, 100.0, 0.01)?,
            milestones: [scale(1000), scale(2000)],
            total_epochs,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<(), LossError> {
        if self.milestones[0] > self.milestones[1] || self.milestones[1] >= self.total_epochs {
            return Err(LossError::BadWeights("milestones must be ordered and inside the budget"));
        }
        let last = self.weights_after(2);
        if last.backward_point != 1.0 || last.backward_segment != 1.0 {
            return Err(LossError::BadWeights("backward weights must reach exactly 1"));
        }
        Ok(())
    }

    fn weights_after(&self, applied: usize) -> CurriculumWeights {
        let mut w = self.initial;
        for _ in 0..applied {
            w.backward_point *= BACKWARD_POINT_FACTOR;
            w.backward_segment *= BACKWARD_SEGMENT_FACTOR;
        }
        w
    }

    pub fn weights_at(&self, epoch: usize) -> Result<CurriculumWeights, LossError> {
        if epoch >= self.total_epochs {
            return Err(LossError::EpochOutOfRange { epoch, total: self.total_epochs });
        }
        let applied = self.milestones.iter().filter(|&&m| epoch >= m).count();
        Ok(self.weights_after(applied))
    }
}

// ---------------------------------------------------------------------------
// Point-to-segment loss

/// The four-term point-to-segment Chamfer loss between predicted and
/// ground-truth segment sets. Point sets are the flattened segment poses.
pub fn p2s_cd(
    pred: &SegmentSet,
    gt: &SegmentSet,
    w: &CurriculumWeights,
    cfg: &MetricConfig,
) -> Result<f64, LossError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(LossError::EmptySet);
    }
    if pred.lambda() != gt.lambda() {
        return Err(LossError::LambdaMismatch);
    }
    let pred_points = flatten_to_points(pred);
    let gt_points = flatten_to_points(gt);
    let mut total = 0.0;
    if w.forward_point != 0.0 {
        total += w.forward_point * acd_points(&pred_points, &gt_points, cfg)?;
    }
    if w.forward_segment != 0.0 {
        total += w.forward_segment * acd_segments(pred, gt, cfg)?;
    }
    if w.backward_point != 0.0 {
        total += w.backward_point * acd_points(&gt_points, &pred_points, cfg)?;
    }
    if w.backward_segment != 0.0 {
        total += w.backward_segment * acd_segments(gt, pred, cfg)?;
    }
    Ok(total)
}

/// Per-pose-coordinate gradient of the loss, 6 values per predicted pose in
/// segment-major order. Nearest-neighbour assignments are held fixed at
/// their current values (ties to the lowest index), which is the exact
/// gradient wherever the assignments are locally stable.
pub fn p2s_cd_grad(
    pred: &SegmentSet,
    gt: &SegmentSet,
    w: &CurriculumWeights,
    cfg: &MetricConfig,
) -> Result<(f64, Vec<[f64; 6]>), LossError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(LossError::EmptySet);
    }
    if pred.lambda() != gt.lambda() {
        return Err(LossError::LambdaMismatch);
    }
    let lambda = pred.lambda();
    let pred_points = flatten_to_points(pred);
    let gt_points = flatten_to_points(gt);
    let mut grad = vec![[0.0f64; 6]; pred_points.len()];
    let ow = cfg.orientation_weight;
    let mut total = 0.0;

    let add = |g: &mut [f64; 6], scale: f64, from: &Pose, to: &Pose| {
        let dp = (from.position - to.position) * (2.0 * scale);
        let do_ = (from.orientation - to.orientation) * (2.0 * scale * ow);
        g[0] += dp.x;
        g[1] += dp.y;
        g[2] += dp.z;
        g[3] += do_.x;
        g[4] += do_.y;
        g[5] += do_.z;
    };

    if w.forward_point != 0.0 {
        let scale = w.forward_point / pred_points.len() as f64;
        let mut acc = 0.0;
        for (k, p) in pred_points.iter().enumerate() {
            let (j, d) = nearest_point(p, &gt_points, cfg);
            acc += d;
            add(&mut grad[k], scale, p, &gt_points[j]);
        }
        total += w.forward_point * (acc / pred_points.len() as f64);
    }
    if w.forward_segment != 0.0 {
        let scale = w.forward_segment / pred.len() as f64;
        let mut acc = 0.0;
        for (sj, s) in pred.segments().iter().enumerate() {
            let (m, d) = nearest_segment(s, gt, cfg);
            acc += d;
            let target = &gt.segments()[m];
            for t in 0..lambda {
                add(&mut grad[sj * lambda + t], scale, &s.poses()[t], &target.poses()[t]);
            }
        }
        total += w.forward_segment * (acc / pred.len() as f64);
    }
    if w.backward_point != 0.0 {
        let scale = w.backward_point / gt_points.len() as f64;
        let mut acc = 0.0;
        for p in &gt_points {
            let (k, d) = nearest_point(p, &pred_points, cfg);
            acc += d;
            add(&mut grad[k], scale, &pred_points[k], p);
        }
        total += w.backward_point * (acc / gt_points.len() as f64);
    }
    if w.backward_segment != 0.0 {
        let scale = w.backward_segment / gt.len() as f64;
        let mut acc = 0.0;
        for s in gt.segments() {
            let (m, d) = nearest_segment(s, pred, cfg);
            acc += d;
            let hit = &pred.segments()[m];
            for t in 0..lambda {
                add(&mut grad[m * lambda + t], scale, &hit.poses()[t], &s.poses()[t]);
            }
        }
        total += w.backward_segment * (acc / gt.len() as f64);
    }
    Ok((total, grad))
}

// ---------------------------------------------------------------------------
// Mask targets and mask loss

/// Binary path-membership masks over predicted segment slots, plus the
/// padded width (slots beyond `masks.len()` are the "no path" token).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMasks {
    masks: Vec<Vec<bool>>,
    n_slots: usize,
    width: usize,
}

impl TargetMasks {
    pub fn new(masks: Vec<Vec<bool>>, n_slots: usize, width: usize) -> Result<Self, LossError> {
        if masks.len() > n_slots {
            return Err(LossError::SlotsTooFew { slots: n_slots, paths: masks.len() });
        }
        if masks.iter().any(|m| m.len() != width) {
            return Err(LossError::WidthMismatch);
        }
        Ok(TargetMasks { masks, n_slots, width })
    }

    pub fn real(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn n_real(&self) -> usize {
        self.masks.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Projects ground-truth path membership onto predicted segments: segment
/// slot `j` belongs to the path owning its nearest ground-truth segment
/// (ties to the lowest index). Yields one mask per real path, padded with
/// "no path" slots up to `n_slots`.
pub fn build_target_masks(
    pred: &SegmentSet,
    gt: &SegmentSet,
    n_slots: usize,
    cfg: &MetricConfig,
) -> Result<TargetMasks, LossError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(LossError::EmptySet);
    }
    if pred.lambda() != gt.lambda() {
        return Err(LossError::LambdaMismatch);
    }
    let labels = gt.path_ids().ok_or(LossError::LabelsMissing)?;
    let n_paths = labels.iter().copied().max().map_or(0, |m| m + 1);
    if n_slots < n_paths {
        return Err(LossError::SlotsTooFew { slots: n_slots, paths: n_paths });
    }
    let mut masks = vec![vec![false; pred.len()]; n_paths];
    for (j, s) in pred.segments().iter().enumerate() {
        let (nn, _) = nearest_segment(s, gt, cfg);
        masks[labels[nn]][j] = true;
    }
    TargetMasks::new(masks, n_slots, pred.len())
}

/// Predicted per-path probability masks over segment slots plus one
/// confidence per mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskBundle {
    probs: Vec<Vec<f64>>,
    confidences: Vec<f64>,
}

impl MaskBundle {
    pub fn new(probs: Vec<Vec<f64>>, confidences: Vec<f64>) -> Result<Self, LossError> {
        if probs.len() != confidences.len() {
            return Err(LossError::WidthMismatch);
        }
        let width = probs.first().map_or(0, |p| p.len());
        for p in &probs {
            if p.len() != width {
                return Err(LossError::WidthMismatch);
            }
            if p.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                return Err(LossError::BadWeights("mask probabilities must lie in [0, 1]"));
            }
        }
        if confidences.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(LossError::BadWeights("confidences must lie in [0, 1]"));
        }
        Ok(MaskBundle { probs, confidences })
    }

    pub fn n_masks(&self) -> usize {
        self.probs.len()
    }

    pub fn width(&self) -> usize {
        self.probs.first().map_or(0, |p| p.len())
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn ln_clamped(p: f64) -> f64 {
    libm::log(clamp_prob(p))
}

/// Binary cross entropy of one probability against a binary target.
pub fn bce_scalar(prob: f64, target: bool) -> f64 {
    if target {
        -ln_clamped(prob)
    } else {
        -ln_clamped(1.0 - prob)
    }
}

/// Summed binary cross entropy of a probability mask against a binary mask.
pub fn bce_mask(probs: &[f64], target: &[bool]) -> Result<f64, LossError> {
    if probs.len() != target.len() {
        return Err(LossError::WidthMismatch);
    }
    Ok(probs.iter().zip(target).map(|(&p, &t)| bce_scalar(p, t)).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskLossResult {
    pub loss: f64,
    /// `assignment[i]` is the target slot matched to predicted mask `i`;
    /// slots at `n_real()` and beyond are the "no path" token.
    pub assignment: Vec<usize>,
}

/// Matched mask-prediction loss: a Hungarian assignment over BCE matching
/// costs (confidence-aware), then confidence BCE plus mask BCE on the real
/// pairs.
pub fn mask_loss(bundle: &MaskBundle, targets: &TargetMasks) -> Result<MaskLossResult, LossError> {
    let n = bundle.n_masks();
    if n != targets.n_slots() {
        return Err(LossError::WidthMismatch);
    }
    if bundle.width() != targets.width() {
        return Err(LossError::WidthMismatch);
    }
    let n_real = targets.n_real();
    let mut cost = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let conf = bundle.confidences()[i];
        for (j, row) in cost[i].iter_mut().enumerate() {
            *row = if j < n_real {
                bce_mask(&bundle.probs()[i], &targets.real()[j])? - ln_clamped(conf)
            } else {
                -ln_clamped(1.0 - conf)
            };
        }
    }
    let assignment = hungarian(&cost)?;
    let mut loss = 0.0;
    for (i, &slot) in assignment.iter().enumerate() {
        let real = slot < n_real;
        loss += bce_scalar(bundle.confidences()[i], real);
        if real {
            loss += bce_mask(&bundle.probs()[i], &targets.real()[slot])?;
        }
    }
    Ok(MaskLossResult { loss, assignment })
}

/// Like [`mask_loss`] but also returns d(loss)/d(probability) for every mask
/// entry and confidence, holding the matching fixed. Entries pushed outside
/// the clamp window contribute zero gradient.
pub fn mask_loss_grads(
    bundle: &MaskBundle,
    targets: &TargetMasks,
) -> Result<(MaskLossResult, Vec<Vec<f64>>, Vec<f64>), LossError> {
    let result = mask_loss(bundle, targets)?;
    let n = bundle.n_masks();
    let width = bundle.width();
    let mut d_prob = vec![vec![0.0f64; width]; n];
    let mut d_conf = vec![0.0f64; n];
    for (i, &slot) in result.assignment.iter().enumerate() {
        let real = slot < targets.n_real();
        d_conf[i] = bce_prob_grad(bundle.confidences()[i], real);
        if real {
            for (j, g) in d_prob[i].iter_mut().enumerate() {
                *g = bce_prob_grad(bundle.probs()[i][j], targets.real()[slot][j]);
            }
        }
    }
    Ok((result, d_prob, d_conf))
}

fn bce_prob_grad(p: f64, target: bool) -> f64 {
    if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    if target {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Inference-time grouping: every segment goes to the confident mask with
/// the highest probability for it.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentAssignment {
    /// Winning mask index per segment slot.
    pub mask_of_segment: Vec<usize>,
    /// Number of confident masks that received at least one segment.
    pub n_paths: usize,
}

/// Returns `None` when no mask reaches the confidence threshold (an empty
/// prediction, reported rather than fatal).
pub fn assign_segments(bundle: &MaskBundle, threshold: f64) -> Option<SegmentAssignment> {
    let confident: Vec<usize> = (0..bundle.n_masks())
        .filter(|&i| bundle.confidences()[i] >= threshold)
        .collect();
    if confident.is_empty() {
        return None;
    }
    let width = bundle.width();
    let mut mask_of_segment = Vec::with_capacity(width);
    let mut used = vec![false; bundle.n_masks()];
    for j in 0..width {
        let mut best = confident[0];
        let mut best_p = f64::NEG_INFINITY;
        for &i in &confident {
            let p = bundle.probs()[i][j];
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        used[best] = true;
        mask_of_segment.push(best);
    }
    let n_paths = used.iter().filter(|&&u| u).count();
    Some(SegmentAssignment { mask_of_segment, n_paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Segment, Vec3};
    use crate::testutil::{random_pose, random_segment_set};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    fn pose_at(x: f64) -> Pose {
        Pose { position: Vec3::new(x, 0.0, 0.0), orientation: Vec3::new(0.0, 0.0, 1.0) }
    }

    fn shifted_set(base: &SegmentSet, dx: f64) -> SegmentSet {
        let lambda = base.lambda();
        let segs = base
            .segments()
            .iter()
            .map(|s| {
                let poses: Vec<Pose> = s
                    .poses()
                    .iter()
                    .map(|p| Pose {
                        position: p.position + Vec3::new(dx, 0.0, 0.0),
                        orientation: p.orientation,
                    })
                    .collect();
                Segment::new(poses, lambda).unwrap()
            })
            .collect();
        SegmentSet::from_segments(segs, lambda).unwrap()
    }

    #[test]
    fn acd_examples() {
        let c = cfg();
        let a = [pose_at(0.0), pose_at(5.0)];
        assert_eq!(acd_points(&a, &a, &c).unwrap(), 0.0);

        let single = [pose_at(0.0)];
        let moved = [pose_at(1.0)];
        assert_eq!(acd_points(&single, &moved, &c).unwrap(), 1.0);

        // asymmetry: everything in B has an exact match in A, not vice versa
        let b = [pose_at(0.0)];
        let ab = acd_points(&a, &b, &c).unwrap();
        let ba = acd_points(&b, &a, &c).unwrap();
        assert_eq!(ab, 25.0 / 2.0);
        assert_eq!(ba, 0.0);

        assert_eq!(acd_points(&[], &a, &c), Err(LossError::EmptySet));
    }

    #[test]
    fn pcd_examples() {
        let c = cfg();
        let a = [pose_at(0.0)];
        let b = [pose_at(1.0)];
        assert_eq!(pcd_points(&a, &a, &c).unwrap(), 0.0);
        assert_eq!(pcd_points(&a, &b, &c).unwrap(), 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let xs: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng)).collect();
            let ys: Vec<Pose> = (0..7).map(|_| random_pose(&mut rng)).collect();
            assert_eq!(pcd_points(&xs, &ys, &c).unwrap(), pcd_points(&ys, &xs, &c).unwrap());
            let sum = acd_points(&xs, &ys, &c).unwrap() + acd_points(&ys, &xs, &c).unwrap();
            assert_eq!(pcd_points(&xs, &ys, &c).unwrap(), sum);
        }
    }

    #[test]
    fn p2s_examples() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gt = random_segment_set(&mut rng, 4, 4);
        let w = CurriculumWeights::new(0.3, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(p2s_cd(&gt, &gt, &w, &c).unwrap(), 0.0);

        // (1,0,1,0) reduces exactly to the flattened PCD
        let pred = random_segment_set(&mut rng, 5, 4);
        let pw = CurriculumWeights::point_wise();
        let lhs = p2s_cd(&pred, &gt, &pw, &c).unwrap();
        let rhs =
            pcd_points(&flatten_to_points(&pred), &flatten_to_points(&gt), &c).unwrap();
        assert_eq!(lhs, rhs);

        // (0,1,0,1) with a single segment offset (1,0,0) per pose: 4 + 4
        let one = random_segment_set(&mut rng, 1, 4);
        let off = shifted_set(&one, 1.0);
        let w_seg = CurriculumWeights::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let v = p2s_cd(&off, &one, &w_seg, &c).unwrap();
        assert!((v - 8.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn permutation_invariance() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let a = random_segment_set(&mut rng, 6, 3);
            let b = random_segment_set(&mut rng, 4, 3);
            let base = p2s_cd(&a, &b, &CurriculumWeights::new(1.0, 2.0, 0.5, 0.25).unwrap(), &c).unwrap();
            // permute both sets
            let perm_of = |s: &SegmentSet| {
                let mut segs: Vec<Segment> = s.segments().to_vec();
                segs.reverse();
                segs.rotate_left(1);
                SegmentSet::from_segments(segs, s.lambda()).unwrap()
            };
            let pa = perm_of(&a);
            let pb = perm_of(&b);
            let v = p2s_cd(&pa, &pb, &CurriculumWeights::new(1.0, 2.0, 0.5, 0.25).unwrap(), &c).unwrap();
            assert!((base - v).abs() <= 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn schedule_matches_reference_values() {
        let s = CurriculumSchedule::standard(4800).unwrap();
        assert_eq!(s.milestones, [1000, 2000]);
        let w0 = s.weights_at(0).unwrap();
        assert_eq!((w0.forward_point, w0.forward_segment, w0.backward_point, w0.backward_segment), (0.0, 1.0, 100.0, 0.01));
        let w1 = s.weights_at(1000).unwrap();
        assert_eq!((w1.backward_point, w1.backward_segment), (10.0, 0.1));
        let w2 = s.weights_at(2000).unwrap();
        assert_eq!((w2.backward_point, w2.backward_segment), (1.0, 1.0));
        let w_end = s.weights_at(4799).unwrap();
        assert_eq!((w_end.backward_point, w_end.backward_segment), (1.0, 1.0));
        assert_eq!(
            s.weights_at(4800),
            Err(LossError::EpochOutOfRange { epoch: 4800, total: 4800 })
        );

        // proportional rescale keeps the phase ratios
        let toy = CurriculumSchedule::standard(3000).unwrap();
        assert_eq!(toy.milestones, [625, 1250]);
    }

    #[test]
    fn grad_single_pose_pair() {
        let c = cfg();
        // singleton pose sets offset by (1,0,0), weights (1,0,1,0):
        // d/dx [ (x-0)^2 + (x-0)^2 ] at x = 1 is 4
        let gt = SegmentSet::from_segments(
            alloc::vec![Segment::new(alloc::vec![pose_at(0.0)], 1).unwrap()],
            1,
        )
        .unwrap();
        let pred = shifted_set(&gt, 1.0);
        let w = CurriculumWeights::point_wise();
        let (value, grad) = p2s_cd_grad(&pred, &gt, &w, &c).unwrap();
        assert_eq!(value, 2.0);
        assert_eq!(grad.len(), 1);
        assert!((grad[0][0] - 4.0).abs() < 1e-12, "x grad {:?}", grad[0]);
        assert_eq!(grad[0][1], 0.0);

        // exact match: all-zero gradient
        let (v0, g0) = p2s_cd_grad(&gt, &gt, &w, &c).unwrap();
        assert_eq!(v0, 0.0);
        assert!(g0.iter().all(|g| g.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let w = CurriculumWeights::new(0.5, 1.0, 2.0, 0.25).unwrap();
        let mut checked = 0;
        let mut seed_bump = 0;
        while checked < 50 {
            seed_bump += 1;
            let mut local = ChaCha8Rng::seed_from_u64(1000 + seed_bump);
            let pred = random_segment_set(&mut local, 5, 4);
            let gt = random_segment_set(&mut local, 5, 4);
            if !assignments_stable(&pred, &gt, &c, 1e-4) {
                continue;
            }
            let (_, grad) = p2s_cd_grad(&pred, &gt, &w, &c).unwrap();
            let h = 1e-6;
            // probe a handful of random coordinates per instance
            for _ in 0..6 {
                let k = rng.gen_range(0..pred.len() * 4);
                let d = rng.gen_range(0..6);
                let plus = perturb(&pred, k, d, h);
                let minus = perturb(&pred, k, d, -h);
                let fd = (p2s_cd(&plus, &gt, &w, &c).unwrap()
                    - p2s_cd(&minus, &gt, &w, &c).unwrap())
                    / (2.0 * h);
                let a = grad[k][d];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-5, "instance {seed_bump} coord ({k},{d}): {a} vs {fd}");
            }
            checked += 1;
        }
    }

    pub(super) fn perturb(set: &SegmentSet, pose_idx: usize, dim: usize, h: f64) -> SegmentSet {
        let lambda = set.lambda();
        let mut segs: Vec<Segment> = set.segments().to_vec();
        let (sj, t) = (pose_idx / lambda, pose_idx % lambda);
        let mut poses = segs[sj].poses().to_vec();
        let p = &mut poses[t];
        match dim {
            0 => p.position.x += h,
            1 => p.position.y += h,
            2 => p.position.z += h,
            3 => p.orientation.x += h,
            4 => p.orientation.y += h,
            5 => p.orientation.z += h,
            _ => unreachable!(),
        }
        segs[sj] = Segment::new(poses, lambda).unwrap();
        SegmentSet::from_segments(segs, lambda).unwrap()
    }

    /// Requires a clear margin between the best and second-best neighbour in
    /// all four Chamfer directions, so a +-1e-6 nudge cannot flip any
    /// assignment.
    pub(super) fn assignments_stable(
        pred: &SegmentSet,
        gt: &SegmentSet,
        c: &MetricConfig,
        margin: f64,
    ) -> bool {
        let pp = flatten_to_points(pred);
        let gp = flatten_to_points(gt);
        let point_margin = |a: &[Pose], b: &[Pose]| -> bool {
            a.iter().all(|p| {
                let mut best = f64::INFINITY;
                let mut second = f64::INFINITY;
                for q in b {
                    let d = pose_distance_sq(p, q, c);
                    if d < best {
                        second = best;
                        best = d;
                    } else if d < second {
                        second = d;
                    }
                }
                second - best > margin
            })
        };
        let seg_margin = |a: &SegmentSet, b: &SegmentSet| -> bool {
            a.segments().iter().all(|s| {
                let mut best = f64::INFINITY;
                let mut second = f64::INFINITY;
                for t in b.segments() {
                    let d = segment_distance_sq(s, t, c);
                    if d < best {
                        second = best;
                        best = d;
                    } else if d < second {
                        second = d;
                    }
                }
                second - best > margin
            })
        };
        point_margin(&pp, &gp) && point_margin(&gp, &pp) && seg_margin(pred, gt) && seg_margin(gt, pred)
    }

    #[test]
    fn target_masks_identity_and_ties() {
        let c = cfg();
        let paths = [
            crate::geom::Path::new((0..6).map(|i| pose_at(i as f64 * 0.1)).collect()).unwrap(),
            crate::geom::Path::new((0..6).map(|i| pose_at(5.0 + i as f64 * 0.1)).collect()).unwrap(),
        ];
        let gt = crate::segments::extract_segments(&paths, 3).unwrap();
        // predictions identical to ground truth reproduce the partition
        let masks = build_target_masks(&gt, &gt, 4, &c).unwrap();
        assert_eq!(masks.n_real(), 2);
        for (j, &label) in gt.path_ids().unwrap().iter().enumerate() {
            for (i, m) in masks.real().iter().enumerate() {
                assert_eq!(m[j], i == label);
            }
        }
        // every column has exactly one owner
        for j in 0..gt.len() {
            let owners: usize = masks.real().iter().filter(|m| m[j]).count();
            assert_eq!(owners, 1);
        }
        // slots below the real path count are rejected
        assert!(matches!(
            build_target_masks(&gt, &gt, 1, &c),
            Err(LossError::SlotsTooFew { .. })
        ));
    }

    #[test]
    fn target_masks_all_predictions_on_one_path() {
        let c = cfg();
        let paths = [
            crate::geom::Path::new((0..6).map(|i| pose_at(i as f64 * 0.1)).collect()).unwrap(),
            crate::geom::Path::new((0..6).map(|i| pose_at(40.0 + i as f64 * 0.1)).collect()).unwrap(),
        ];
        let gt = crate::segments::extract_segments(&paths, 3).unwrap();
        // every predicted segment sits near path 0
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred = {
            let mut set = SegmentSet::empty(3);
            for _ in 0..5 {
                let base: f64 = rng.gen_range(0.0..0.5);
                let seg = Segment::new(
                    (0..3).map(|t| pose_at(base + t as f64 * 0.05)).collect(),
                    3,
                )
                .unwrap();
                set.push_unlabeled(seg).unwrap();
            }
            set
        };
        let masks = build_target_masks(&pred, &gt, 3, &c).unwrap();
        assert!(masks.real()[0].iter().all(|&b| b));
        assert!(masks.real()[1].iter().all(|&b| !b));
    }

    #[test]
    fn target_masks_tie_breaks_low_index() {
        let c = cfg();
        // two ground-truth paths, symmetric about x = 0; a predicted segment
        // exactly between them must go to path 0
        let paths = [
            crate::geom::Path::new(alloc::vec![pose_at(-1.2), pose_at(-1.1), pose_at(-1.0)]).unwrap(),
            crate::geom::Path::new(alloc::vec![pose_at(1.0), pose_at(1.1), pose_at(1.2)]).unwrap(),
        ];
        let gt = crate::segments::extract_segments(&paths, 3).unwrap();
        let mid = SegmentSet::from_segments(
            alloc::vec![Segment::new(
                alloc::vec![pose_at(-0.1), pose_at(0.0), pose_at(0.1)],
                3
            )
            .unwrap()],
            3,
        )
        .unwrap();
        let masks = build_target_masks(&mid, &gt, 2, &c).unwrap();
        assert!(masks.real()[0][0]);
        assert!(!masks.real()[1][0]);
    }

    #[test]
    fn bce_examples() {
        let m = [true, false, true, false];
        let half = [0.5; 4];
        let v = bce_mask(&half, &m).unwrap();
        assert!((v - 4.0 * libm::log(2.0)).abs() < 1e-12);

        let close = [1.0 - 1e-9, 1e-9, 1.0 - 1e-9, 1e-9];
        assert!(bce_mask(&close, &m).unwrap() < 1e-5);

        let v = bce_mask(&[0.9, 0.1], &[true, false]).unwrap();
        assert!((v - (-2.0 * libm::log(0.9))).abs() < 1e-12);
        assert!((v - 0.2107).abs() < 1e-4);
    }

    fn bundle_for(targets: &TargetMasks, flip: bool) -> MaskBundle {
        let n = targets.n_slots();
        let width = targets.width();
        let mut probs = alloc::vec![alloc::vec![0.2; width]; n];
        let mut conf = alloc::vec![0.05; n];
        for (i, m) in targets.real().iter().enumerate() {
            let slot = if flip { targets.n_real() - 1 - i } else { i };
            conf[slot] = 0.95;
            for (j, &on) in m.iter().enumerate() {
                probs[slot][j] = if on { 0.93 } else { 0.07 };
            }
        }
        MaskBundle::new(probs, conf).unwrap()
    }

    #[test]
    fn mask_loss_limits_and_permutation() {
        let masks = TargetMasks::new(
            alloc::vec![alloc::vec![true, true, false], alloc::vec![false, false, true]],
            4,
            3,
        )
        .unwrap();
        let good = bundle_for(&masks, false);
        let r = mask_loss(&good, &masks).unwrap();
        assert!(r.loss < 1.2, "near-perfect predictions should be cheap, got {}", r.loss);
        assert_eq!(r.assignment[0], 0);
        assert_eq!(r.assignment[1], 1);

        // permuting predicted masks leaves the value unchanged
        let flipped = bundle_for(&masks, true);
        let r2 = mask_loss(&flipped, &masks).unwrap();
        assert!((r.loss - r2.loss).abs() <= 1e-12 * (1.0 + r.loss));
    }

    #[test]
    fn mask_loss_matches_brute_force_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let width = 3;
            let masks = TargetMasks::new(
                alloc::vec![(0..width).map(|_| rng.gen_range(0.0..1.0f64) > 0.5).collect()],
                2,
                width,
            )
            .unwrap();
            let probs: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..width).map(|_| rng.gen_range(0.01..0.99)).collect())
                .collect();
            let conf: Vec<f64> = (0..2).map(|_| rng.gen_range(0.01..0.99)).collect();
            let bundle = MaskBundle::new(probs.clone(), conf.clone()).unwrap();
            let got = mask_loss(&bundle, &masks).unwrap();

            // enumerate both bijections by hand
            let pair_loss = |sigma: [usize; 2]| -> f64 {
                let mut l = 0.0;
                for (i, &slot) in sigma.iter().enumerate() {
                    let real = slot < 1;
                    l += bce_scalar(conf[i], real);
                    if real {
                        l += bce_mask(&probs[i], &masks.real()[0]).unwrap();
                    }
                }
                l
            };
            let match_cost = |sigma: [usize; 2]| -> f64 {
                let mut cst = 0.0;
                for (i, &slot) in sigma.iter().enumerate() {
                    cst += if slot < 1 {
                        bce_mask(&probs[i], &masks.real()[0]).unwrap() - ln_clamped(conf[i])
                    } else {
                        -ln_clamped(1.0 - conf[i])
                    };
                }
                cst
            };
            let best = if match_cost([0, 1]) <= match_cost([1, 0]) { [0, 1] } else { [1, 0] };
            assert!((got.loss - pair_loss(best)).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_loss_target_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let width = 5;
        let reals: Vec<Vec<bool>> = (0..3)
            .map(|_| (0..width).map(|_| rng.gen_range(0.0..1.0f64) > 0.5).collect())
            .collect();
        let masks = TargetMasks::new(reals.clone(), 4, width).unwrap();
        let mut permuted = reals;
        permuted.swap(0, 2);
        let masks_p = TargetMasks::new(permuted, 4, width).unwrap();
        let probs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..width).map(|_| rng.gen_range(0.01..0.99)).collect())
            .collect();
        let conf: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..0.99)).collect();
        let bundle = MaskBundle::new(probs, conf).unwrap();
        let a = mask_loss(&bundle, &masks).unwrap().loss;
        let b = mask_loss(&bundle, &masks_p).unwrap().loss;
        assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn assign_segments_examples() {
        // one confident mask hoovers everything
        let bundle = MaskBundle::new(alloc::vec![alloc::vec![0.8, 0.8, 0.8]], alloc::vec![0.9]).unwrap();
        let a = assign_segments(&bundle, 0.5).unwrap();
        assert_eq!(a.mask_of_segment, alloc::vec![0, 0, 0]);
        assert_eq!(a.n_paths, 1);

        // a confident mask with no winning segment does not count
        let bundle = MaskBundle::new(
            alloc::vec![alloc::vec![0.7, 0.2], alloc::vec![0.1, 0.6], alloc::vec![0.05, 0.05]],
            alloc::vec![0.9, 0.9, 0.9],
        )
        .unwrap();
        let a = assign_segments(&bundle, 0.5).unwrap();
        assert_eq!(a.mask_of_segment, alloc::vec![0, 1]);
        assert_eq!(a.n_paths, 2);

        // nothing confident: reported as an empty prediction
        let bundle = MaskBundle::new(alloc::vec![alloc::vec![0.9, 0.9]], alloc::vec![0.3]).unwrap();
        assert!(assign_segments(&bundle, 0.5).is_none());

        // unconfident masks are excluded from the argmax
        let bundle = MaskBundle::new(
            alloc::vec![alloc::vec![0.99, 0.99], alloc::vec![0.6, 0.6]],
            alloc::vec![0.2, 0.8],
        )
        .unwrap();
        let a = assign_segments(&bundle, 0.5).unwrap();
        assert_eq!(a.mask_of_segment, alloc::vec![1, 1]);
        assert_eq!(a.n_paths, 1);
    }
}
