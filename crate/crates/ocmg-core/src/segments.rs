//! Deterministic conversion between paths, fixed-length segments, and
//! unordered pose sets.

use alloc::vec::Vec;
use core::fmt;

use crate::geom::{GeomError, Path, Pose, Segment};

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentError {
    /// A path must hold at least `lambda` poses to be segmented.
    PathShorterThanLambda { path: usize, len: usize, lambda: usize },
    LambdaMismatch { expected: usize, actual: usize },
    BadLambda,
    LabelCount,
}

impl fmt::Display for SegmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentError::PathShorterThanLambda { path, len, lambda } => {
                write!(f, "path {path} has {len} poses, fewer than lambda = {lambda}")
            }
            SegmentError::LambdaMismatch { expected, actual } => {
                write!(f, "segment of length {actual} pushed into a set with lambda = {expected}")
            }
            SegmentError::BadLambda => write!(f, "lambda must be at least 2"),
            SegmentError::LabelCount => write!(f, "one path id per segment required"),
        }
    }
}

impl core::error::Error for SegmentError {}

/// A set of segments with uniform length, optionally carrying the id of the
/// path each segment came from (ground truth keeps labels, predictions do
/// not).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSet {
    lambda: usize,
    segments: Vec<Segment>,
    path_ids: Option<Vec<usize>>,
}

impl SegmentSet {
    pub fn empty(lambda: usize) -> SegmentSet {
        SegmentSet { lambda, segments: Vec::new(), path_ids: None }
    }

    /// Builds an unlabeled set, validating uniform segment length.
    pub fn from_segments(segments: Vec<Segment>, lambda: usize) -> Result<SegmentSet, SegmentError> {
        for s in &segments {
            if s.len() != lambda {
                return Err(SegmentError::LambdaMismatch { expected: lambda, actual: s.len() });
            }
        }
        Ok(SegmentSet { lambda, segments, path_ids: None })
    }

    pub fn push_unlabeled(&mut self, segment: Segment) -> Result<(), SegmentError> {
        if segment.len() != self.lambda {
            return Err(SegmentError::LambdaMismatch { expected: self.lambda, actual: segment.len() });
        }
        if self.path_ids.is_some() {
            return Err(SegmentError::LabelCount);
        }
        self.segments.push(segment);
        Ok(())
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn path_ids(&self) -> Option<&[usize]> {
        self.path_ids.as_deref()
    }

    /// Ground-truth provenance: which path produced segment `j`.
    pub fn path_id(&self, j: usize) -> Option<usize> {
        self.path_ids.as_ref().map(|ids| ids[j])
    }
}

/// Cuts every path into segments of `lambda` poses with a stride of
/// `lambda - 1` (one shared pose between neighbors). When the last full
/// segment stops short of the path end, one extra segment anchored at the
/// end is appended so every pose is covered.
pub fn extract_segments(paths: &[Path], lambda: usize) -> Result<SegmentSet, SegmentError> {
    if lambda < 2 {
        return Err(SegmentError::BadLambda);
    }
    let mut segments = Vec::new();
    let mut path_ids = Vec::new();
    for (pid, path) in paths.iter().enumerate() {
        let poses = path.poses();
        let t = poses.len();
        if t < lambda {
            return Err(SegmentError::PathShorterThanLambda { path: pid, len: t, lambda });
        }
        let mut start = 0;
        let mut last_end = 0;
        while start + lambda <= t {
            segments.push(segment_at(poses, start, lambda));
            path_ids.push(pid);
            last_end = start + lambda - 1;
            start += lambda - 1;
        }
        if last_end != t - 1 {
            segments.push(segment_at(poses, t - lambda, lambda));
            path_ids.push(pid);
        }
    }
    Ok(SegmentSet { lambda, segments, path_ids: Some(path_ids) })
}

fn segment_at(poses: &[Pose], start: usize, lambda: usize) -> Segment {
    Segment::new(poses[start..start + lambda].to_vec(), lambda)
        .unwrap_or_else(|_| unreachable!("slice length equals lambda"))
}

/// Number of segments extraction would produce.
pub fn count_segments(paths: &[Path], lambda: usize) -> Result<usize, SegmentError> {
    Ok(extract_segments(paths, lambda)?.len())
}

/// The unordered multiset of all poses of all segments; shared poses appear
/// once per segment that contains them.
pub fn flatten_to_points(set: &SegmentSet) -> Vec<Pose> {
    let mut out = Vec::with_capacity(set.len() * set.lambda());
    for s in set.segments() {
        out.extend_from_slice(s.poses());
    }
    out
}

/// All waypoints of a path set as one unordered collection (each pose once).
pub fn path_points(paths: &[Path]) -> Vec<Pose> {
    let mut out = Vec::new();
    for p in paths {
        out.extend_from_slice(p.poses());
    }
    out
}

impl From<GeomError> for SegmentError {
    fn from(_: GeomError) -> Self {
        SegmentError::BadLambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{MetricConfig, Vec3};
    use alloc::vec;

    fn line_path(n: usize) -> Path {
        let o = Vec3::new(0.0, 0.0, 1.0);
        Path::new(
            (0..n)
                .map(|i| Pose { position: Vec3::new(i as f64 * 0.1, 0.0, 0.0), orientation: o })
                .collect(),
        )
        .unwrap()
    }

    fn starts(set: &SegmentSet) -> Vec<f64> {
        set.segments().iter().map(|s| libm::round(s.first().position.x * 10.0)).collect()
    }

    #[test]
    fn stride_layout_t10() {
        let set = extract_segments(&[line_path(10)], 4).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(starts(&set), vec![0.0, 3.0, 6.0]);
        assert_eq!(set.segments()[2].last().position.x, 0.9);
    }

    #[test]
    fn tail_rule_t9() {
        let set = extract_segments(&[line_path(9)], 4).unwrap();
        assert_eq!(set.len(), 3);
        // (poses 0-3)(3-6)(5-8): the last segment is anchored at the end
        assert_eq!(starts(&set), vec![0.0, 3.0, 5.0]);
        assert_eq!(set.segments()[2].last().position.x, 0.8);
    }

    #[test]
    fn single_segment_when_t_equals_lambda() {
        let set = extract_segments(&[line_path(4)], 4).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn count_is_additive() {
        assert_eq!(count_segments(&[line_path(10)], 4).unwrap(), 3);
        assert_eq!(count_segments(&[line_path(10), line_path(10)], 4).unwrap(), 6);
        assert_eq!(count_segments(&[line_path(9)], 4).unwrap(), 3);
    }

    #[test]
    fn short_path_is_an_error() {
        let err = extract_segments(&[line_path(3)], 4).unwrap_err();
        assert_eq!(err, SegmentError::PathShorterThanLambda { path: 0, len: 3, lambda: 4 });
    }

    #[test]
    fn flatten_counts_and_shared_pose() {
        let set = extract_segments(&[line_path(10)], 4).unwrap();
        let points = flatten_to_points(&set);
        assert_eq!(points.len(), 12);
        // pose at x=0.3 is shared between segments 0 and 1
        let shared = points.iter().filter(|p| (p.position.x - 0.3).abs() < 1e-12).count();
        assert_eq!(shared, 2);

        let empty = SegmentSet::empty(4);
        assert!(flatten_to_points(&empty).is_empty());
    }

    #[test]
    fn every_pose_is_covered() {
        let cfg = MetricConfig::default();
        for t in 4..40 {
            let path = line_path(t);
            let set = extract_segments(&[path.clone()], 4).unwrap();
            let points = flatten_to_points(&set);
            for pose in path.poses() {
                assert!(
                    points.iter().any(|q| crate::geom::pose_distance_sq(pose, q, &cfg) == 0.0),
                    "pose missing at t = {t}"
                );
            }
            // adjacent segments from one path share exactly one pose, except
            // across the end-anchored tail
            for w in set.segments().windows(2).take(set.len().saturating_sub(2)) {
                let shared = w[0]
                    .poses()
                    .iter()
                    .filter(|p| w[1].poses().iter().any(|q| crate::geom::pose_distance_sq(p, q, &cfg) == 0.0))
                    .count();
                assert_eq!(shared, 1);
            }
        }
    }

    #[test]
    fn extraction_is_deterministic_and_labeled() {
        let paths = [line_path(10), line_path(7)];
        let a = extract_segments(&paths, 4).unwrap();
        let b = extract_segments(&paths, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.path_ids().unwrap(), &[0, 0, 0, 1, 1]);
    }
}
