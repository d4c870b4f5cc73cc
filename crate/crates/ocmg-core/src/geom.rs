//! Geometric domain types and the weighted 6-D pose metric used by every
//! loss, filter, and graph cost in the pipeline.

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::mesh::TriMesh;

/// Tolerance for the unit-orientation invariant.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    /// Unit vector in the same direction, or `None` for (near-)zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 || !n.is_finite() {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Largest absolute coordinate.
    pub fn abs_max(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3 { x: a[0], y: a[1], z: a[2] }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeomError {
    NonFinite,
    /// Orientation norm deviates from 1 by more than [`UNIT_TOLERANCE`].
    NotUnitOrientation,
    ZeroDirection,
    PathTooShort,
    /// Consecutive path poses must be distinct.
    RepeatedPose { index: usize },
    SegmentLength { expected: usize, actual: usize },
    EmptyPointCloud,
    NoPaths,
    EmptyInput,
    /// All coordinates are zero after centering; no scale can be derived.
    DegenerateExtent,
    BadConfig(&'static str),
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::NonFinite => write!(f, "non-finite coordinate"),
            GeomError::NotUnitOrientation => write!(f, "orientation is not unit length"),
            GeomError::ZeroDirection => write!(f, "direction vector has (near-)zero length"),
            GeomError::PathTooShort => write!(f, "a path needs at least two poses"),
            GeomError::RepeatedPose { index } => {
                write!(f, "consecutive poses {} and {} coincide", index, index + 1)
            }
            GeomError::SegmentLength { expected, actual } => {
                write!(f, "segment has {actual} poses, expected {expected}")
            }
            GeomError::EmptyPointCloud => write!(f, "object sample has an empty point cloud"),
            GeomError::NoPaths => write!(f, "object sample has no paths"),
            GeomError::EmptyInput => write!(f, "empty sample list"),
            GeomError::DegenerateExtent => write!(f, "degenerate extent, cannot normalize"),
            GeomError::BadConfig(what) => write!(f, "invalid configuration: {what}"),
        }
    }
}

impl core::error::Error for GeomError {}

/// One 6-DoF waypoint: deposition-point position plus a unit vector pointing
/// from the gun nozzle toward the surface.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Vec3,
}

impl Pose {
    /// Validates finiteness and the unit-orientation invariant without
    /// altering the stored bits.
    pub fn new(position: Vec3, orientation: Vec3) -> Result<Pose, GeomError> {
        if !position.is_finite() || !orientation.is_finite() {
            return Err(GeomError::NonFinite);
        }
        if (orientation.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GeomError::NotUnitOrientation);
        }
        Ok(Pose { position, orientation })
    }

    /// Builds a pose from an arbitrary (non-zero) approach direction,
    /// normalizing it at ingestion.
    pub fn with_direction(position: Vec3, toward: Vec3) -> Result<Pose, GeomError> {
        if !position.is_finite() || !toward.is_finite() {
            return Err(GeomError::NonFinite);
        }
        let orientation = toward.normalized().ok_or(GeomError::ZeroDirection)?;
        Ok(Pose { position, orientation })
    }
}

/// Relative weighting of the orientation block in the 6-D metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub orientation_weight: f64,
}

impl MetricConfig {
    pub fn new(orientation_weight: f64) -> Result<MetricConfig, GeomError> {
        if !(orientation_weight > 0.0) || !orientation_weight.is_finite() {
            return Err(GeomError::BadConfig("orientation weight must be positive"));
        }
        Ok(MetricConfig { orientation_weight })
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { orientation_weight: 0.25 }
    }
}

/// Squared distance in R^6 with the orientation block scaled by
/// `cfg.orientation_weight`. Symmetric, non-negative, zero iff `a == b`.
pub fn pose_distance_sq(a: &Pose, b: &Pose, cfg: &MetricConfig) -> f64 {
    (a.position - b.position).norm_sq()
        + cfg.orientation_weight * (a.orientation - b.orientation).norm_sq()
}

/// A run of exactly `lambda` poses cut from a path.
#[derive(Clone, PartialEq, Debug)]
pub struct Segment {
    poses: Vec<Pose>,
}

impl Segment {
    pub fn new(poses: Vec<Pose>, lambda: usize) -> Result<Segment, GeomError> {
        if poses.len() != lambda {
            return Err(GeomError::SegmentLength { expected: lambda, actual: poses.len() });
        }
        Ok(Segment { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn first(&self) -> &Pose {
        &self.poses[0]
    }

    pub fn last(&self) -> &Pose {
        &self.poses[self.poses.len() - 1]
    }
}

/// Aligned pose-wise sum of squared 6-D distances, i.e. the squared
/// Euclidean distance in R^(6*lambda).
///
/// Panics if the segments have different lengths; sets of mixed lambda are
/// rejected earlier, at construction.
pub fn segment_distance_sq(a: &Segment, b: &Segment, cfg: &MetricConfig) -> f64 {
    assert_eq!(a.len(), b.len(), "segment length mismatch");
    let mut acc = 0.0;
    for (pa, pb) in a.poses.iter().zip(b.poses.iter()) {
        acc += pose_distance_sq(pa, pb, cfg);
    }
    acc
}

/// Ordered waypoint sequence, at least two poses, consecutive poses distinct.
#[derive(Clone, PartialEq, Debug)]
pub struct Path {
    poses: Vec<Pose>,
}

impl Path {
    pub fn new(poses: Vec<Pose>) -> Result<Path, GeomError> {
        if poses.len() < 2 {
            return Err(GeomError::PathTooShort);
        }
        for (i, pair) in poses.windows(2).enumerate() {
            let cfg = MetricConfig::default();
            if pose_distance_sq(&pair[0], &pair[1], &cfg) == 0.0 {
                return Err(GeomError::RepeatedPose { index: i });
            }
        }
        Ok(Path { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn reversed(&self) -> Path {
        let mut poses = self.poses.clone();
        poses.reverse();
        Path { poses }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Category {
    Cuboids,
    Windows,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Cuboids => write!(f, "cuboids"),
            Category::Windows => write!(f, "windows"),
        }
    }
}

impl core::str::FromStr for Category {
    type Err = GeomError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cuboids" => Ok(Category::Cuboids),
            "windows" => Ok(Category::Windows),
            _ => Err(GeomError::BadConfig("unknown category")),
        }
    }
}

/// Centering offset and dataset-global scale; enough to invert exactly.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct NormRecord {
    pub centroid: Vec3,
    pub scale: f64,
}

/// An object point cloud paired with its unordered set of expert paths.
#[derive(Clone, PartialEq, Debug)]
pub struct ObjectSample {
    pub point_cloud: Vec<Vec3>,
    pub paths: Vec<Path>,
    pub mesh: Option<TriMesh>,
    pub category: Category,
    pub norm: Option<NormRecord>,
}

impl ObjectSample {
    pub fn new(
        point_cloud: Vec<Vec3>,
        paths: Vec<Path>,
        mesh: Option<TriMesh>,
        category: Category,
    ) -> Result<ObjectSample, GeomError> {
        if point_cloud.is_empty() {
            return Err(GeomError::EmptyPointCloud);
        }
        if paths.is_empty() {
            return Err(GeomError::NoPaths);
        }
        Ok(ObjectSample { point_cloud, paths, mesh, category, norm: None })
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    fn map_positions(&mut self, f: impl Fn(Vec3) -> Vec3) {
        for p in &mut self.point_cloud {
            *p = f(*p);
        }
        for path in &mut self.paths {
            for pose in &mut path.poses {
                pose.position = f(pose.position);
            }
        }
        if let Some(mesh) = &mut self.mesh {
            for v in &mut mesh.vertices {
                *v = f(*v);
            }
        }
    }

    fn abs_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for p in &self.point_cloud {
            m = m.max(p.abs_max());
        }
        for path in &self.paths {
            for pose in &path.poses {
                m = m.max(pose.position.abs_max());
            }
        }
        if let Some(mesh) = &self.mesh {
            for v in &mesh.vertices {
                m = m.max(v.abs_max());
            }
        }
        m
    }

    /// Point-cloud centroid, the centering offset used by normalization.
    pub fn cloud_centroid(&self) -> Vec3 {
        let mut c = Vec3::ZERO;
        for p in &self.point_cloud {
            c += *p;
        }
        c * (1.0 / self.point_cloud.len() as f64)
    }
}

/// Centers every sample on its own point-cloud centroid and derives one
/// shared scale (the largest absolute coordinate after centering) so all
/// positions land in [-1, 1]. Returns the scale.
pub fn normalize_samples(samples: &mut [ObjectSample]) -> Result<f64, GeomError> {
    if samples.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let centroids: Vec<Vec3> = samples.iter().map(|s| s.cloud_centroid()).collect();
    for (s, c) in samples.iter_mut().zip(&centroids) {
        let c = *c;
        s.map_positions(|p| p - c);
    }
    let mut scale: f64 = 0.0;
    for s in samples.iter() {
        scale = scale.max(s.abs_max());
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeomError::DegenerateExtent);
    }
    apply_scale(samples, &centroids, scale);
    Ok(scale)
}

/// Centers samples and applies a scale frozen elsewhere (normally from the
/// training split), instead of deriving one.
pub fn normalize_samples_with_scale(
    samples: &mut [ObjectSample],
    scale: f64,
) -> Result<(), GeomError> {
    if samples.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeomError::DegenerateExtent);
    }
    let centroids: Vec<Vec3> = samples.iter().map(|s| s.cloud_centroid()).collect();
    for (s, c) in samples.iter_mut().zip(&centroids) {
        let c = *c;
        s.map_positions(|p| p - c);
    }
    apply_scale(samples, &centroids, scale);
    Ok(())
}

fn apply_scale(samples: &mut [ObjectSample], centroids: &[Vec3], scale: f64) {
    let inv = 1.0 / scale;
    for (s, c) in samples.iter_mut().zip(centroids) {
        s.map_positions(|p| p * inv);
        s.norm = Some(NormRecord { centroid: *c, scale });
    }
}

/// Inverse of normalization; a no-op for samples without a record.
pub fn denormalize_sample(sample: &mut ObjectSample) {
    if let Some(rec) = sample.norm.take() {
        sample.map_positions(|p| p * rec.scale + rec.centroid);
    }
}
