//! Evaluation metrics and the conic spray-deposition simulator behind the
//! paint-coverage protocol.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{MetricConfig, Pose, Vec3};
use crate::losses::{pcd_points, LossError};
use crate::mesh::TriMesh;

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    EmptyTestSet,
    LengthMismatch,
    DegenerateMesh,
    BadGun(&'static str),
    Loss(LossError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::EmptyTestSet => write!(f, "metrics need at least one test object"),
            SimError::LengthMismatch => write!(f, "prediction and ground-truth lists differ in length"),
            SimError::DegenerateMesh => write!(f, "mesh has no usable faces"),
            SimError::BadGun(w) => write!(f, "invalid gun model: {w}"),
            SimError::Loss(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<LossError> for SimError {
    fn from(e: LossError) -> Self {
        SimError::Loss(e)
    }
}

/// Conic spray gun: the nozzle trails the deposition point by `standoff`
/// along the approach vector and deposits inside a hard cone with a smooth
/// angular falloff, an incidence factor, and inverse-square attenuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GunModel {
    /// Nozzle-to-deposition-point distance, meters.
    pub standoff: f64,
    /// Cone half-angle, radians.
    pub cone_half_angle: f64,
    /// Exponent of the cos(angle) falloff inside the cone.
    pub falloff_exponent: f64,
    /// Thickness units emitted per waypoint step.
    pub flux: f64,
}

impl Default for GunModel {
    fn default() -> Self {
        GunModel {
            standoff: 0.12,
            cone_half_angle: 30.0f64.to_radians(),
            falloff_exponent: 2.0,
            flux: 1.0,
        }
    }
}

impl GunModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.standoff > 0.0) {
            return Err(SimError::BadGun("standoff must be positive"));
        }
        if !(self.cone_half_angle > 0.0) || self.cone_half_angle >= 90.0f64.to_radians() {
            return Err(SimError::BadGun("cone half-angle must lie in (0, 90) degrees"));
        }
        if !(self.falloff_exponent >= 0.0) {
            return Err(SimError::BadGun("falloff exponent must be non-negative"));
        }
        if !(self.flux > 0.0) {
            return Err(SimError::BadGun("flux must be positive"));
        }
        Ok(())
    }
}

/// Accumulated paint thickness per mesh face.
#[derive(Clone, Debug, PartialEq)]
pub struct ThicknessField {
    pub per_face: Vec<f64>,
    /// Faces skipped because their area vanished.
    pub degenerate_faces: usize,
}

/// Deposits paint from every waypoint onto every face it can see inside the
/// spray cone. The waypoints are consumed as an unordered set: accumulation
/// runs in a canonical sorted order, so any permutation of the input yields
/// a bit-identical field.
pub fn simulate_paint(
    mesh: &TriMesh,
    waypoints: &[Pose],
    gun: &GunModel,
    occlusion: bool,
) -> Result<ThicknessField, SimError> {
    gun.validate()?;
    let n_faces = mesh.n_faces();
    if n_faces == 0 {
        return Err(SimError::DegenerateMesh);
    }

    let mut order: Vec<usize> = (0..waypoints.len()).collect();
    order.sort_by(|&a, &b| pose_key(&waypoints[a]).partial_cmp(&pose_key(&waypoints[b])).unwrap());

    // per-face geometry, degenerate faces dropped once up front
    let mut normals: Vec<Option<Vec3>> = Vec::with_capacity(n_faces);
    let mut centroids: Vec<Vec3> = Vec::with_capacity(n_faces);
    let mut degenerate = 0;
    for f in 0..n_faces {
        let n = mesh.face_normal(f);
        if n.is_none() {
            degenerate += 1;
        }
        normals.push(n);
        centroids.push(mesh.face_centroid(f));
    }

    let cos_limit = libm::cos(gun.cone_half_angle);
    let mut per_face = vec![0.0f64; n_faces];
    for &wi in &order {
        let wp = &waypoints[wi];
        let nozzle = wp.position - wp.orientation * gun.standoff;
        for f in 0..n_faces {
            let Some(normal) = normals[f] else { continue };
            let diff = centroids[f] - nozzle;
            let d_sq = diff.norm_sq();
            if d_sq < 1e-18 {
                continue;
            }
            let d = libm::sqrt(d_sq);
            let u = diff * (1.0 / d);
            let cos_alpha = wp.orientation.dot(u);
            if cos_alpha < cos_limit {
                continue;
            }
            let facing = -normal.dot(u);
            if facing <= 0.0 {
                continue;
            }
            if occlusion && mesh.segment_blocked(nozzle, centroids[f], f) {
                continue;
            }
            per_face[f] +=
                gun.flux * libm::pow(cos_alpha, gun.falloff_exponent) * facing / d_sq;
        }
    }
    Ok(ThicknessField { per_face, degenerate_faces: degenerate })
}

fn pose_key(p: &Pose) -> [f64; 6] {
    [p.position.x, p.position.y, p.position.z, p.orientation.x, p.orientation.y, p.orientation.z]
}

/// Linear-interpolated order statistic; `q` in [0, 100]. All values count,
/// zeros included.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty list");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(rank) as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    /// Percentage of faces whose predicted thickness exceeds the threshold.
    pub percentage: f64,
    /// The 10th percentile of the ground-truth thickness distribution.
    pub threshold: f64,
    pub gt_field: ThicknessField,
    pub pred_field: ThicknessField,
}

/// Paint-coverage protocol: the 10th percentile of the ground-truth
/// thickness distribution acts as the relative threshold, and the score is
/// the percentage of faces the prediction pushes above it.
pub fn paint_coverage(
    mesh: &TriMesh,
    gt_waypoints: &[Pose],
    pred_waypoints: &[Pose],
    gun: &GunModel,
    occlusion: bool,
) -> Result<CoverageReport, SimError> {
    let gt_field = simulate_paint(mesh, gt_waypoints, gun, occlusion)?;
    let pred_field = simulate_paint(mesh, pred_waypoints, gun, occlusion)?;
    let threshold = percentile(&gt_field.per_face, 10.0);
    let above = pred_field.per_face.iter().filter(|&&t| t > threshold).count();
    let percentage = 100.0 * above as f64 / mesh.n_faces() as f64;
    Ok(CoverageReport { percentage, threshold, gt_field, pred_field })
}

/// Mean symmetric point-wise Chamfer distance over test objects, in the
/// weighted 6-D metric.
pub fn metric_pcd(
    pairs: &[(Vec<Pose>, Vec<Pose>)],
    cfg: &MetricConfig,
) -> Result<f64, SimError> {
    if pairs.is_empty() {
        return Err(SimError::EmptyTestSet);
    }
    let mut acc = 0.0;
    for (pred, gt) in pairs {
        acc += pcd_points(pred, gt, cfg)?;
    }
    Ok(acc / pairs.len() as f64)
}

/// Path-count metrics over the test set: fraction of exact matches and the
/// mean absolute error.
pub fn nop_metrics(pred_counts: &[usize], gt_counts: &[usize]) -> Result<(f64, f64), SimError> {
    if pred_counts.len() != gt_counts.len() {
        return Err(SimError::LengthMismatch);
    }
    if pred_counts.is_empty() {
        return Err(SimError::EmptyTestSet);
    }
    let h = pred_counts.len() as f64;
    let exact = pred_counts.iter().zip(gt_counts).filter(|(a, b)| a == b).count();
    let mae: f64 = pred_counts
        .iter()
        .zip(gt_counts)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>();
    Ok((exact as f64 / h, mae / h))
}
