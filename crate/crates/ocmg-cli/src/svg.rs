//! SVG renderings of path sets (three orthographic projections) and a
//! vertex-colored coverage mesh for visual inspection.

use std::path::Path as FsPath;

use anyhow::Result;

use ocmg_core::evalsim::ThicknessField;
use ocmg_core::geom::{Path, Vec3};
use ocmg_core::mesh::TriMesh;

use crate::store::{g17, write_atomic};

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
];

#[derive(Clone, Copy)]
pub enum Projection {
    Xy,
    Xz,
    Yz,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Xy, Projection::Xz, Projection::Yz];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Xy => "xy",
            Projection::Xz => "xz",
            Projection::Yz => "yz",
        }
    }

    fn project(self, v: Vec3) -> (f64, f64) {
        match self {
            Projection::Xy => (v.x, v.y),
            Projection::Xz => (v.x, v.z),
            Projection::Yz => (v.y, v.z),
        }
    }
}

/// One orthographic projection of a path set; paths are colored by index.
pub fn render_paths(file: &FsPath, paths: &[Path], proj: Projection) -> Result<()> {
    let size = 800.0;
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in paths {
        for pose in p.poses() {
            let (x, y) = proj.project(pose.position);
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
    }
    let span = ((max.0 - min.0).max(1e-9), (max.1 - min.1).max(1e-9));
    let scale = (size * 0.9) / span.0.max(span.1);
    let to_px = |v: Vec3| -> (f64, f64) {
        let (x, y) = proj.project(v);
        (
            (x - min.0) * scale + size * 0.05,
            // flip so +y points up
            size - ((y - min.1) * scale + size * 0.05),
        )
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    svg.push_str(&format!(
        "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n<text x=\"10\" y=\"20\" font-family=\"monospace\">{} view</text>\n",
        proj.name()
    ));
    for (i, p) in paths.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = p
            .poses()
            .iter()
            .map(|pose| {
                let (x, y) = to_px(pose.position);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    write_atomic(file, svg.as_bytes())
}

/// OBJ mesh with per-vertex colors: faces at or below the coverage
/// threshold render red, covered faces by thickness in green.
pub fn write_coverage_mesh(
    file: &FsPath,
    mesh: &TriMesh,
    field: &ThicknessField,
    threshold: f64,
) -> Result<()> {
    let max_t = field.per_face.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut out = String::new();
    // faces get their own vertices so per-face color is uniform
    for f in 0..mesh.n_faces() {
        let t = field.per_face[f];
        let (r, g, b) = if t > threshold {
            let shade = 0.25 + 0.75 * (t / max_t);
            (0.1, shade.min(1.0), 0.1)
        } else {
            (0.85, 0.1, 0.1)
        };
        for v in mesh.face_vertices(f) {
            out.push_str(&format!(
                "v {} {} {} {r:.4} {g:.4} {b:.4}\n",
                g17(v.x),
                g17(v.y),
                g17(v.z)
            ));
        }
    }
    for f in 0..mesh.n_faces() {
        let base = 3 * f + 1;
        out.push_str(&format!("f {} {} {}\n", base, base + 1, base + 2));
    }
    write_atomic(file, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ocmg_core::geom::Pose;

    #[test]
    fn svg_output_is_deterministic() {
        let o = Vec3::new(0.0, 0.0, 1.0);
        let path = Path::new(vec![
            Pose { position: Vec3::new(0.0, 0.0, 0.0), orientation: o },
            Pose { position: Vec3::new(1.0, 0.5, 0.2), orientation: o },
            Pose { position: Vec3::new(2.0, 0.1, 0.4), orientation: o },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        render_paths(&a, &[path.clone()], Projection::Xy).unwrap();
        render_paths(&b, &[path], Projection::Xy).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
