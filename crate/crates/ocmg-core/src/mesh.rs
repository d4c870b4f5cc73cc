//! Triangle meshes: tessellated box construction, per-face queries, and the
//! segment/triangle intersection test used for spray occlusion.

use alloc::vec::Vec;

use crate::geom::Vec3;

#[derive(Clone, PartialEq, Debug, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

/// Which sides of a box to emit; used to drop faces glued to a neighbor.
#[derive(Clone, Copy, Debug)]
pub struct BoxSides {
    pub pos_x: bool,
    pub neg_x: bool,
    pub pos_y: bool,
    pub neg_y: bool,
    pub pos_z: bool,
    pub neg_z: bool,
}

impl BoxSides {
    pub const ALL: BoxSides = BoxSides {
        pos_x: true,
        neg_x: true,
        pos_y: true,
        neg_y: true,
        pos_z: true,
        neg_z: true,
    };

    pub fn without_y_caps() -> BoxSides {
        BoxSides { pos_y: false, neg_y: false, ..BoxSides::ALL }
    }

    pub fn without_x_caps() -> BoxSides {
        BoxSides { pos_x: false, neg_x: false, ..BoxSides::ALL }
    }
}

impl TriMesh {
    pub fn new() -> TriMesh {
        TriMesh::default()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (a + b + c) * (1.0 / 3.0)
    }

    /// Cross-product vector; its norm is twice the face area, its direction
    /// the outward normal for counter-clockwise winding.
    pub fn face_area_vector(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_area_vector(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Option<Vec3> {
        self.face_area_vector(f).normalized()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_faces()).map(|f| self.face_area(f)).sum()
    }

    /// Appends a rectangular patch tessellated into an `nu` x `nv` grid of
    /// quads (two triangles each). `u` and `v` span the full patch; the
    /// outward normal follows `u x v`.
    pub fn push_grid(&mut self, origin: Vec3, u: Vec3, v: Vec3, nu: usize, nv: usize) {
        let even = |n: usize| -> Vec<f64> {
            (0..=n).map(|i| i as f64 / n.max(1) as f64).collect()
        };
        self.push_grid_cuts(origin, u, v, &even(nu), &even(nv));
    }

    /// Like [`push_grid`] but with explicit cell boundaries as fractions of
    /// the patch extents; both cut lists must start at 0 and end at 1.
    pub fn push_grid_cuts(&mut self, origin: Vec3, u: Vec3, v: Vec3, u_cuts: &[f64], v_cuts: &[f64]) {
        debug_assert!(u_cuts.len() >= 2 && v_cuts.len() >= 2);
        let base = self.vertices.len() as u32;
        for &fv in v_cuts {
            for &fu in u_cuts {
                self.vertices.push(origin + u * fu + v * fv);
            }
        }
        let nu = u_cuts.len() - 1;
        let nv = v_cuts.len() - 1;
        let stride = (nu + 1) as u32;
        for j in 0..nv as u32 {
            for i in 0..nu as u32 {
                let p00 = base + j * stride + i;
                let p10 = p00 + 1;
                let p01 = p00 + stride;
                let p11 = p01 + 1;
                self.faces.push([p00, p10, p11]);
                self.faces.push([p00, p11, p01]);
            }
        }
    }

    /// Appends an axis-aligned box with outward-facing, grid-tessellated
    /// sides. Cell edges target `cell` but never exceed the face extent.
    /// `cuts` supplies the boundary fractions for a given extent, so the
    /// tessellation can be irregular.
    pub fn push_box_with(
        &mut self,
        min: Vec3,
        max: Vec3,
        sides: BoxSides,
        mut cuts: impl FnMut(f64) -> Vec<f64>,
    ) {
        let d = max - min;
        let ex = Vec3::new(d.x, 0.0, 0.0);
        let ey = Vec3::new(0.0, d.y, 0.0);
        let ez = Vec3::new(0.0, 0.0, d.z);
        if sides.pos_x {
            let (a, b) = (cuts(d.y), cuts(d.z));
            self.push_grid_cuts(min + ex, ey, ez, &a, &b);
        }
        if sides.neg_x {
            let (a, b) = (cuts(d.z), cuts(d.y));
            self.push_grid_cuts(min, ez, ey, &a, &b);
        }
        if sides.pos_y {
            let (a, b) = (cuts(d.z), cuts(d.x));
            self.push_grid_cuts(min + ey, ez, ex, &a, &b);
        }
        if sides.neg_y {
            let (a, b) = (cuts(d.x), cuts(d.z));
            self.push_grid_cuts(min, ex, ez, &a, &b);
        }
        if sides.pos_z {
            let (a, b) = (cuts(d.x), cuts(d.y));
            self.push_grid_cuts(min + ez, ex, ey, &a, &b);
        }
        if sides.neg_z {
            let (a, b) = (cuts(d.y), cuts(d.x));
            self.push_grid_cuts(min, ey, ex, &a, &b);
        }
    }

    pub fn push_box(&mut self, min: Vec3, max: Vec3, cell: f64, sides: BoxSides) {
        self.push_box_with(min, max, sides, |extent| uniform_cuts(extent, cell));
    }
}

/// Evenly spaced cell boundaries targeting `cell`-sized cells.
pub fn uniform_cuts(extent: f64, cell: f64) -> Vec<f64> {
    let n = (libm::ceil(extent / cell - 1e-12).max(1.0)) as usize;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

impl TriMesh {

    /// True when the open segment from `origin` to `target` crosses any face
    /// other than `skip` strictly before reaching the target.
    pub fn segment_blocked(&self, origin: Vec3, target: Vec3, skip: usize) -> bool {
        let dir = target - origin;
        for f in 0..self.faces.len() {
            if f == skip {
                continue;
            }
            if let Some(t) = segment_triangle_hit(origin, dir, self.face_vertices(f)) {
                if t < 1.0 - 1e-9 {
                    return true;
                }
            }
        }
        false
    }
}

/// Moller-Trumbore over the parametrized segment `origin + t*dir`,
/// `t` in (eps, 1]; returns the hit parameter.
pub fn segment_triangle_hit(origin: Vec3, dir: Vec3, tri: [Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pv = dir.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-16 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - tri[0];
    let u = tv.dot(pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = tv.cross(e1);
    let v = dir.dot(qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(qv) * inv;
    if t > 1e-9 && t <= 1.0 + 1e-12 {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_and_area() {
        let mut m = TriMesh::new();
        m.push_grid(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 4, 2);
        assert_eq!(m.n_faces(), 4 * 2 * 2);
        assert!((m.total_area() - 2.0).abs() < 1e-12);
        for f in 0..m.n_faces() {
            let n = m.face_normal(f).unwrap();
            assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn box_is_outward_and_closed() {
        let mut m = TriMesh::new();
        m.push_box(Vec3::new(-0.5, -1.0, -0.25), Vec3::new(0.5, 1.0, 0.25), 0.3, BoxSides::ALL);
        // area = 2*(1*2 + 1*0.5 + 2*0.5)
        assert!((m.total_area() - 7.0).abs() < 1e-9);
        let center = Vec3::ZERO;
        for f in 0..m.n_faces() {
            let n = m.face_normal(f).unwrap();
            let out = m.face_centroid(f) - center;
            assert!(n.dot(out) > 0.0, "face {f} points inward");
        }
    }

    #[test]
    fn segment_hit_basics() {
        let tri = [
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        // straight through the triangle plane
        let t = segment_triangle_hit(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -2.0), tri);
        assert!((t.unwrap() - 0.5).abs() < 1e-12);
        // stops short of the plane
        assert!(segment_triangle_hit(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -0.5), tri).is_none());
        // misses sideways
        assert!(segment_triangle_hit(Vec3::new(5.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -2.0), tri).is_none());
    }

    #[test]
    fn occlusion_between_parallel_walls() {
        let mut m = TriMesh::new();
        m.push_grid(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), 1, 1);
        m.push_grid(Vec3::new(-1.0, -1.0, 1.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), 1, 1);
        // faces 0,1 at z=0; faces 2,3 at z=1
        let target = m.face_centroid(2);
        let origin = Vec3::new(target.x, target.y, -1.0);
        assert!(m.segment_blocked(origin, target, 2));
        let clear_target = m.face_centroid(0);
        let clear_origin = Vec3::new(clear_target.x, clear_target.y, -1.0);
        assert!(!m.segment_blocked(clear_origin, clear_target, 0));
    }
}
