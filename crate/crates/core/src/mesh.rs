//! Conforming triangular meshes with oriented edge topology and
//! newest-vertex bisection refinement.
//!
//! Triangles are stored counterclockwise with the convention that local
//! edge 0 (vertices 0-1) is the refinement edge and vertex 2 is the peak
//! (newest vertex). Bisection then preserves the convention on children,
//! which keeps the mesh family shape regular.

use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect { x0, y0, x1, y1 }
    }

    pub fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    /// The [-1,1]^2 square used by the benchmark problem.
    pub fn symmetric() -> Rect {
        Rect::new(-1.0, -1.0, 1.0, 1.0)
    }
}

/// An edge with its two adjacent triangles. `n` points from `t_minus`
/// into `t_plus`; for boundary edges it is the outward domain normal.
/// The arclength coordinate runs from `vertices[0]` to `vertices[1]`.
#[derive(Debug, Clone)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub t_minus: usize,
    pub t_plus: Option<usize>,
    pub n: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.t_plus.is_none()
    }

    pub fn midpoint(&self, mesh: &TriangleMesh) -> [f64; 2] {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex triples, counterclockwise; edge (v0,v1) is the refinement edge.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Global edge id of local edge e = (v_e, v_{e+1 mod 3}) per triangle.
    pub tri_edges: Vec<[usize; 3]>,
    /// Per-triangle diameter (longest edge).
    pub h: Vec<f64>,
    pub boundary_vertex: Vec<bool>,
    /// Element id in the parent mesh this triangle descends from
    /// (identity for meshes not produced by `refine`).
    pub parent: Vec<usize>,
    pub domain: Rect,
}

impl TriangleMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        crate::quadrature::signed_area(&self.triangle_vertices(t))
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let v = self.triangle_vertices(t);
        [
            (v[0][0] + v[1][0] + v[2][0]) / 3.0,
            (v[0][1] + v[1][1] + v[2][1]) / 3.0,
        ]
    }

    /// Sign of n_F relative to the outward normal of triangle `t` on edge
    /// `e`: +1 when `t` is T_F^-, -1 when it is T_F^+.
    pub fn edge_sign(&self, t: usize, e: usize) -> f64 {
        if self.edges[e].t_minus == t {
            1.0
        } else {
            -1.0
        }
    }

    pub fn other_triangle(&self, e: usize, t: usize) -> Option<usize> {
        let edge = &self.edges[e];
        if edge.t_minus == t {
            edge.t_plus
        } else {
            Some(edge.t_minus)
        }
    }

    /// Gradients of the three P1 hat functions on triangle `t`, ordered
    /// like the triangle's vertices.
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let v = self.triangle_vertices(t);
        let a2 = 2.0 * self.area(t);
        [
            [(v[1][1] - v[2][1]) / a2, (v[2][0] - v[1][0]) / a2],
            [(v[2][1] - v[0][1]) / a2, (v[0][0] - v[2][0]) / a2],
            [(v[0][1] - v[1][1]) / a2, (v[1][0] - v[0][0]) / a2],
        ]
    }

    /// Barycentric coordinates of a point with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let v = self.triangle_vertices(t);
        let a = 2.0 * self.area(t);
        let sub = |a0: [f64; 2], a1: [f64; 2]| -> f64 {
            (a1[0] - a0[0]) * (p[1] - a0[1]) - (p[0] - a0[0]) * (a1[1] - a0[1])
        };
        [sub(v[1], v[2]) / a, sub(v[2], v[0]) / a, sub(v[0], v[1]) / a]
    }

    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.n_triangles() {
            let v = self.triangle_vertices(t);
            for i in 0..3 {
                let a = v[i];
                let b = v[(i + 1) % 3];
                let c = v[(i + 2) % 3];
                let u = [b[0] - a[0], b[1] - a[1]];
                let w = [c[0] - a[0], c[1] - a[1]];
                let dot = u[0] * w[0] + u[1] * w[1];
                let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
                let nw = (w[0] * w[0] + w[1] * w[1]).sqrt();
                min = min.min((dot / (nu * nw)).clamp(-1.0, 1.0).acos());
            }
        }
        min
    }

    /// Checks all structural invariants; used after construction and in tests.
    pub fn check_invariants(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            if self.area(t) <= 0.0 {
                return Err(Error::invalid(format!("triangle {t} has area <= 0")));
            }
        }
        // Euler relation for a simply connected triangulated domain.
        let (v, e, t) = (self.n_vertices(), self.n_edges(), self.n_triangles());
        if v + t + 1 != e + 2 {
            return Err(Error::invalid(format!(
                "Euler relation violated: V={v} E={e} T={t}"
            )));
        }
        for (i, edge) in self.edges.iter().enumerate() {
            let a = self.vertices[edge.vertices[0]];
            let b = self.vertices[edge.vertices[1]];
            let d = [b[0] - a[0], b[1] - a[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if (len - edge.length).abs() > 1e-12 * len {
                return Err(Error::invalid(format!("edge {i} has stale length")));
            }
            let nn = edge.n[0] * edge.n[0] + edge.n[1] * edge.n[1];
            if (nn - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("edge {i} normal not unit")));
            }
            // n must point out of t_minus.
            let c = self.centroid(edge.t_minus);
            let mid = edge.midpoint(self);
            if (mid[0] - c[0]) * edge.n[0] + (mid[1] - c[1]) * edge.n[1] <= 0.0 {
                return Err(Error::invalid(format!("edge {i} normal points into T^-")));
            }
            if let Some(tp) = edge.t_plus {
                let cp = self.centroid(tp);
                if (mid[0] - cp[0]) * edge.n[0] + (mid[1] - cp[1]) * edge.n[1] >= 0.0 {
                    return Err(Error::invalid(format!("edge {i} normal points out of T^+")));
                }
            }
            // h_F <= h_T for both neighbors.
            if edge.length > self.h[edge.t_minus] * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("edge {i} longer than element diameter")));
            }
        }
        for (t, te) in self.tri_edges.iter().enumerate() {
            for (loc, &e) in te.iter().enumerate() {
                let tri = self.triangles[t];
                let want = [tri[loc], tri[(loc + 1) % 3]];
                let got = self.edges[e].vertices;
                if !(want == got || [want[1], want[0]] == got) {
                    return Err(Error::invalid(format!("triangle {t} edge table broken")));
                }
            }
        }
        Ok(())
    }

    /// All edges meeting `node` with the sign s_{F,N}, in rotational
    /// (counterclockwise angular) order around the node.
    ///
    /// s_{F,N} = +1 when n_F equals the 90-degree clockwise rotation of
    /// the unit vector pointing from N along F.
    pub fn edge_patch(&self, node: usize) -> Result<Vec<(usize, i8)>> {
        if node >= self.n_vertices() {
            return Err(Error::invalid(format!("vertex id {node} out of range")));
        }
        let p = self.vertices[node];
        let mut out: Vec<(usize, i8, f64)> = Vec::new();
        for (i, edge) in self.edges.iter().enumerate() {
            let other = if edge.vertices[0] == node {
                edge.vertices[1]
            } else if edge.vertices[1] == node {
                edge.vertices[0]
            } else {
                continue;
            };
            let q = self.vertices[other];
            let t = [q[0] - p[0], q[1] - p[1]];
            let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
            let tu = [t[0] / len, t[1] / len];
            // clockwise rotation of tu
            let cw = [tu[1], -tu[0]];
            let s = if edge.n[0] * cw[0] + edge.n[1] * cw[1] > 0.0 {
                1
            } else {
                -1
            };
            out.push((i, s, t[1].atan2(t[0])));
        }
        out.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)));
        Ok(out.into_iter().map(|(e, s, _)| (e, s)).collect())
    }

    /// Triangles containing `node`, ascending by id.
    pub fn vertex_star(&self, node: usize) -> Vec<usize> {
        (0..self.n_triangles())
            .filter(|&t| self.triangles[t].contains(&node))
            .collect()
    }

    /// Bisects every marked triangle at least once and applies conforming
    /// closure (newest-vertex bisection on marked edges).
    pub fn refine(&self, marked: &[usize]) -> Result<TriangleMesh> {
        for &t in marked {
            if t >= self.n_triangles() {
                return Err(Error::invalid(format!("marked element {t} out of range")));
            }
        }
        if marked.is_empty() {
            let mut clone = self.clone();
            clone.parent = (0..self.n_triangles()).collect();
            return Ok(clone);
        }
        let key = |a: usize, b: usize| -> (usize, usize) { (a.min(b), a.max(b)) };
        let mut edge_marked: HashMap<(usize, usize), bool> = HashMap::new();
        for &t in marked {
            let tri = self.triangles[t];
            edge_marked.insert(key(tri[0], tri[1]), true);
        }
        // Closure: a triangle with any marked edge must have its
        // refinement edge marked. Iterate to the fixpoint.
        loop {
            let mut changed = false;
            for tri in &self.triangles {
                let refinement = key(tri[0], tri[1]);
                if edge_marked.contains_key(&refinement) {
                    continue;
                }
                let others = [key(tri[1], tri[2]), key(tri[2], tri[0])];
                if others.iter().any(|k| edge_marked.contains_key(k)) {
                    edge_marked.insert(refinement, true);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        // Midpoint vertices, created in deterministic (triangle, local
        // edge) discovery order.
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for loc in 0..3 {
                let k = key(tri[loc], tri[(loc + 1) % 3]);
                if edge_marked.contains_key(&k) && !midpoint.contains_key(&k) {
                    let a = vertices[k.0];
                    let b = vertices[k.1];
                    vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                    midpoint.insert(k, vertices.len() - 1);
                }
            }
        }
        let mut triangles: Vec<[usize; 3]> = Vec::with_capacity(self.n_triangles() * 2);
        let mut parent: Vec<usize> = Vec::with_capacity(self.n_triangles() * 2);
        for (t, tri) in self.triangles.iter().enumerate() {
            let [v0, v1, v2] = *tri;
            let m = midpoint.get(&key(v0, v1)).copied();
            let mut push = |tri: [usize; 3]| {
                triangles.push(tri);
                parent.push(t);
            };
            match m {
                None => push([v0, v1, v2]),
                Some(m) => {
                    // Children keep the convention: refinement edge first,
                    // m is the newest vertex. A child is split again when
                    // its inherited parent edge is also marked.
                    for child in [[v2, v0, m], [v1, v2, m]] {
                        let inherited = key(child[0], child[1]);
                        match midpoint.get(&inherited).copied() {
                            None => push(child),
                            Some(m2) => {
                                push([child[2], child[0], m2]);
                                push([child[1], child[2], m2]);
                            }
                        }
                    }
                }
            }
        }
        let mesh = TriangleMesh::from_cells(vertices, triangles, parent, self.domain)?;
        mesh.check_invariants()?;
        Ok(mesh)
    }

    /// Builds the edge topology from raw cells. Triangles must be CCW.
    pub fn from_cells(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        parent: Vec<usize>,
        domain: Rect,
    ) -> Result<TriangleMesh> {
        let nt = triangles.len();
        let mut edges: Vec<Edge> = Vec::with_capacity(nt * 3 / 2 + 2);
        let mut tri_edges = vec![[usize::MAX; 3]; nt];
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for loc in 0..3 {
                let (a, b) = (tri[loc], tri[(loc + 1) % 3]);
                if a >= vertices.len() || b >= vertices.len() {
                    return Err(Error::invalid("triangle references missing vertex"));
                }
                let k = (a.min(b), a.max(b));
                match lookup.get(&k) {
                    None => {
                        let pa = vertices[k.0];
                        let pb = vertices[k.1];
                        let d = [pb[0] - pa[0], pb[1] - pa[1]];
                        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                        if len == 0.0 {
                            return Err(Error::invalid("zero-length edge"));
                        }
                        edges.push(Edge {
                            vertices: [k.0, k.1],
                            t_minus: t,
                            t_plus: None,
                            n: [d[1] / len, -d[0] / len],
                            length: len,
                        });
                        lookup.insert(k, edges.len() - 1);
                        tri_edges[t][loc] = edges.len() - 1;
                    }
                    Some(&e) => {
                        if edges[e].t_plus.is_some() {
                            return Err(Error::invalid(format!(
                                "edge {:?} shared by more than two triangles",
                                k
                            )));
                        }
                        edges[e].t_plus = Some(t);
                        tri_edges[t][loc] = e;
                    }
                }
            }
        }
        // Orient normals out of t_minus.
        let centroid = |t: usize| -> [f64; 2] {
            let tri = triangles[t];
            [
                (vertices[tri[0]][0] + vertices[tri[1]][0] + vertices[tri[2]][0]) / 3.0,
                (vertices[tri[0]][1] + vertices[tri[1]][1] + vertices[tri[2]][1]) / 3.0,
            ]
        };
        for edge in edges.iter_mut() {
            let a = vertices[edge.vertices[0]];
            let b = vertices[edge.vertices[1]];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let c = centroid(edge.t_minus);
            if (mid[0] - c[0]) * edge.n[0] + (mid[1] - c[1]) * edge.n[1] < 0.0 {
                edge.n = [-edge.n[0], -edge.n[1]];
            }
        }
        let mut h = vec![0.0f64; nt];
        for t in 0..nt {
            for loc in 0..3 {
                h[t] = h[t].max(edges[tri_edges[t][loc]].length);
            }
        }
        let mut boundary_vertex = vec![false; vertices.len()];
        for edge in &edges {
            if edge.is_boundary() {
                boundary_vertex[edge.vertices[0]] = true;
                boundary_vertex[edge.vertices[1]] = true;
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            h,
            boundary_vertex,
            parent,
            domain,
        })
    }
}

/// Structured criss-cross mesh of `rect`: nx * ny squares, each split by
/// the bottom-left to top-right diagonal. The diagonal is the refinement
/// edge of both triangles.
pub fn build_structured_mesh(nx: usize, ny: usize, rect: Rect) -> Result<TriangleMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid("cell counts must be at least 1"));
    }
    if !(rect.x1 > rect.x0 && rect.y1 > rect.y0) {
        return Err(Error::invalid("degenerate rectangle"));
    }
    let dx = (rect.x1 - rect.x0) / nx as f64;
    let dy = (rect.y1 - rect.y0) / ny as f64;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([rect.x0 + i as f64 * dx, rect.y0 + j as f64 * dy]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (bl, br) = (vid(i, j), vid(i + 1, j));
            let (tl, tr) = (vid(i, j + 1), vid(i + 1, j + 1));
            // Diagonal bl-tr first so it is the refinement edge.
            triangles.push([tr, bl, br]);
            triangles.push([bl, tr, tl]);
        }
    }
    let parent = (0..triangles.len()).collect();
    let mesh = TriangleMesh::from_cells(vertices, triangles, parent, rect)?;
    mesh.check_invariants()?;
    Ok(mesh)
}

/// Free-function form of [`TriangleMesh::refine`].
pub fn refine(mesh: &TriangleMesh, marked: &[usize]) -> Result<TriangleMesh> {
    mesh.refine(marked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_square_counts() {
        let mesh = build_structured_mesh(1, 1, Rect::unit()).unwrap();
        assert_eq!(mesh.n_vertices(), 4);
        assert_eq!(mesh.n_triangles(), 2);
        assert_eq!(mesh.n_edges(), 5);
    }

    #[test]
    fn two_by_two_counts_and_euler() {
        // Hand enumeration of the criss-cross grid: 9 vertices, 8 cells,
        // 6 horizontal + 6 vertical + 4 diagonal edges.
        let mesh = build_structured_mesh(2, 2, Rect::symmetric()).unwrap();
        assert_eq!(mesh.n_vertices(), 9);
        assert_eq!(mesh.n_triangles(), 8);
        assert_eq!(mesh.n_edges(), 16);
        assert_eq!(
            mesh.n_vertices() as i64 - mesh.n_edges() as i64 + mesh.n_triangles() as i64 + 1,
            2
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_structured_mesh(0, 1, Rect::unit()).is_err());
        assert!(build_structured_mesh(2, 2, Rect::new(0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn empty_marking_is_identity() {
        let mesh = build_structured_mesh(2, 2, Rect::unit()).unwrap();
        let refined = mesh.refine(&[]).unwrap();
        assert_eq!(refined.n_triangles(), mesh.n_triangles());
        assert_eq!(refined.triangles, mesh.triangles);
    }

    #[test]
    fn marked_triangle_bisects_with_closure() {
        // Both triangles of a single square share the diagonal as their
        // refinement edge, so marking one bisects both: 4 triangles.
        let mesh = build_structured_mesh(1, 1, Rect::unit()).unwrap();
        let refined = mesh.refine(&[0]).unwrap();
        assert_eq!(refined.n_triangles(), 4);
        refined.check_invariants().unwrap();
        assert!(refined.parent.iter().filter(|&&p| p == 0).count() == 2);
    }

    #[test]
    fn uniform_refinement_doubles_count() {
        let mut mesh = build_structured_mesh(2, 2, Rect::unit()).unwrap();
        let n0 = mesh.n_triangles();
        for r in 1..=4 {
            let all: Vec<usize> = (0..mesh.n_triangles()).collect();
            mesh = mesh.refine(&all).unwrap();
            assert_eq!(mesh.n_triangles(), n0 << r);
        }
    }

    #[test]
    fn bisection_preserves_min_angle_over_ten_rounds() {
        let mut mesh = build_structured_mesh(2, 2, Rect::unit()).unwrap();
        let initial = mesh.min_angle();
        let mut rng_state = 12345u64;
        for _ in 0..10 {
            // Deterministic pseudo-random marking.
            let mut marked = Vec::new();
            for t in 0..mesh.n_triangles() {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if rng_state >> 60 < 5 {
                    marked.push(t);
                }
            }
            if marked.is_empty() {
                marked.push(0);
            }
            mesh = mesh.refine(&marked).unwrap();
        }
        // Newest-vertex bisection guarantee: angles stay above a fixed
        // fraction of the initial minimum angle.
        assert!(mesh.min_angle() >= 0.4 * initial);
        mesh.check_invariants().unwrap();
    }

    #[test]
    fn refine_rejects_out_of_range() {
        let mesh = build_structured_mesh(1, 1, Rect::unit()).unwrap();
        assert!(mesh.refine(&[99]).is_err());
    }

    #[test]
    fn edge_patch_center_of_criss_cross() {
        // Center node of the 2x2 criss-cross grid on [-1,1]^2: 4 axis
        // edges plus the 2 diagonals of the lower-left and upper-right
        // squares meet there.
        let mesh = build_structured_mesh(2, 2, Rect::symmetric()).unwrap();
        let center = (0..mesh.n_vertices())
            .find(|&v| mesh.vertices[v] == [0.0, 0.0])
            .unwrap();
        let patch = mesh.edge_patch(center).unwrap();
        assert_eq!(patch.len(), 6);
        // Rotational order: angles strictly increasing.
        let angles: Vec<f64> = patch
            .iter()
            .map(|&(e, _)| {
                let edge = &mesh.edges[e];
                let other = if edge.vertices[0] == center {
                    edge.vertices[1]
                } else {
                    edge.vertices[0]
                };
                let q = mesh.vertices[other];
                q[1].atan2(q[0])
            })
            .collect();
        for w in angles.windows(2) {
            assert!(w[1] > w[0]);
        }
        // Independent recomputation of the sign definition from raw data.
        for &(e, s) in &patch {
            let edge = &mesh.edges[e];
            let other = if edge.vertices[0] == center {
                edge.vertices[1]
            } else {
                edge.vertices[0]
            };
            let q = mesh.vertices[other];
            let len = (q[0] * q[0] + q[1] * q[1]).sqrt();
            let cw = [q[1] / len, -q[0] / len];
            let expect = if edge.n[0] * cw[0] + edge.n[1] * cw[1] > 0.0 {
                1i8
            } else {
                -1i8
            };
            assert_eq!(s, expect);
        }
    }

    #[test]
    fn corner_node_patch_of_unit_square() {
        let mesh = build_structured_mesh(1, 1, Rect::unit()).unwrap();
        // Corner (0,0) lies on the diagonal: 2 boundary edges + 1 diagonal.
        let patch = mesh.edge_patch(0).unwrap();
        assert_eq!(patch.len(), 3);
        // Corner (1,0) is off the diagonal: 2 boundary edges only.
        let v = (0..4).find(|&v| mesh.vertices[v] == [1.0, 0.0]).unwrap();
        assert_eq!(mesh.edge_patch(v).unwrap().len(), 2);
    }

    #[test]
    fn edge_sign_flips_between_endpoints() {
        // s_{F,N} flips with the direction along F, hence differs at the
        // two endpoints; flipping n_F would flip it at both.
        let mesh = build_structured_mesh(2, 2, Rect::unit()).unwrap();
        for e in 0..mesh.n_edges() {
            let [a, b] = mesh.edges[e].vertices;
            let sa = mesh.edge_patch(a).unwrap().iter().find(|x| x.0 == e).unwrap().1;
            let sb = mesh.edge_patch(b).unwrap().iter().find(|x| x.0 == e).unwrap().1;
            assert_eq!(sa, -sb);
        }
    }

    #[test]
    fn h_f_bounded_by_h_t() {
        let mesh = build_structured_mesh(3, 2, Rect::new(0.0, 0.0, 2.0, 1.0)).unwrap();
        for t in 0..mesh.n_triangles() {
            for &e in &mesh.tri_edges[t] {
                assert!(mesh.edges[e].length <= mesh.h[t] + 1e-15);
            }
        }
    }
}
