//! Level-set driven cut-cell classification and quadrature on the cut
//! geometry.
//!
//! Inside each cut element the interface is reconstructed as the straight
//! segment through the linear-interpolation zeros of the level set on the
//! two cut edges. Vertex values within a snap tolerance of zero are moved
//! to the positive side, so a cut element always has exactly two distinct
//! edge intersection points.

use crate::error::{Error, Result};
use crate::levelset::LevelSet;
use crate::mesh::TriangleMesh;
use crate::quadrature::{self, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellClass {
    In1,
    In2,
    Cut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    In1,
    In2,
    Cut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    R1,
    R2,
    Whole,
}

impl Region {
    pub fn index(self) -> usize {
        match self {
            Region::R1 => 0,
            Region::R2 => 1,
            Region::Whole => panic!("Region::Whole has no index"),
        }
    }

    pub fn from_id(i: u8) -> Region {
        match i {
            1 => Region::R1,
            2 => Region::R2,
            _ => panic!("region id must be 1 or 2"),
        }
    }
}

/// Cut data of one element. The triangle `A1 A2 A3` is the element with
/// `A1` the lone vertex (counterclockwise order preserved); `M` lies on
/// edge `A1 A2` and `N` on edge `A1 A3`.
#[derive(Debug, Clone)]
pub struct CutCell {
    pub element: usize,
    /// Local index (0..3) of the lone vertex A1.
    pub apex_local: usize,
    /// Region id (1 or 2) of the triangular part T^tri containing A1.
    pub apex_region: u8,
    pub m_point: [f64; 2],
    pub n_point: [f64; 2],
    /// Global edge ids hosting M and N.
    pub m_edge: usize,
    pub n_edge: usize,
    /// Sub-segment lengths of the two cut edges.
    pub seg_a1m: f64,
    pub seg_a2m: f64,
    pub seg_a1n: f64,
    pub seg_a3n: f64,
    /// Shortest sub-segment of the cut edges.
    pub h_min: f64,
    /// Interface segment M-N.
    pub gamma_length: f64,
    /// Unit normal of the segment, oriented from region 1 into region 2.
    pub gamma_normal: [f64; 2],
    /// Triangular part (A1, M, N).
    pub tri_part: [[f64; 2]; 3],
    /// Quadrilateral part split into two triangles by the diagonal chosen
    /// so the ratio |A2M|/|A3N| (or its inverse) stays bounded.
    pub quad_tris: [[[f64; 2]; 3]; 2],
    /// True when the split diagonal runs from A3 to M.
    pub diag_from_a3: bool,
}

/// Linear zero crossing on a cut edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgeCut {
    pub zero: [f64; 2],
    /// Arclength of the crossing measured from `edge.vertices[0]`.
    pub s_zero: f64,
    /// True when the level set is negative at `edge.vertices[0]`.
    pub negative_at_v0: bool,
}

pub struct CutTopology {
    pub class: Vec<CellClass>,
    /// T_h^i: elements intersecting region i (cut elements are in both).
    pub cells: [Vec<usize>; 2],
    pub cut_cell_ids: Vec<usize>,
    pub cut_cells: Vec<CutCell>,
    /// element id -> index into `cut_cells`.
    pub cut_index: Vec<Option<usize>>,
    pub edge_class: Vec<EdgeClass>,
    pub edge_cut: Vec<Option<EdgeCut>>,
    /// F_g^i: interior edges of F_h^i with a cut neighbor element.
    pub ghost_edges: [Vec<usize>; 2],
    /// Edges lying on the interface (case F subset of Gamma). Always empty
    /// for topologies produced by `classify_cells`; constructible by hand
    /// for aligned-interface setups.
    pub interface_edges: Vec<usize>,
    /// Snapped level-set values at the vertices.
    pub vertex_values: Vec<f64>,
    /// Region id (1 or 2) owning each vertex.
    pub vertex_region: Vec<u8>,
}

impl CutTopology {
    pub fn is_cut(&self, t: usize) -> bool {
        self.class[t] == CellClass::Cut
    }

    pub fn cut_cell(&self, t: usize) -> Option<&CutCell> {
        self.cut_index[t].map(|i| &self.cut_cells[i])
    }

    /// T in T_h^i?
    pub fn in_region(&self, t: usize, region: u8) -> bool {
        match self.class[t] {
            CellClass::Cut => true,
            CellClass::In1 => region == 1,
            CellClass::In2 => region == 2,
        }
    }

    /// F in F_h^i?
    pub fn edge_in_region(&self, e: usize, region: u8) -> bool {
        match self.edge_class[e] {
            EdgeClass::Cut => true,
            EdgeClass::In1 => region == 1,
            EdgeClass::In2 => region == 2,
        }
    }

    pub fn n_cut(&self) -> usize {
        self.cut_cells.len()
    }

    /// Area of T intersected with region i.
    pub fn region_area(&self, mesh: &TriangleMesh, t: usize, region: u8) -> f64 {
        match self.class[t] {
            CellClass::In1 => {
                if region == 1 {
                    mesh.area(t)
                } else {
                    0.0
                }
            }
            CellClass::In2 => {
                if region == 2 {
                    mesh.area(t)
                } else {
                    0.0
                }
            }
            CellClass::Cut => {
                let cell = self.cut_cell(t).unwrap();
                if cell.apex_region == region {
                    quadrature::signed_area(&cell.tri_part).abs()
                } else {
                    quadrature::signed_area(&cell.quad_tris[0]).abs()
                        + quadrature::signed_area(&cell.quad_tris[1]).abs()
                }
            }
        }
    }

    /// The sub-triangles covering T intersected with the requested region
    /// (empty when the element does not touch it).
    pub fn region_triangles(
        &self,
        mesh: &TriangleMesh,
        t: usize,
        region: Region,
    ) -> Vec<[[f64; 2]; 3]> {
        match (region, self.class[t]) {
            (Region::Whole, _) => vec![mesh.triangle_vertices(t)],
            (Region::R1, CellClass::In1) | (Region::R2, CellClass::In2) => {
                vec![mesh.triangle_vertices(t)]
            }
            (Region::R1, CellClass::In2) | (Region::R2, CellClass::In1) => vec![],
            (r, CellClass::Cut) => {
                let cell = self.cut_cell(t).unwrap();
                let want = if r == Region::R1 { 1 } else { 2 };
                if cell.apex_region == want {
                    vec![cell.tri_part]
                } else {
                    vec![cell.quad_tris[0], cell.quad_tris[1]]
                }
            }
        }
    }

    /// The part of edge `e` inside region i as an arclength interval
    /// [s0, s1] measured from `edge.vertices[0]`; None if empty.
    pub fn edge_region_interval(
        &self,
        mesh: &TriangleMesh,
        e: usize,
        region: u8,
    ) -> Option<(f64, f64)> {
        let len = mesh.edges[e].length;
        match self.edge_class[e] {
            EdgeClass::In1 => (region == 1).then_some((0.0, len)),
            EdgeClass::In2 => (region == 2).then_some((0.0, len)),
            EdgeClass::Cut => {
                let cut = self.edge_cut[e].as_ref().unwrap();
                let v0_region = if cut.negative_at_v0 { 1 } else { 2 };
                if region == v0_region {
                    Some((0.0, cut.s_zero))
                } else {
                    Some((cut.s_zero, len))
                }
            }
        }
    }
}

/// Classifies every cell and edge against the level set and reconstructs
/// the per-cell interface geometry.
pub fn classify_cells(mesh: &TriangleMesh, ls: &LevelSet) -> Result<CutTopology> {
    let nv = mesh.n_vertices();
    let mut raw = vec![0.0; nv];
    for v in 0..nv {
        let p = mesh.vertices[v];
        raw[v] = ls.eval(p[0], p[1]);
        if !raw[v].is_finite() {
            return Err(Error::invalid(format!("level set not finite at vertex {v}")));
        }
    }
    // Local mesh size per vertex for the snap tolerance.
    let mut h_local = vec![0.0f64; nv];
    for t in 0..mesh.n_triangles() {
        for &v in &mesh.triangles[t] {
            h_local[v] = h_local[v].max(mesh.h[t]);
        }
    }
    let mut values = vec![0.0; nv];
    let mut snapped = vec![false; nv];
    for v in 0..nv {
        let p = mesh.vertices[v];
        let tol = match ls.gradient(p[0], p[1]) {
            Some(g) => {
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                if gn > 0.0 {
                    1e-10 * h_local[v] * gn
                } else {
                    1e-10
                }
            }
            None => 1e-10,
        };
        if raw[v].abs() < tol {
            values[v] = tol;
            snapped[v] = true;
        } else {
            values[v] = raw[v];
        }
    }
    let vertex_region: Vec<u8> = values.iter().map(|&v| if v < 0.0 { 1 } else { 2 }).collect();

    // Edge classification with canonical zero crossings.
    let mut edge_class = Vec::with_capacity(mesh.n_edges());
    let mut edge_cut: Vec<Option<EdgeCut>> = Vec::with_capacity(mesh.n_edges());
    for edge in &mesh.edges {
        let [a, b] = edge.vertices;
        let (va, vb) = (values[a], values[b]);
        if va < 0.0 && vb < 0.0 {
            edge_class.push(EdgeClass::In1);
            edge_cut.push(None);
        } else if va >= 0.0 && vb >= 0.0 {
            edge_class.push(EdgeClass::In2);
            edge_cut.push(None);
        } else {
            let t = va / (va - vb);
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b];
            edge_class.push(EdgeClass::Cut);
            edge_cut.push(Some(EdgeCut {
                zero: [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])],
                s_zero: t * edge.length,
                negative_at_v0: va < 0.0,
            }));
        }
    }

    let mut class = Vec::with_capacity(mesh.n_triangles());
    let mut cut_cells = Vec::new();
    let mut cut_cell_ids = Vec::new();
    let mut cut_index = vec![None; mesh.n_triangles()];
    for t in 0..mesh.n_triangles() {
        let tri = mesh.triangles[t];
        if tri.iter().all(|&v| snapped[v]) {
            return Err(Error::DegenerateInterface { element: t });
        }
        let neg: Vec<bool> = tri.iter().map(|&v| values[v] < 0.0).collect();
        let n_neg = neg.iter().filter(|&&x| x).count();
        match n_neg {
            0 => class.push(CellClass::In2),
            3 => class.push(CellClass::In1),
            _ => {
                class.push(CellClass::Cut);
                let apex_local = if n_neg == 1 {
                    neg.iter().position(|&x| x).unwrap()
                } else {
                    neg.iter().position(|&x| !x).unwrap()
                };
                let apex_region = if n_neg == 1 { 1u8 } else { 2u8 };
                let cell = build_cut_cell(mesh, &edge_cut, t, apex_local, apex_region)?;
                cut_index[t] = Some(cut_cells.len());
                cut_cell_ids.push(t);
                cut_cells.push(cell);
            }
        }
    }

    let cells1 = (0..mesh.n_triangles())
        .filter(|&t| class[t] != CellClass::In2)
        .collect();
    let cells2 = (0..mesh.n_triangles())
        .filter(|&t| class[t] != CellClass::In1)
        .collect();

    // Ghost edges: interior edges of F_h^i with a cut neighbor.
    let mut ghost_edges = [Vec::new(), Vec::new()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let Some(tp) = edge.t_plus else { continue };
        let touches_cut =
            class[edge.t_minus] == CellClass::Cut || class[tp] == CellClass::Cut;
        if !touches_cut {
            continue;
        }
        for i in 0..2usize {
            let region = (i + 1) as u8;
            let in_f = match edge_class[e] {
                EdgeClass::Cut => true,
                EdgeClass::In1 => region == 1,
                EdgeClass::In2 => region == 2,
            };
            if in_f {
                ghost_edges[i].push(e);
            }
        }
    }

    let topo = CutTopology {
        class,
        cells: [cells1, cells2],
        cut_cell_ids,
        cut_cells,
        cut_index,
        edge_class,
        edge_cut,
        ghost_edges,
        interface_edges: Vec::new(),
        vertex_values: values,
        vertex_region,
    };
    for cell in &topo.cut_cells {
        let t = cell.element;
        let full = mesh.area(t);
        let parts = topo.region_area(mesh, t, 1) + topo.region_area(mesh, t, 2);
        if (parts - full).abs() > 1e-12 * full {
            return Err(Error::invalid(format!(
                "sub-cell areas of element {t} do not add up: {parts} vs {full}"
            )));
        }
    }
    Ok(topo)
}

fn build_cut_cell(
    mesh: &TriangleMesh,
    edge_cut: &[Option<EdgeCut>],
    t: usize,
    apex_local: usize,
    apex_region: u8,
) -> Result<CutCell> {
    let tri = mesh.triangles[t];
    let a1 = mesh.vertices[tri[apex_local]];
    let a2 = mesh.vertices[tri[(apex_local + 1) % 3]];
    let a3 = mesh.vertices[tri[(apex_local + 2) % 3]];
    // Local edge loc spans (v_loc, v_loc+1): M on (A1,A2) = local apex
    // edge, N on (A3,A1) = local edge apex+2.
    let m_edge = mesh.tri_edges[t][apex_local];
    let n_edge = mesh.tri_edges[t][(apex_local + 2) % 3];
    let m = edge_cut[m_edge]
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("element {t}: expected cut on M edge")))?
        .zero;
    let n = edge_cut[n_edge]
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("element {t}: expected cut on N edge")))?
        .zero;
    let dist = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let (seg_a1m, seg_a2m) = (dist(a1, m), dist(a2, m));
    let (seg_a1n, seg_a3n) = (dist(a1, n), dist(a3, n));
    let gamma_length = dist(m, n);
    if gamma_length == 0.0 {
        return Err(Error::DegenerateInterface { element: t });
    }
    let d = [(n[0] - m[0]) / gamma_length, (n[1] - m[1]) / gamma_length];
    let mut normal = [d[1], -d[0]];
    let mid = [0.5 * (m[0] + n[0]), 0.5 * (m[1] + n[1])];
    let to_apex = [a1[0] - mid[0], a1[1] - mid[1]];
    let toward_apex = normal[0] * to_apex[0] + normal[1] * to_apex[1];
    // Normal points from region 1 into region 2.
    let flip = if apex_region == 1 {
        toward_apex > 0.0
    } else {
        toward_apex < 0.0
    };
    if flip {
        normal = [-normal[0], -normal[1]];
    }
    let diag_from_a3 = seg_a2m / seg_a3n <= seg_a3n / seg_a2m;
    let quad_tris = if diag_from_a3 {
        [[m, a2, a3], [m, a3, n]]
    } else {
        [[m, a2, n], [a2, a3, n]]
    };
    Ok(CutCell {
        element: t,
        apex_local,
        apex_region,
        m_point: m,
        n_point: n,
        m_edge,
        n_edge,
        seg_a1m,
        seg_a2m,
        seg_a1n,
        seg_a3n,
        h_min: seg_a1m.min(seg_a2m).min(seg_a1n).min(seg_a3n),
        gamma_length,
        gamma_normal: normal,
        tri_part: [a1, m, n],
        quad_tris,
        diag_from_a3,
    })
}

/// Quadrature over T intersected with a region, exact to `degree` on the
/// straight-cut geometry.
pub fn subcell_quadrature(
    mesh: &TriangleMesh,
    cut: &CutTopology,
    element: usize,
    region: Region,
    degree: usize,
) -> Result<QuadratureRule> {
    if element >= mesh.n_triangles() {
        return Err(Error::invalid(format!("unknown element {element}")));
    }
    if degree > quadrature::MAX_DEGREE {
        return Err(Error::invalid(format!("unsupported quadrature degree {degree}")));
    }
    let tris = cut.region_triangles(mesh, element, region);
    Ok(quadrature::triangles_rule(&tris, degree))
}

/// 1D quadrature along the interface segment of a cut element.
pub fn interface_quadrature(
    cut: &CutTopology,
    element: usize,
    degree: usize,
) -> Result<QuadratureRule> {
    let Some(cell) = cut.cut_cell(element) else {
        return Err(Error::invalid(format!("element {element} is not cut")));
    };
    if degree > quadrature::MAX_DEGREE {
        return Err(Error::invalid(format!("unsupported quadrature degree {degree}")));
    }
    Ok(quadrature::segment_rule(cell.m_point, cell.n_point, degree))
}

/// Writes the cut topology as CSV (element id, class, |Gamma_T|, h_T^min).
pub fn write_topology_csv(
    path: &std::path::Path,
    mesh: &TriangleMesh,
    cut: &CutTopology,
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "element,class,gamma_length,h_min")?;
    for t in 0..mesh.n_triangles() {
        let class = match cut.class[t] {
            CellClass::In1 => "in1",
            CellClass::In2 => "in2",
            CellClass::Cut => "cut",
        };
        match cut.cut_cell(t) {
            Some(c) => writeln!(out, "{t},{class},{},{}", c.gamma_length, c.h_min)?,
            None => writeln!(out, "{t},{class},0,0")?,
        }
    }
    Ok(())
}
