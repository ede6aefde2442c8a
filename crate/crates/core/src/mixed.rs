//! The auxiliary mixed formulation: elementwise-P1 space D_h, edge
//! multiplier space M_h, forms b_h and d_h, locally computed multipliers,
//! and numerical verification of the kernel lemma and inf-sup stability.
//!
//! The multipliers are recovered node by node: testing the first mixed
//! equation with single-element hat pieces couples, at each node N, only
//! the multiplier endpoint values theta|_F(N) of the edges meeting N.
//! Interior nodes additionally carry the M_h constraint row
//! sum_F s_{F,N} h_F theta|_F(N) = 0, which closes the patch system.

use crate::cut::{interface_quadrature, subcell_quadrature, CutTopology, Region};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::primal::{DofHandlerC, PrimalSolution};
use crate::problem::{DiffusionData, ProblemData, SolverConfig};
use nalgebra::{DMatrix, DVector};

/// Elementwise-P1 DOFs: 3 per triangle of T_h^i, per subdomain.
pub struct DofHandlerD {
    /// Per region: element -> first of its 3 consecutive dofs.
    pub elem_base: [Vec<Option<usize>>; 2],
    /// dof -> (region, element, local vertex).
    pub dofs: Vec<(u8, usize, usize)>,
}

impl DofHandlerD {
    pub fn build(mesh: &TriangleMesh, cut: &CutTopology) -> DofHandlerD {
        let mut elem_base = [
            vec![None; mesh.n_triangles()],
            vec![None; mesh.n_triangles()],
        ];
        let mut dofs = Vec::new();
        for i in 0..2usize {
            for &t in &cut.cells[i] {
                elem_base[i][t] = Some(dofs.len());
                for loc in 0..3 {
                    dofs.push(((i + 1) as u8, t, loc));
                }
            }
        }
        DofHandlerD { elem_base, dofs }
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn dof(&self, region: u8, element: usize, loc: usize) -> Option<usize> {
        self.elem_base[region as usize - 1][element].map(|b| b + loc)
    }

    /// Embeds a doubled conforming field into D_h coordinates.
    pub fn embed_primal(
        &self,
        mesh: &TriangleMesh,
        dofc: &DofHandlerC,
        u: &PrimalSolution,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for (d, &(region, t, loc)) in self.dofs.iter().enumerate() {
            let dofs = dofc
                .element_dofs(mesh, t, region)
                .expect("element of T_h^i carries conforming dofs");
            out[d] = u.values[dofs[loc]];
        }
        out
    }

    pub fn gradient(
        &self,
        mesh: &TriangleMesh,
        field: &[f64],
        t: usize,
        region: u8,
    ) -> Option<[f64; 2]> {
        let base = self.elem_base[region as usize - 1][t]?;
        let grads = mesh.hat_gradients(t);
        let mut g = [0.0, 0.0];
        for loc in 0..3 {
            g[0] += field[base + loc] * grads[loc][0];
            g[1] += field[base + loc] * grads[loc][1];
        }
        Some(g)
    }

    /// Trace of the field's restriction to element `t` at vertex `v`.
    pub fn vertex_trace(
        &self,
        mesh: &TriangleMesh,
        field: &[f64],
        t: usize,
        region: u8,
        v: usize,
    ) -> Option<f64> {
        let base = self.elem_base[region as usize - 1][t]?;
        let loc = mesh.triangles[t].iter().position(|&x| x == v)?;
        Some(field[base + loc])
    }

    pub fn value_at(
        &self,
        mesh: &TriangleMesh,
        field: &[f64],
        t: usize,
        region: u8,
        p: [f64; 2],
    ) -> Option<f64> {
        let base = self.elem_base[region as usize - 1][t]?;
        let lambda = mesh.barycentric(t, p);
        Some((0..3).map(|loc| field[base + loc] * lambda[loc]).sum())
    }
}

/// Layout of the multiplier coordinates: one slot per (region, edge of
/// F_h^i) holding the two endpoint values. Cut edges carry two slots,
/// one per subdomain.
pub struct MultiplierLayout {
    pub edge_slot: [Vec<Option<usize>>; 2],
    /// slot -> (region, edge)
    pub slots: Vec<(u8, usize)>,
}

impl MultiplierLayout {
    pub fn build(mesh: &TriangleMesh, cut: &CutTopology) -> MultiplierLayout {
        let mut edge_slot = [vec![None; mesh.n_edges()], vec![None; mesh.n_edges()]];
        let mut slots = Vec::new();
        for i in 0..2usize {
            let region = (i + 1) as u8;
            for e in 0..mesh.n_edges() {
                if cut.edge_in_region(e, region) {
                    edge_slot[i][e] = Some(slots.len());
                    slots.push((region, e));
                }
            }
        }
        MultiplierLayout { edge_slot, slots }
    }

    pub fn n_coords(&self) -> usize {
        2 * self.slots.len()
    }

    pub fn coord(&self, region: u8, edge: usize, endpoint: usize) -> Option<usize> {
        self.edge_slot[region as usize - 1][edge].map(|s| 2 * s + endpoint)
    }
}

/// A multiplier field: values per slot endpoint, ordered like
/// `MultiplierLayout`.
pub struct MultiplierField {
    pub layout: MultiplierLayout,
    pub values: Vec<f64>,
}

impl MultiplierField {
    pub fn zero(layout: MultiplierLayout) -> MultiplierField {
        let n = layout.n_coords();
        MultiplierField {
            layout,
            values: vec![0.0; n],
        }
    }

    /// theta^i|_F at the given endpoint (0 or 1 in edge vertex order).
    pub fn endpoint_value(&self, region: u8, edge: usize, endpoint: usize) -> Option<f64> {
        self.layout
            .coord(region, edge, endpoint)
            .map(|c| self.values[c])
    }

    /// Max relative violation of the M_h node constraint at interior nodes.
    pub fn constraint_residual(&self, mesh: &TriangleMesh, cut: &CutTopology) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2usize {
            let region = (i + 1) as u8;
            for node in interior_nodes(mesh, cut, region) {
                let mut acc = 0.0;
                let mut scale = 0.0f64;
                for (e, s) in mesh.edge_patch(node).unwrap() {
                    if let Some(c) = self.layout.coord(region, e, endpoint_index(mesh, e, node)) {
                        let term = s as f64 * mesh.edges[e].length * self.values[c];
                        acc += term;
                        scale = scale.max(term.abs());
                    }
                }
                worst = worst.max(acc.abs() / scale.max(1.0));
            }
        }
        worst
    }

    /// CSV dump (subdomain, edge, endpoint values).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "subdomain,edge,value_v0,value_v1")?;
        for (s, &(region, e)) in self.layout.slots.iter().enumerate() {
            writeln!(
                out,
                "{region},{e},{},{}",
                self.values[2 * s],
                self.values[2 * s + 1]
            )?;
        }
        Ok(())
    }
}

fn endpoint_index(mesh: &TriangleMesh, edge: usize, node: usize) -> usize {
    if mesh.edges[edge].vertices[0] == node {
        0
    } else {
        1
    }
}

/// Nodes interior to Omega_h^i: interior mesh nodes whose full edge fan
/// lies in F_h^i (which forces the element star into T_h^i as well).
///
/// The M_h node constraint removes the one degenerate multiplier
/// direction of a closed edge fan; at a node with a broken fan the
/// per-node b_h block is a path with full column rank and carries no
/// constraint. Requiring the complete fan keeps both the constraint set
/// and the local solves consistent on under-resolved cut patterns.
pub fn interior_nodes(mesh: &TriangleMesh, cut: &CutTopology, region: u8) -> Vec<usize> {
    let mut fan_total = vec![0usize; mesh.n_vertices()];
    let mut fan_in = vec![0usize; mesh.n_vertices()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        for &v in &edge.vertices {
            fan_total[v] += 1;
            if cut.edge_in_region(e, region) {
                fan_in[v] += 1;
            }
        }
    }
    (0..mesh.n_vertices())
        .filter(|&v| !mesh.boundary_vertex[v] && fan_in[v] > 0 && fan_in[v] == fan_total[v])
        .collect()
}

/// Vertices of Omega_h^i (any vertex of an element of T_h^i).
pub fn region_nodes(mesh: &TriangleMesh, cut: &CutTopology, region: u8) -> Vec<usize> {
    let mut present = vec![false; mesh.n_vertices()];
    for &t in &cut.cells[region as usize - 1] {
        for &v in &mesh.triangles[t] {
            present[v] = true;
        }
    }
    (0..mesh.n_vertices()).filter(|&v| present[v]).collect()
}

/// The nodal form b_h(mu, v) = sum_i sum_F (k_i h_F / 2)
/// sum_{N in F} mu^i|_F(N) [[v^i]](N).
pub fn eval_b_h(
    theta: &MultiplierField,
    v: &[f64],
    k: &DiffusionData,
    mesh: &TriangleMesh,
    dofd: &DofHandlerD,
) -> f64 {
    let mut acc = 0.0;
    for (s, &(region, e)) in theta.layout.slots.iter().enumerate() {
        let edge = &mesh.edges[e];
        let w = k.k(region) * edge.length / 2.0;
        for endpoint in 0..2 {
            let node = edge.vertices[endpoint];
            let jump = vertex_jump(mesh, dofd, v, e, region, node);
            acc += w * theta.values[2 * s + endpoint] * jump;
        }
    }
    acc
}

/// [[v^i]](node) on edge e: T^- trace minus T^+ trace; single trace on
/// boundary edges.
fn vertex_jump(
    mesh: &TriangleMesh,
    dofd: &DofHandlerD,
    v: &[f64],
    e: usize,
    region: u8,
    node: usize,
) -> f64 {
    let edge = &mesh.edges[e];
    let minus = dofd
        .vertex_trace(mesh, v, edge.t_minus, region, node)
        .expect("edge of F_h^i has a T^- in T_h^i");
    match edge.t_plus {
        None => minus,
        Some(tp) => {
            let plus = dofd
                .vertex_trace(mesh, v, tp, region, node)
                .expect("edge of F_h^i has a T^+ in T_h^i");
            minus - plus
        }
    }
}

/// Contribution of one edge of F_h^i to d_h(u, v).
pub fn d_h_edge(
    u: &[f64],
    v: &[f64],
    k: &DiffusionData,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofd: &DofHandlerD,
    region: u8,
    e: usize,
) -> f64 {
    let Some((s0, s1)) = cut.edge_region_interval(mesh, e, region) else {
        return 0.0;
    };
    let edge = &mesh.edges[e];
    let mean_flux = |field: &[f64]| -> f64 {
        let gm = dofd.gradient(mesh, field, edge.t_minus, region).unwrap();
        match edge.t_plus {
            None => k.k(region) * (gm[0] * edge.n[0] + gm[1] * edge.n[1]),
            Some(tp) => {
                let gp = dofd.gradient(mesh, field, tp, region).unwrap();
                0.5 * k.k(region) * ((gm[0] + gp[0]) * edge.n[0] + (gm[1] + gp[1]) * edge.n[1])
            }
        }
    };
    // [[w]] along the edge is linear; trapezoid on [s0, s1] is exact.
    let jump_integral = |field: &[f64]| -> f64 {
        let j0 = vertex_jump(mesh, dofd, field, e, region, edge.vertices[0]);
        let j1 = vertex_jump(mesh, dofd, field, e, region, edge.vertices[1]);
        let j = |s: f64| j0 + (j1 - j0) * s / edge.length;
        (s1 - s0) * 0.5 * (j(s0) + j(s1))
    };
    mean_flux(u) * jump_integral(v) + mean_flux(v) * jump_integral(u)
}

/// d_h(u, v): symmetric edge form with means of normal fluxes against
/// jumps, integrated over F intersected with Omega^i.
pub fn eval_d_h(
    u: &[f64],
    v: &[f64],
    k: &DiffusionData,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofd: &DofHandlerD,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..2usize {
        let region = (i + 1) as u8;
        for e in 0..mesh.n_edges() {
            if cut.edge_in_region(e, region) {
                acc += d_h_edge(u, v, k, mesh, cut, dofd, region, e);
            }
        }
    }
    acc
}

/// Per-basis right-hand side of the first mixed equation:
/// R[j] = l_h(v_j) - a_h(u_h, v_j) + sum_F int_{F cap Omega^i}
/// <k grad u_h . n> [[v_j]]. The remaining d_h piece (means of grad v_j
/// against jumps of u_h) vanishes on interior edges for the conforming
/// u_h and cancels against the Dirichlet-data correction of the load
/// functional on boundary edges.
pub fn mixed_rhs_residual(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    dofd: &DofHandlerD,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let k = problem.diffusion;
    let mut r = vec![0.0; dofd.n_dofs()];

    // l_h and the volume part of a_h.
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &t in &cut.cells[i] {
            let base = dofd.dof(region, t, 0).unwrap();
            let grads = mesh.hat_gradients(t);
            let gu = u.gradient(mesh, dofc, t, region).unwrap();
            let area = cut.region_area(mesh, t, region);
            let rule = subcell_quadrature(mesh, cut, t, region_enum(region), cfg.quad_source)?;
            for loc in 0..3 {
                let dot = gu[0] * grads[loc][0] + gu[1] * grads[loc][1];
                r[base + loc] -= ki * area * dot;
            }
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let lambda = mesh.barycentric(t, *p);
                let f = problem.source(region, p[0], p[1]);
                for loc in 0..3 {
                    r[base + loc] += w * f * lambda[loc];
                }
            }
        }
    }

    // Ghost penalty part of a_h.
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &e in &cut.ghost_edges[i] {
            let edge = &mesh.edges[e];
            let tp = edge.t_plus.unwrap();
            let gm = u.gradient(mesh, dofc, edge.t_minus, region).unwrap();
            let gp = u.gradient(mesh, dofc, tp, region).unwrap();
            let jump_u = (gm[0] - gp[0]) * edge.n[0] + (gm[1] - gp[1]) * edge.n[1];
            let w = cfg.gamma_g * ki * edge.length * edge.length * jump_u;
            for (t, sign) in [(edge.t_minus, 1.0), (tp, -1.0)] {
                let base = dofd.dof(region, t, 0).unwrap();
                let grads = mesh.hat_gradients(t);
                for loc in 0..3 {
                    let dn = grads[loc][0] * edge.n[0] + grads[loc][1] * edge.n[1];
                    r[base + loc] -= w * sign * dn;
                }
            }
        }
    }

    // Nitsche part of a_h on each Gamma_T.
    for cell in &cut.cut_cells {
        let t = cell.element;
        let pen = cfg.gamma * k.k_gamma() / mesh.h[t];
        let rule = interface_quadrature(cut, t, 2)?;
        let grads = mesh.hat_gradients(t);
        let nrm = cell.gamma_normal;
        let omega = [k.omega1(), k.omega2()];
        let gu = [
            u.gradient(mesh, dofc, t, 1).unwrap(),
            u.gradient(mesh, dofc, t, 2).unwrap(),
        ];
        let mean_flux_u = omega[0] * k.k1 * (gu[0][0] * nrm[0] + gu[0][1] * nrm[1])
            + omega[1] * k.k2 * (gu[1][0] * nrm[0] + gu[1][1] * nrm[1]);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let lambda = mesh.barycentric(t, *p);
            let jump_u = u.value_at(mesh, dofc, t, 1, *p).unwrap()
                - u.value_at(mesh, dofc, t, 2, *p).unwrap();
            for i in 0..2usize {
                let region = (i + 1) as u8;
                let base = dofd.dof(region, t, 0).unwrap();
                let sign = if i == 0 { 1.0 } else { -1.0 };
                let ki = k.k(region);
                for loc in 0..3 {
                    let jump_v = sign * lambda[loc];
                    let flux_v = omega[i] * ki * (grads[loc][0] * nrm[0] + grads[loc][1] * nrm[1]);
                    r[base + loc] -=
                        w * (pen * jump_u * jump_v - mean_flux_u * jump_v - flux_v * jump_u);
                }
            }
        }
    }

    // Mean flux of u_h against jumps of v over all edges of F_h^i.
    let u_d = dofd.embed_primal(mesh, dofc, u);
    for i in 0..2usize {
        let region = (i + 1) as u8;
        for e in 0..mesh.n_edges() {
            if !cut.edge_in_region(e, region) {
                continue;
            }
            let Some((s0, s1)) = cut.edge_region_interval(mesh, e, region) else {
                continue;
            };
            let edge = &mesh.edges[e];
            let gm = dofd.gradient(mesh, &u_d, edge.t_minus, region).unwrap();
            let mean = match edge.t_plus {
                None => k.k(region) * (gm[0] * edge.n[0] + gm[1] * edge.n[1]),
                Some(tp) => {
                    let gp = dofd.gradient(mesh, &u_d, tp, region).unwrap();
                    0.5 * k.k(region)
                        * ((gm[0] + gp[0]) * edge.n[0] + (gm[1] + gp[1]) * edge.n[1])
                }
            };
            // Hat traces over [s0, s1]: integral of (1 - s/h) and (s/h).
            let h = edge.length;
            let int0 = (s1 - s0) * 0.5 * ((1.0 - s0 / h) + (1.0 - s1 / h));
            let int1 = (s1 - s0) * 0.5 * (s0 / h + s1 / h);
            for (endpoint, integral) in [(0usize, int0), (1usize, int1)] {
                let node = edge.vertices[endpoint];
                for (t, sign) in [(Some(edge.t_minus), 1.0), (edge.t_plus, -1.0)] {
                    let Some(t) = t else { continue };
                    let Some(base) = dofd.dof(region, t, 0) else { continue };
                    if let Some(loc) = mesh.triangles[t].iter().position(|&x| x == node) {
                        r[base + loc] += mean * sign * integral;
                    }
                }
            }
        }
    }
    Ok(r)
}

fn region_enum(region: u8) -> Region {
    if region == 1 {
        Region::R1
    } else {
        Region::R2
    }
}

/// Sparse triplets of the b_h matrix: rows D_h dofs, columns multiplier
/// coordinates.
pub fn b_matrix_triplets(
    layout: &MultiplierLayout,
    k: &DiffusionData,
    mesh: &TriangleMesh,
    dofd: &DofHandlerD,
) -> Vec<(usize, usize, f64)> {
    let mut triplets = Vec::new();
    for (s, &(region, e)) in layout.slots.iter().enumerate() {
        let edge = &mesh.edges[e];
        let w = k.k(region) * edge.length / 2.0;
        for endpoint in 0..2 {
            let node = edge.vertices[endpoint];
            let col = 2 * s + endpoint;
            for (t, sign) in [(Some(edge.t_minus), 1.0), (edge.t_plus, -1.0)] {
                let Some(t) = t else { continue };
                let base = dofd
                    .dof(region, t, 0)
                    .expect("edge of F_h^i has neighbors in T_h^i");
                let loc = mesh.triangles[t]
                    .iter()
                    .position(|&x| x == node)
                    .expect("edge endpoint is a vertex of its neighbor");
                triplets.push((base + loc, col, w * sign));
            }
        }
    }
    triplets
}

/// Computes theta_h from per-node patch least-squares systems.
pub fn compute_multipliers_local(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    dofd: &DofHandlerD,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<MultiplierField> {
    let layout = MultiplierLayout::build(mesh, cut);
    let rhs = mixed_rhs_residual(u, mesh, cut, dofc, dofd, problem, cfg)?;
    let k = problem.diffusion;
    let mut theta = MultiplierField::zero(layout);

    let mut vertex_tris: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
    for t in 0..mesh.n_triangles() {
        for &v in &mesh.triangles[t] {
            vertex_tris[v].push(t);
        }
    }
    let mut vertex_edges: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        vertex_edges[edge.vertices[0]].push(e);
        vertex_edges[edge.vertices[1]].push(e);
    }
    let mut interior = [
        vec![false; mesh.n_vertices()],
        vec![false; mesh.n_vertices()],
    ];
    for i in 0..2usize {
        for v in interior_nodes(mesh, cut, (i + 1) as u8) {
            interior[i][v] = true;
        }
    }

    for i in 0..2usize {
        let region = (i + 1) as u8;
        for node in region_nodes(mesh, cut, region) {
            let edges: Vec<usize> = vertex_edges[node]
                .iter()
                .copied()
                .filter(|&e| cut.edge_in_region(e, region))
                .collect();
            let tris: Vec<usize> = vertex_tris[node]
                .iter()
                .copied()
                .filter(|&t| cut.in_region(t, region))
                .collect();
            if edges.is_empty() {
                continue;
            }
            let n_rows = tris.len() + usize::from(interior[i][node]);
            let mut a = DMatrix::<f64>::zeros(n_rows, edges.len());
            let mut b = DVector::<f64>::zeros(n_rows);
            for (row, &t) in tris.iter().enumerate() {
                let loc = mesh.triangles[t].iter().position(|&x| x == node).unwrap();
                b[row] = rhs[dofd.dof(region, t, 0).unwrap() + loc];
                for (col, &e) in edges.iter().enumerate() {
                    if mesh.tri_edges[t].contains(&e) {
                        let eps = mesh.edge_sign(t, e);
                        a[(row, col)] = eps * k.k(region) * mesh.edges[e].length / 2.0;
                    }
                }
            }
            if interior[i][node] {
                let row = tris.len();
                let patch = mesh.edge_patch(node)?;
                for (col, &e) in edges.iter().enumerate() {
                    let s = patch
                        .iter()
                        .find(|x| x.0 == e)
                        .expect("incident edge in patch")
                        .1;
                    a[(row, col)] = s as f64 * mesh.edges[e].length;
                }
            }
            let scale_b = b.amax().max(1.0);
            let svd = a.clone().svd(true, true);
            let sigma_max = svd.singular_values.amax();
            let x = svd
                .solve(&b, (sigma_max * 1e-13).max(f64::MIN_POSITIVE))
                .map_err(|e| Error::SingularSystem(e.to_string()))?;
            let residual = (&a * &x - &b).amax();
            let tol = 1e-9 * scale_b;
            if residual > tol {
                return Err(Error::PatchInconsistency {
                    subdomain: region,
                    node,
                    residual,
                    tolerance: tol,
                });
            }
            for (col, &e) in edges.iter().enumerate() {
                let c = theta
                    .layout
                    .coord(region, e, endpoint_index(mesh, e, node))
                    .unwrap();
                theta.values[c] = x[col];
            }
        }
    }
    Ok(theta)
}

/// Residuals of both mixed equations.
#[derive(Debug, Clone, Copy)]
pub struct MixedReport {
    /// max_j |l_h(v_j) - a~_h(u_h, v_j) - b_h(theta, v_j)|
    pub eq1_residual: f64,
    /// max over multiplier coordinates of |b_h(mu, u_h)|
    pub eq2_residual: f64,
    /// Magnitude of the data, for relative comparisons.
    pub scale: f64,
}

pub fn verify_mixed_equivalence(
    u: &PrimalSolution,
    theta: &MultiplierField,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    dofd: &DofHandlerD,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<MixedReport> {
    let rhs = mixed_rhs_residual(u, mesh, cut, dofc, dofd, problem, cfg)?;
    let triplets = b_matrix_triplets(&theta.layout, &problem.diffusion, mesh, dofd);
    let mut b_theta = vec![0.0; dofd.n_dofs()];
    let mut bt_u = vec![0.0; theta.layout.n_coords()];
    // Equation 2 is posed for the homogeneous part of u_h: on boundary
    // edges the jump is taken relative to the solution's own Dirichlet
    // trace, so subtract the nodal boundary lifting before applying B^T.
    let lift = PrimalSolution {
        values: dofc
            .dirichlet
            .iter()
            .map(|d| d.unwrap_or(0.0))
            .collect(),
        solver_backward_error: 0.0,
    };
    let mut u_d = dofd.embed_primal(mesh, dofc, u);
    let g_d = dofd.embed_primal(mesh, dofc, &lift);
    for (a, b) in u_d.iter_mut().zip(&g_d) {
        *a -= b;
    }
    for &(row, col, v) in &triplets {
        b_theta[row] += v * theta.values[col];
        bt_u[col] += v * u_d[row];
    }
    let eq1 = rhs
        .iter()
        .zip(&b_theta)
        .fold(0.0f64, |m, (r, b)| m.max((r - b).abs()));
    let eq2 = bt_u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = rhs
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(b_theta.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .max(1.0);
    Ok(MixedReport {
        eq1_residual: eq1,
        eq2_residual: eq2,
        scale,
    })
}

/// Gram matrix of the D_h norm (broken energy + ghost and interface
/// jumps + edge jump penalty), dense.
fn d_norm_gram(
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofd: &DofHandlerD,
    k: &DiffusionData,
) -> DMatrix<f64> {
    let n = dofd.n_dofs();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &t in &cut.cells[i] {
            let base = dofd.dof(region, t, 0).unwrap();
            let grads = mesh.hat_gradients(t);
            let area = cut.region_area(mesh, t, region);
            for a in 0..3 {
                for b in 0..3 {
                    m[(base + a, base + b)] +=
                        ki * area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                }
            }
        }
    }
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &e in &cut.ghost_edges[i] {
            let edge = &mesh.edges[e];
            let tp = edge.t_plus.unwrap();
            let mut coef: Vec<(usize, f64)> = Vec::with_capacity(6);
            for (t, sign) in [(edge.t_minus, 1.0), (tp, -1.0)] {
                let base = dofd.dof(region, t, 0).unwrap();
                let grads = mesh.hat_gradients(t);
                for loc in 0..3 {
                    coef.push((
                        base + loc,
                        sign * (grads[loc][0] * edge.n[0] + grads[loc][1] * edge.n[1]),
                    ));
                }
            }
            let w = ki * edge.length * edge.length;
            for &(da, ca) in &coef {
                for &(db, cb) in &coef {
                    m[(da, db)] += w * ca * cb;
                }
            }
        }
    }
    for cell in &cut.cut_cells {
        let t = cell.element;
        let w_pen = k.k_gamma() / mesh.h[t];
        let rule = interface_quadrature(cut, t, 2).unwrap();
        let bases = [dofd.dof(1, t, 0).unwrap(), dofd.dof(2, t, 0).unwrap()];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let lambda = mesh.barycentric(t, *p);
            let mut coef: Vec<(usize, f64)> = Vec::with_capacity(6);
            for i in 0..2usize {
                let sign = if i == 0 { 1.0 } else { -1.0 };
                for loc in 0..3 {
                    coef.push((bases[i] + loc, sign * lambda[loc]));
                }
            }
            for &(da, ca) in &coef {
                for &(db, cb) in &coef {
                    m[(da, db)] += w_pen * w * ca * cb;
                }
            }
        }
    }
    // Edge jump penalty k_i / h_F ||[[v]]||^2_F over full edges; with
    // endpoint jumps (j0, j1): ||[[v]]||^2_F = h_F (j0^2 + j0 j1 + j1^2)/3.
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for (e, edge) in mesh.edges.iter().enumerate() {
            if !cut.edge_in_region(e, region) {
                continue;
            }
            let mut c0: Vec<(usize, f64)> = Vec::with_capacity(2);
            let mut c1: Vec<(usize, f64)> = Vec::with_capacity(2);
            for (t, sign) in [(Some(edge.t_minus), 1.0), (edge.t_plus, -1.0)] {
                let Some(t) = t else { continue };
                let base = dofd.dof(region, t, 0).unwrap();
                for (node, c) in [(edge.vertices[0], &mut c0), (edge.vertices[1], &mut c1)] {
                    let loc = mesh.triangles[t].iter().position(|&x| x == node).unwrap();
                    c.push((base + loc, sign));
                }
            }
            let w = ki / 6.0;
            for (ca, cb, factor) in
                [(&c0, &c0, 2.0), (&c1, &c1, 2.0), (&c0, &c1, 1.0), (&c1, &c0, 1.0)]
            {
                for &(da, va) in ca.iter() {
                    for &(db, vb) in cb.iter() {
                        m[(da, db)] += w * factor * va * vb;
                    }
                }
            }
        }
    }
    m
}

/// Dense Gram matrix of the M_h norm ||mu||^2 = sum k_i h_F ||mu^i||^2_F.
fn m_norm_gram(layout: &MultiplierLayout, mesh: &TriangleMesh, k: &DiffusionData) -> DMatrix<f64> {
    let n = layout.n_coords();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (s, &(region, e)) in layout.slots.iter().enumerate() {
        let h = mesh.edges[e].length;
        let w = k.k(region) * h * h / 6.0;
        m[(2 * s, 2 * s)] = 2.0 * w;
        m[(2 * s + 1, 2 * s + 1)] = 2.0 * w;
        m[(2 * s, 2 * s + 1)] = w;
        m[(2 * s + 1, 2 * s)] = w;
    }
    m
}

/// Orthonormal basis of M_h inside the full multiplier coordinate space:
/// null space of the interior-node constraint matrix.
pub fn constrained_basis(
    layout: &MultiplierLayout,
    mesh: &TriangleMesh,
    cut: &CutTopology,
) -> DMatrix<f64> {
    let n = layout.n_coords();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..2usize {
        let region = (i + 1) as u8;
        for node in interior_nodes(mesh, cut, region) {
            let mut row = Vec::new();
            for (e, s) in mesh.edge_patch(node).unwrap() {
                if let Some(c) = layout.coord(region, e, endpoint_index(mesh, e, node)) {
                    row.push((c, s as f64 * mesh.edges[e].length));
                }
            }
            if !row.is_empty() {
                rows.push(row);
            }
        }
    }
    if rows.is_empty() {
        return DMatrix::identity(n, n);
    }
    let mut ctc = DMatrix::<f64>::zeros(n, n);
    for row in &rows {
        for &(a, va) in row {
            for &(b, vb) in row {
                ctc[(a, b)] += va * vb;
            }
        }
    }
    // Constraint rows have disjoint coordinate supports, so the nonzero
    // eigenvalues of C^T C are the squared row norms, O(h_F^2); exact
    // null directions only carry rounding noise well below this cutoff.
    let eig = nalgebra::SymmetricEigen::new(ctc);
    let lam_max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..n)
        .filter(|&j| eig.eigenvalues[j] <= 1e-12 * lam_max)
        .collect();
    let mut z = DMatrix::<f64>::zeros(n, keep.len());
    for (col, &j) in keep.iter().enumerate() {
        z.set_column(col, &eig.eigenvectors.column(j));
    }
    z
}

/// Discrete inf-sup constant of b_h over M_h x D_h: square root of the
/// smallest nonzero eigenvalue of the Schur operator in the M_h norm.
/// Dense computation, guarded to small meshes.
pub fn compute_infsup_constant(
    mesh: &TriangleMesh,
    cut: &CutTopology,
    k: &DiffusionData,
) -> Result<f64> {
    let dofd = DofHandlerD::build(mesh, cut);
    let n_d = dofd.n_dofs();
    const GUARD: usize = 3000;
    if n_d > GUARD {
        return Err(Error::SizeGuardExceeded {
            actual: n_d,
            limit: GUARD,
        });
    }
    let layout = MultiplierLayout::build(mesh, cut);
    let n_m = layout.n_coords();
    let mut b = DMatrix::<f64>::zeros(n_d, n_m);
    for (r, c, v) in b_matrix_triplets(&layout, k, mesh, &dofd) {
        b[(r, c)] += v;
    }
    let z = constrained_basis(&layout, mesh, cut);
    if z.ncols() == 0 {
        return Err(Error::SingularSystem("M_h is empty".into()));
    }
    let m_d = d_norm_gram(mesh, cut, &dofd, k);
    let m_m = m_norm_gram(&layout, mesh, k);
    let bz = &b * &z;
    let chol_d = nalgebra::Cholesky::new(m_d)
        .ok_or_else(|| Error::SingularSystem("D_h Gram matrix not SPD".into()))?;
    let y = chol_d.solve(&bz);
    let schur = bz.transpose() * y;
    let g = z.transpose() * m_m * &z;
    let chol_g = nalgebra::Cholesky::new(g)
        .ok_or_else(|| Error::SingularSystem("M_h Gram matrix not SPD".into()))?;
    // Reduce S w = lambda G w to a standard symmetric problem.
    let l = chol_g.l();
    let linv_s = l
        .clone()
        .solve_lower_triangular(&schur)
        .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))?;
    let w = l
        .solve_lower_triangular(&linv_s.transpose())
        .ok_or_else(|| Error::SingularSystem("triangular solve failed".into()))?;
    let sym = 0.5 * (&w + w.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lam_max = eig.eigenvalues.amax();
    let mut lam_min = f64::INFINITY;
    for j in 0..eig.eigenvalues.len() {
        let lam = eig.eigenvalues[j];
        if lam > 1e-10 * lam_max {
            lam_min = lam_min.min(lam);
        }
    }
    if !lam_min.is_finite() {
        return Err(Error::SingularSystem("no nonzero Schur eigenvalues".into()));
    }
    Ok(lam_min.sqrt())
}
