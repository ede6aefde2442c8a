//! A posteriori error estimation: the flux estimator eta, the interface
//! estimator eta_Gamma, data oscillation, the conforming interpolant
//! behind the reliability bound, and the exact energy error for
//! manufactured solutions.

use crate::cut::{interface_quadrature, subcell_quadrature, CutTopology, Region};
use crate::error::Result;
use crate::flux::{project_source, FluxField};
use crate::mesh::TriangleMesh;
use crate::primal::{DofHandlerC, PrimalSolution};
use crate::problem::{DiffusionData, ProblemData, SolverConfig};
use crate::quadrature;

/// Per-element and global estimator values of one solve.
pub struct EstimatorReport {
    /// eta_T = ||K^{-1/2}(sigma - K grad u_h)||_T.
    pub eta_t: Vec<f64>,
    /// Interface estimator eta~_T (zero on uncut elements).
    pub eta_tilde: Vec<f64>,
    /// Data oscillation contribution (h_T / sqrt(delta_T)) ||f - pi f||_T.
    pub osc_t: Vec<f64>,
    pub eta: f64,
    pub eta_gamma: f64,
    pub eps: f64,
    /// Exact energy error when the problem carries an exact solution.
    pub error: Option<f64>,
    /// |I_h u_h - u_h|_{1,K,h}.
    pub gap: f64,
    /// (eta + eta_gamma) / error.
    pub effectivity: Option<f64>,
}

impl EstimatorReport {
    pub fn write_csv(&self, path: &std::path::Path, cut: &CutTopology) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "element,class,eta_t,eta_tilde,osc_t")?;
        for t in 0..self.eta_t.len() {
            let class = match cut.class[t] {
                crate::cut::CellClass::In1 => "in1",
                crate::cut::CellClass::In2 => "in2",
                crate::cut::CellClass::Cut => "cut",
            };
            writeln!(
                out,
                "{t},{class},{},{},{}",
                self.eta_t[t], self.eta_tilde[t], self.osc_t[t]
            )?;
        }
        Ok(())
    }
}

/// eta_T^2 = sum_i int_{T cap Omega^i} k_i^{-1} |sigma - k_i grad u_h^i|^2.
pub fn compute_eta(
    flux: &FluxField,
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    k: &DiffusionData,
) -> Result<(Vec<f64>, f64)> {
    // RT1 flux is quadratic, so |tau|^2 has degree 4.
    let degree = if flux.order == 0 { 2 } else { 4 };
    let mut eta_t = Vec::with_capacity(mesh.n_triangles());
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let mut acc = 0.0;
        for region in [1u8, 2u8] {
            if !cut.in_region(t, region) {
                continue;
            }
            let ki = k.k(region);
            let gu = u.gradient(mesh, dofc, t, region).unwrap();
            let rule = subcell_quadrature(mesh, cut, t, region_enum(region), degree)?;
            acc += rule.integrate(|x, y| {
                let s = flux.value(t, [x, y]);
                let dx = s[0] - ki * gu[0];
                let dy = s[1] - ki * gu[1];
                (dx * dx + dy * dy) / ki
            });
        }
        let v = acc.max(0.0).sqrt();
        eta_t.push(v);
        total += v * v;
    }
    Ok((eta_t, total.sqrt()))
}

/// eta~_T^2 = (h_T k_Gamma) / (|Gamma_T| h_T^min) ||[u_h]||^2_{Gamma_T}.
pub fn compute_eta_gamma(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    k: &DiffusionData,
) -> Result<(Vec<f64>, f64)> {
    let mut eta_tilde = vec![0.0; mesh.n_triangles()];
    let mut total = 0.0;
    for cell in &cut.cut_cells {
        let t = cell.element;
        let rule = interface_quadrature(cut, t, 2)?;
        let jump_sq = rule.integrate(|x, y| {
            let j = u.value_at(mesh, dofc, t, 1, [x, y]).unwrap()
                - u.value_at(mesh, dofc, t, 2, [x, y]).unwrap();
            j * j
        });
        let sq = mesh.h[t] * k.k_gamma() / (cell.gamma_length * cell.h_min) * jump_sq.max(0.0);
        eta_tilde[t] = sq.sqrt();
        total += sq;
    }
    Ok((eta_tilde, total.sqrt()))
}

/// eps(Omega)^2 = sum_T (h_T^2 / delta_T) ||f - pi^m_T f||^2_T, with the
/// projection over the full element (both material regions).
pub fn compute_data_oscillation(
    problem: &ProblemData,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    m: usize,
    degree: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut osc = Vec::with_capacity(mesh.n_triangles());
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let pf = project_source(mesh, cut, problem, t, m, degree)?;
        let centroid = mesh.centroid(t);
        let h = mesh.h[t];
        let mut mismatch = 0.0;
        for region in [1u8, 2u8] {
            let rule = subcell_quadrature(mesh, cut, t, region_enum(region), degree)?;
            mismatch += rule.integrate(|x, y| {
                let proj = pf[0] + pf[1] * (x - centroid[0]) / h + pf[2] * (y - centroid[1]) / h;
                let d = problem.source(region, x, y) - proj;
                d * d
            });
        }
        let delta = problem.diffusion.delta_t(cut, t);
        let sq = h * h / delta * mismatch.max(0.0);
        osc.push(sq.sqrt());
        total += sq;
    }
    Ok((osc, total.sqrt()))
}

/// Continuous piecewise-linear interpolant on the split mesh: uncut
/// elements keep u_h; each cut element is split into the triangular part
/// and two quadrilateral-part triangles, with the weighted mean
/// {u_h}* = omega_2 u_h^1 + omega_1 u_h^2 at the intersection points.
pub struct ConformingInterpolant {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Region id of each split triangle.
    pub region: Vec<u8>,
    /// Background element of each split triangle.
    pub parent: Vec<usize>,
    /// Nodal values on the split mesh.
    pub values: Vec<f64>,
}

impl ConformingInterpolant {
    pub fn value_on(&self, split_tri: usize, p: [f64; 2]) -> f64 {
        let tri = self.triangles[split_tri];
        let v = [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ];
        let a2 = 2.0 * quadrature::signed_area(&v);
        let sub = |a0: [f64; 2], a1: [f64; 2]| -> f64 {
            (a1[0] - a0[0]) * (p[1] - a0[1]) - (p[0] - a0[0]) * (a1[1] - a0[1])
        };
        let lam = [sub(v[1], v[2]) / a2, sub(v[2], v[0]) / a2, sub(v[0], v[1]) / a2];
        (0..3).map(|i| lam[i] * self.values[tri[i]]).sum()
    }

    pub fn gradient_on(&self, split_tri: usize) -> [f64; 2] {
        let tri = self.triangles[split_tri];
        let v = [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ];
        let a2 = 2.0 * quadrature::signed_area(&v);
        let grads = [
            [(v[1][1] - v[2][1]) / a2, (v[2][0] - v[1][0]) / a2],
            [(v[2][1] - v[0][1]) / a2, (v[0][0] - v[2][0]) / a2],
            [(v[0][1] - v[1][1]) / a2, (v[1][0] - v[0][0]) / a2],
        ];
        let mut g = [0.0, 0.0];
        for i in 0..3 {
            g[0] += self.values[tri[i]] * grads[i][0];
            g[1] += self.values[tri[i]] * grads[i][1];
        }
        g
    }

    /// Max jump of the interpolant across internal split-mesh edges,
    /// sampled at three points per edge.
    pub fn max_edge_jump(&self) -> f64 {
        use std::collections::HashMap;
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for loc in 0..3 {
                let (a, b) = (tri[loc], tri[(loc + 1) % 3]);
                owners.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut worst = 0.0f64;
        for ((a, b), ts) in owners {
            if ts.len() != 2 {
                continue;
            }
            let pa = self.vertices[a];
            let pb = self.vertices[b];
            for frac in [0.25, 0.5, 0.75] {
                let p = [
                    pa[0] + frac * (pb[0] - pa[0]),
                    pa[1] + frac * (pb[1] - pa[1]),
                ];
                let jump = self.value_on(ts[0], p) - self.value_on(ts[1], p);
                worst = worst.max(jump.abs());
            }
        }
        worst
    }
}

/// Builds I_h u_h and returns it with the gap |I_h u_h - u_h|_{1,K,h}.
pub fn build_conforming_interpolant(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    k: &DiffusionData,
) -> Result<(ConformingInterpolant, f64)> {
    let mut vertices = mesh.vertices.clone();
    let mut values = vec![0.0; mesh.n_vertices()];
    for v in 0..mesh.n_vertices() {
        let region = cut.vertex_region[v];
        values[v] = u.values[dofc.dof(region, v).expect("owning-region dof")];
    }
    // One split vertex per cut edge with the weighted mean of the traces.
    let mut edge_vertex = vec![None; mesh.n_edges()];
    for (e, ec) in cut.edge_cut.iter().enumerate() {
        let Some(ec) = ec else { continue };
        let t = mesh.edges[e].t_minus;
        let p = ec.zero;
        let u1 = u
            .value_at(mesh, dofc, t, 1, p)
            .expect("cut edge neighbor lives in both regions");
        let u2 = u.value_at(mesh, dofc, t, 2, p).unwrap();
        vertices.push(p);
        values.push(k.omega2() * u1 + k.omega1() * u2);
        edge_vertex[e] = Some(vertices.len() - 1);
    }
    let mut triangles = Vec::new();
    let mut region = Vec::new();
    let mut parent = Vec::new();
    for t in 0..mesh.n_triangles() {
        match cut.cut_cell(t) {
            None => {
                triangles.push(mesh.triangles[t]);
                region.push(match cut.class[t] {
                    crate::cut::CellClass::In1 => 1,
                    _ => 2,
                });
                parent.push(t);
            }
            Some(cell) => {
                let tri = mesh.triangles[t];
                let a1 = tri[cell.apex_local];
                let a2 = tri[(cell.apex_local + 1) % 3];
                let a3 = tri[(cell.apex_local + 2) % 3];
                let m = edge_vertex[cell.m_edge].expect("cut edge has split vertex");
                let n = edge_vertex[cell.n_edge].expect("cut edge has split vertex");
                let quad_region = if cell.apex_region == 1 { 2 } else { 1 };
                triangles.push([a1, m, n]);
                region.push(cell.apex_region);
                parent.push(t);
                let quads: [[usize; 3]; 2] = if cell.diag_from_a3 {
                    [[m, a2, a3], [m, a3, n]]
                } else {
                    [[m, a2, n], [a2, a3, n]]
                };
                for q in quads {
                    triangles.push(q);
                    region.push(quad_region);
                    parent.push(t);
                }
            }
        }
    }
    let interp = ConformingInterpolant {
        vertices,
        triangles,
        region,
        parent,
        values,
    };
    // Gap: both I_h and u_h^r are linear on each split triangle; only cut
    // elements contribute.
    let mut gap_sq = 0.0;
    for s in 0..interp.triangles.len() {
        let t = interp.parent[s];
        if !cut.is_cut(t) {
            continue;
        }
        let r = interp.region[s];
        let gi = interp.gradient_on(s);
        let gu = u.gradient(mesh, dofc, t, r).unwrap();
        let d = [gi[0] - gu[0], gi[1] - gu[1]];
        let verts = [
            interp.vertices[interp.triangles[s][0]],
            interp.vertices[interp.triangles[s][1]],
            interp.vertices[interp.triangles[s][2]],
        ];
        let area = quadrature::signed_area(&verts).abs();
        gap_sq += k.k(r) * area * (d[0] * d[0] + d[1] * d[1]);
    }
    Ok((interp, gap_sq.sqrt()))
}

/// |u - u_h|_{1,K,h} by sub-cell quadrature against the exact per-region
/// gradients; None when the problem has no exact solution.
pub fn exact_energy_error(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    problem: &ProblemData,
    degree: usize,
) -> Result<Option<f64>> {
    let Some(exact) = problem.exact.as_ref() else {
        return Ok(None);
    };
    let k = problem.diffusion;
    let mut acc = 0.0;
    for region in [1u8, 2u8] {
        let ki = k.k(region);
        for &t in &cut.cells[region as usize - 1] {
            let gu = u.gradient(mesh, dofc, t, region).unwrap();
            let rule = subcell_quadrature(mesh, cut, t, region_enum(region), degree)?;
            acc += ki
                * rule.integrate(|x, y| {
                    let ge = exact.gradient(region, x, y);
                    let dx = ge[0] - gu[0];
                    let dy = ge[1] - gu[1];
                    dx * dx + dy * dy
                });
        }
    }
    Ok(Some(acc.max(0.0).sqrt()))
}

/// Assembles the full estimator report of one solve.
pub fn assemble_report(
    flux: &FluxField,
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<EstimatorReport> {
    let k = problem.diffusion;
    let (eta_t, eta) = compute_eta(flux, u, mesh, cut, dofc, &k)?;
    let (eta_tilde, eta_gamma) = compute_eta_gamma(u, mesh, cut, dofc, &k)?;
    let (osc_t, eps) =
        compute_data_oscillation(problem, mesh, cut, cfg.rt_order, cfg.quad_source)?;
    let error = exact_energy_error(u, mesh, cut, dofc, problem, cfg.quad_source)?;
    let (_, gap) = build_conforming_interpolant(u, mesh, cut, dofc, &k)?;
    let effectivity = error.map(|e| (eta + eta_gamma) / e.max(f64::MIN_POSITIVE));
    Ok(EstimatorReport {
        eta_t,
        eta_tilde,
        osc_t,
        eta,
        eta_gamma,
        eps,
        error,
        gap,
        effectivity,
    })
}

fn region_enum(region: u8) -> Region {
    if region == 1 {
        Region::R1
    } else {
        Region::R2
    }
}
