//! Nitsche CutFEM primal problem in the doubled conforming space
//! C_h = C_h^1 x C_h^2 with ghost-penalty stabilization.

use crate::cut::{subcell_quadrature, interface_quadrature, CutTopology, Region};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::problem::{BoundaryMode, ProblemData, SolverConfig};
use crate::sparse::{CsrMatrix, EnvelopeLdlt};

/// Nodal DOFs of the doubled space. A vertex of Omega_h^i normally
/// carries one DOF per subdomain it belongs to; when the interface
/// weaves around a vertex so that its T_h^i star splits into several
/// wedges connected only through edges outside F_h^i, each wedge gets
/// its own DOF. (The wedges meet at a single point, so H1 conformity on
/// Omega_h^i does not couple them through any edge the method can test;
/// a shared value would break the kernel characterization of b_h and the
/// local solvability of the multiplier patches.)
pub struct DofHandlerC {
    /// Per region: per element, the dof ids of its three vertices.
    pub elem_dofs: [Vec<Option<[usize; 3]>>; 2],
    /// dof -> (region, vertex).
    pub dofs: Vec<(u8, usize)>,
    /// Dirichlet value for constrained dofs.
    pub dirichlet: Vec<Option<f64>>,
    /// Per region: vertex -> first wedge dof (the unique one away from
    /// broken fans).
    pub vertex_dof: [Vec<Option<usize>>; 2],
}

impl DofHandlerC {
    pub fn build(
        mesh: &TriangleMesh,
        cut: &CutTopology,
        problem: &ProblemData,
        boundary: BoundaryMode,
    ) -> Result<DofHandlerC> {
        let mut vertex_tris: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
        for t in 0..mesh.n_triangles() {
            for &v in &mesh.triangles[t] {
                vertex_tris[v].push(t);
            }
        }
        let mut elem_dofs = [
            vec![None; mesh.n_triangles()],
            vec![None; mesh.n_triangles()],
        ];
        let mut dofs: Vec<(u8, usize)> = Vec::new();
        let mut dirichlet: Vec<Option<f64>> = Vec::new();
        let mut vertex_dof = [
            vec![None; mesh.n_vertices()],
            vec![None; mesh.n_vertices()],
        ];
        for i in 0..2usize {
            let region = (i + 1) as u8;
            for &t in &cut.cells[i] {
                elem_dofs[i][t] = Some([usize::MAX; 3]);
            }
            // Boundary edges of F_h^i carry the Dirichlet condition.
            let mut boundary_edge_at = vec![false; mesh.n_vertices()];
            for (e, edge) in mesh.edges.iter().enumerate() {
                if edge.is_boundary() && cut.edge_in_region(e, region) {
                    boundary_edge_at[edge.vertices[0]] = true;
                    boundary_edge_at[edge.vertices[1]] = true;
                }
            }
            for v in 0..mesh.n_vertices() {
                let star: Vec<usize> = vertex_tris[v]
                    .iter()
                    .copied()
                    .filter(|&t| cut.in_region(t, region))
                    .collect();
                if star.is_empty() {
                    continue;
                }
                // Wedge components: star elements joined through shared
                // edges at v that belong to F_h^i.
                let mut component = vec![usize::MAX; star.len()];
                let mut n_comp = 0usize;
                for seed in 0..star.len() {
                    if component[seed] != usize::MAX {
                        continue;
                    }
                    let comp = n_comp;
                    n_comp += 1;
                    let mut stack = vec![seed];
                    component[seed] = comp;
                    while let Some(j) = stack.pop() {
                        let tj = star[j];
                        for (l, &other) in star.iter().enumerate() {
                            if component[l] != usize::MAX {
                                continue;
                            }
                            let shared = mesh.tri_edges[tj].iter().any(|&e| {
                                let edge = &mesh.edges[e];
                                edge.vertices.contains(&v)
                                    && cut.edge_in_region(e, region)
                                    && mesh.tri_edges[other].contains(&e)
                            });
                            if shared {
                                component[l] = comp;
                                stack.push(l);
                            }
                        }
                    }
                }
                for comp in 0..n_comp {
                    let dof = dofs.len();
                    dofs.push((region, v));
                    if comp == 0 {
                        vertex_dof[i][v] = Some(dof);
                    }
                    // Constrained when the wedge touches a Dirichlet
                    // boundary edge at v.
                    let touches_boundary = boundary_edge_at[v]
                        && star.iter().enumerate().any(|(j, &t)| {
                            component[j] == comp
                                && mesh.tri_edges[t].iter().any(|&e| {
                                    let edge = &mesh.edges[e];
                                    edge.is_boundary()
                                        && edge.vertices.contains(&v)
                                        && cut.edge_in_region(e, region)
                                })
                        });
                    if touches_boundary {
                        let value = match boundary {
                            BoundaryMode::Homogeneous => 0.0,
                            BoundaryMode::InterpolatedExact => {
                                let exact = problem.exact.as_ref().ok_or_else(|| {
                                    Error::invalid(
                                        "interpolated-exact boundary needs an exact solution",
                                    )
                                })?;
                                let p = mesh.vertices[v];
                                exact.value(region, p[0], p[1])
                            }
                        };
                        dirichlet.push(Some(value));
                    } else {
                        dirichlet.push(None);
                    }
                    for (j, &t) in star.iter().enumerate() {
                        if component[j] != comp {
                            continue;
                        }
                        let loc = mesh.triangles[t].iter().position(|&x| x == v).unwrap();
                        if let Some(slot) = elem_dofs[i][t].as_mut() {
                            slot[loc] = dof;
                        }
                    }
                }
            }
        }
        for i in 0..2usize {
            for slot in elem_dofs[i].iter().flatten() {
                debug_assert!(slot.iter().all(|&d| d != usize::MAX));
            }
        }
        Ok(DofHandlerC {
            elem_dofs,
            dofs,
            dirichlet,
            vertex_dof,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn n_free(&self) -> usize {
        self.dirichlet.iter().filter(|d| d.is_none()).count()
    }

    /// First wedge dof of (region, vertex); unique away from broken fans.
    pub fn dof(&self, region: u8, vertex: usize) -> Option<usize> {
        self.vertex_dof[region as usize - 1][vertex]
    }

    /// Dofs of the three vertices of `t` in the given region.
    pub fn element_dofs(&self, _mesh: &TriangleMesh, t: usize, region: u8) -> Option<[usize; 3]> {
        self.elem_dofs[region as usize - 1][t]
    }
}

/// Coefficient vector over [`DofHandlerC`] with element-wise evaluation.
pub struct PrimalSolution {
    pub values: Vec<f64>,
    /// Normwise backward error reported by the linear solver.
    pub solver_backward_error: f64,
}

impl PrimalSolution {
    pub fn gradient(
        &self,
        mesh: &TriangleMesh,
        dofc: &DofHandlerC,
        t: usize,
        region: u8,
    ) -> Option<[f64; 2]> {
        let dofs = dofc.element_dofs(mesh, t, region)?;
        let grads = mesh.hat_gradients(t);
        let mut g = [0.0, 0.0];
        for a in 0..3 {
            let u = self.values[dofs[a]];
            g[0] += u * grads[a][0];
            g[1] += u * grads[a][1];
        }
        Some(g)
    }

    pub fn value_at(
        &self,
        mesh: &TriangleMesh,
        dofc: &DofHandlerC,
        t: usize,
        region: u8,
        p: [f64; 2],
    ) -> Option<f64> {
        let dofs = dofc.element_dofs(mesh, t, region)?;
        let lambda = mesh.barycentric(t, p);
        Some((0..3).map(|a| self.values[dofs[a]] * lambda[a]).sum())
    }
}

/// Assembled system. The unconstrained matrix and load are kept next to
/// the eliminated ones so tests can apply a_h and l_h directly.
pub struct SparseLinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub full_matrix: CsrMatrix,
    pub full_rhs: Vec<f64>,
    pub dirichlet: Vec<Option<f64>>,
    pub solver_tol: f64,
}

impl SparseLinearSystem {
    /// a_h(u, w) through the unconstrained matrix.
    pub fn apply_a(&self, u: &[f64], w: &[f64]) -> f64 {
        let mut au = vec![0.0; self.full_matrix.n];
        self.full_matrix.matvec(u, &mut au);
        w.iter().zip(&au).map(|(a, b)| a * b).sum()
    }

    /// l_h(w) through the unconstrained load vector.
    pub fn apply_l(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.full_rhs).map(|(a, b)| a * b).sum()
    }

    /// Scale for residual comparisons.
    pub fn scale(&self) -> f64 {
        self.full_matrix.max_abs().max(
            self.full_rhs
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        )
    }
}

/// Assembles the Nitsche CutFEM bilinear form and load. Stiffness terms
/// use exact closed forms (P1 gradients are constant per sub-cell); the
/// source uses sub-cell quadrature at `cfg.quad_source`.
pub fn assemble_primal(
    mesh: &TriangleMesh,
    cut: &CutTopology,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<(SparseLinearSystem, DofHandlerC)> {
    cfg.validate()?;
    let dofc = DofHandlerC::build(mesh, cut, problem, cfg.boundary)?;
    let n = dofc.n_dofs();
    let k = problem.diffusion;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; n];

    // Volume terms and source.
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &t in &cut.cells[i] {
            let dofs = dofc
                .element_dofs(mesh, t, region)
                .expect("element of T_h^i has dofs");
            let grads = mesh.hat_gradients(t);
            let area = cut.region_area(mesh, t, region);
            for a in 0..3 {
                for b in 0..3 {
                    let v = ki * area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                    triplets.push((dofs[a], dofs[b], v));
                }
            }
            let rule = subcell_quadrature(mesh, cut, t, region_of(region), cfg.quad_source)?;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let lambda = mesh.barycentric(t, *p);
                let f = problem.source(region, p[0], p[1]);
                for a in 0..3 {
                    rhs[dofs[a]] += w * f * lambda[a];
                }
            }
        }
    }

    // Ghost penalty over full edges of F_g^i.
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &e in &cut.ghost_edges[i] {
            let edge = &mesh.edges[e];
            let tp = edge.t_plus.expect("ghost edges are interior");
            let coef = ghost_jump_coefficients(mesh, &dofc, e, edge.t_minus, tp, region);
            let w = cfg.gamma_g * ki * edge.length * edge.length;
            for &(da, ca) in &coef {
                for &(db, cb) in &coef {
                    triplets.push((da, db, w * ca * cb));
                }
            }
        }
    }

    // Nitsche interface terms on each Gamma_T.
    for cell in &cut.cut_cells {
        let t = cell.element;
        let h_t = mesh.h[t];
        let pen = cfg.gamma * k.k_gamma() / h_t;
        let rule = interface_quadrature(cut, t, 2)?;
        let grads = mesh.hat_gradients(t);
        let nrm = cell.gamma_normal;
        // Slots: (region 1, a) then (region 2, a).
        let mut slots = [[0usize; 3]; 2];
        for i in 0..2 {
            slots[i] = dofc
                .element_dofs(mesh, t, (i + 1) as u8)
                .expect("cut element has dofs in both regions");
        }
        // Constant flux-mean coefficients omega_i k_i (grad lambda . n).
        let omega = [k.omega1(), k.omega2()];
        let mut flux = [[0.0; 3]; 2];
        for i in 0..2 {
            let ki = k.k((i + 1) as u8);
            for a in 0..3 {
                flux[i][a] = omega[i] * ki * (grads[a][0] * nrm[0] + grads[a][1] * nrm[1]);
            }
        }
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let lambda = mesh.barycentric(t, *p);
            // Jump coefficients: [v] = v^1 - v^2.
            let mut jump = [[0.0; 3]; 2];
            for a in 0..3 {
                jump[0][a] = lambda[a];
                jump[1][a] = -lambda[a];
            }
            for ia in 0..2 {
                for a in 0..3 {
                    for ib in 0..2 {
                        for b in 0..3 {
                            let v = w
                                * (pen * jump[ia][a] * jump[ib][b]
                                    - flux[ia][a] * jump[ib][b]
                                    - jump[ia][a] * flux[ib][b]);
                            triplets.push((slots[ia][a], slots[ib][b], v));
                        }
                    }
                }
            }
        }
    }

    let full_matrix = CsrMatrix::from_triplets(n, triplets);
    let full_rhs = rhs.clone();

    // Symmetric Dirichlet elimination.
    let mut bc_triplets: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..n {
        if dofc.dirichlet[r].is_some() {
            bc_triplets.push((r, r, 1.0));
            continue;
        }
        for idx in full_matrix.row_ptr[r]..full_matrix.row_ptr[r + 1] {
            let c = full_matrix.col_idx[idx];
            let v = full_matrix.values[idx];
            match dofc.dirichlet[c] {
                Some(g) => rhs[r] -= v * g,
                None => bc_triplets.push((r, c, v)),
            }
        }
    }
    for r in 0..n {
        if let Some(g) = dofc.dirichlet[r] {
            rhs[r] = g;
        }
    }
    let matrix = CsrMatrix::from_triplets(n, bc_triplets);
    let system = SparseLinearSystem {
        matrix,
        rhs,
        full_matrix,
        full_rhs,
        dirichlet: dofc.dirichlet.clone(),
        solver_tol: cfg.solver_tol,
    };
    Ok((system, dofc))
}

fn region_of(region: u8) -> Region {
    if region == 1 {
        Region::R1
    } else {
        Region::R2
    }
}

/// (dof, coefficient) pairs so that sum(coef * u_dof) equals the jump of
/// the normal derivative of u_h^region across edge `e`.
fn ghost_jump_coefficients(
    mesh: &TriangleMesh,
    dofc: &DofHandlerC,
    e: usize,
    t_minus: usize,
    t_plus: usize,
    region: u8,
) -> Vec<(usize, f64)> {
    let nrm = mesh.edges[e].n;
    let mut out = Vec::with_capacity(6);
    for (t, sign) in [(t_minus, 1.0), (t_plus, -1.0)] {
        let dofs = dofc
            .element_dofs(mesh, t, region)
            .expect("ghost edge neighbors lie in T_h^i");
        let grads = mesh.hat_gradients(t);
        for a in 0..3 {
            out.push((dofs[a], sign * (grads[a][0] * nrm[0] + grads[a][1] * nrm[1])));
        }
    }
    out
}

/// Direct factorization + iterative refinement; Dirichlet values are
/// exact by construction.
pub fn solve_primal(system: &SparseLinearSystem) -> Result<PrimalSolution> {
    let factor = EnvelopeLdlt::factor(&system.matrix)?;
    let (mut values, backward) =
        factor.solve_refined(&system.matrix, &system.rhs, system.solver_tol, 5)?;
    for (i, d) in system.dirichlet.iter().enumerate() {
        if let Some(g) = d {
            values[i] = *g;
        }
    }
    Ok(PrimalSolution {
        values,
        solver_backward_error: backward,
    })
}

/// Broken energy seminorm |v|_{1,K,h} of a field with constant per-region
/// gradients (the natural case for P1 fields).
pub fn energy_seminorm(
    mesh: &TriangleMesh,
    cut: &CutTopology,
    k: &crate::problem::DiffusionData,
    grad: impl Fn(usize, u8) -> Option<[f64; 2]>,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &t in &cut.cells[i] {
            if let Some(g) = grad(t, region) {
                acc += ki * (g[0] * g[0] + g[1] * g[1]) * cut.region_area(mesh, t, region);
            }
        }
    }
    acc.sqrt()
}

/// The mesh-dependent norm ||v||_h: broken energy + scaled ghost jumps +
/// scaled interface jumps.
pub fn discrete_norm_h(
    u: &PrimalSolution,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    k: &crate::problem::DiffusionData,
) -> f64 {
    let mut acc = energy_seminorm(mesh, cut, k, |t, region| u.gradient(mesh, dofc, t, region))
        .powi(2);
    for i in 0..2usize {
        let region = (i + 1) as u8;
        let ki = k.k(region);
        for &e in &cut.ghost_edges[i] {
            let edge = &mesh.edges[e];
            let tp = edge.t_plus.unwrap();
            let gm = u.gradient(mesh, dofc, edge.t_minus, region).unwrap();
            let gp = u.gradient(mesh, dofc, tp, region).unwrap();
            let jump = (gm[0] - gp[0]) * edge.n[0] + (gm[1] - gp[1]) * edge.n[1];
            acc += ki * edge.length * edge.length * jump * jump;
        }
    }
    let kg = k.k_gamma();
    for cell in &cut.cut_cells {
        let t = cell.element;
        let rule = interface_quadrature(cut, t, 2).unwrap();
        let jump_sq = rule.integrate(|x, y| {
            let u1 = u.value_at(mesh, dofc, t, 1, [x, y]).unwrap();
            let u2 = u.value_at(mesh, dofc, t, 2, [x, y]).unwrap();
            (u1 - u2) * (u1 - u2)
        });
        acc += kg / mesh.h[t] * jump_sq;
    }
    acc.sqrt()
}

/// Nodal interpolation of the exact solution into the doubled space.
pub fn interpolate_exact(
    mesh: &TriangleMesh,
    dofc: &DofHandlerC,
    problem: &ProblemData,
) -> Result<PrimalSolution> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::invalid("problem has no exact solution"))?;
    let mut values = vec![0.0; dofc.n_dofs()];
    for (d, &(region, v)) in dofc.dofs.iter().enumerate() {
        let p = mesh.vertices[v];
        values[d] = exact.value(region, p[0], p[1]);
    }
    Ok(PrimalSolution {
        values,
        solver_backward_error: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cut::classify_cells;
    use crate::levelset::LevelSet;
    use crate::mesh::{build_structured_mesh, Rect};
    use crate::problem::DiffusionData;

    fn solve(
        n: usize,
        rect: Rect,
        problem: &ProblemData,
        cfg: &SolverConfig,
    ) -> (TriangleMesh, CutTopology, DofHandlerC, SparseLinearSystem, PrimalSolution) {
        let mesh = build_structured_mesh(n, n, rect).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let (system, dofc) = assemble_primal(&mesh, &cut, problem, cfg).unwrap();
        let u = solve_primal(&system).unwrap();
        (mesh, cut, dofc, system, u)
    }

    #[test]
    fn uncut_unit_diffusion_equals_standard_p1_laplace() {
        // With phi > 0 everywhere and k = 1 the system must coincide with
        // the standard P1 stiffness matrix, assembled independently here.
        let mesh = build_structured_mesh(3, 3, Rect::unit()).unwrap();
        let problem = ProblemData::unit_source(LevelSet::constant(1.0), 1.0, 1.0).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let cfg = SolverConfig::default();
        let (system, dofc) = assemble_primal(&mesh, &cut, &problem, &cfg).unwrap();
        assert_eq!(dofc.n_dofs(), mesh.n_vertices());
        // Oracle: plain P1 stiffness.
        let mut triplets = Vec::new();
        for t in 0..mesh.n_triangles() {
            let grads = mesh.hat_gradients(t);
            let area = mesh.area(t);
            let tri = mesh.triangles[t];
            for a in 0..3 {
                for b in 0..3 {
                    let dofa = dofc.dof(2, tri[a]).unwrap();
                    let dofb = dofc.dof(2, tri[b]).unwrap();
                    triplets.push((
                        dofa,
                        dofb,
                        area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]),
                    ));
                }
            }
        }
        let oracle = CsrMatrix::from_triplets(dofc.n_dofs(), triplets);
        for r in 0..oracle.n {
            for idx in oracle.row_ptr[r]..oracle.row_ptr[r + 1] {
                let c = oracle.col_idx[idx];
                assert!(
                    (oracle.values[idx] - system.full_matrix.get(r, c)).abs() < 1e-13,
                    "entry ({r},{c}) differs"
                );
            }
        }
        assert_eq!(system.full_matrix.nnz(), oracle.nnz());
    }

    #[test]
    fn matrix_symmetry_on_cut_mesh() {
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let mesh = build_structured_mesh(9, 9, Rect::symmetric()).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let (system, _) = assemble_primal(&mesh, &cut, &problem, &SolverConfig::default()).unwrap();
        let max = system.full_matrix.max_abs();
        assert!(system.full_matrix.asymmetry() <= 1e-12 * max);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let mut problem = ProblemData::unit_source(LevelSet::petal(), 1.0, 100.0).unwrap();
        problem.source = [Box::new(|_, _| 0.0), Box::new(|_, _| 0.0)];
        let (_, _, _, _, u) = solve(8, Rect::symmetric(), &problem, &SolverConfig::default());
        assert!(u.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn reproduces_piecewise_linear_interface_solution() {
        let problem = ProblemData::linear_interface(0.3, 1.0, 100.0).unwrap();
        let cfg = SolverConfig {
            boundary: BoundaryMode::InterpolatedExact,
            ..SolverConfig::default()
        };
        let (mesh, _cut, dofc, _system, u) = solve(16, Rect::symmetric(), &problem, &cfg);
        let exact = problem.exact.as_ref().unwrap();
        let mut worst = 0.0f64;
        for (d, &(region, v)) in dofc.dofs.iter().enumerate() {
            let p = mesh.vertices[v];
            worst = worst.max((u.values[d] - exact.value(region, p[0], p[1])).abs());
        }
        assert!(worst <= 1e-10, "dof-wise error {worst}");
    }

    #[test]
    fn galerkin_orthogonality_surrogate() {
        use rand::prelude::*;
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let cfg = SolverConfig {
            boundary: BoundaryMode::InterpolatedExact,
            ..SolverConfig::default()
        };
        let (_, _, dofc, system, u) = solve(8, Rect::symmetric(), &problem, &cfg);
        let scale = system.scale() * u.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w: Vec<f64> = (0..dofc.n_dofs())
                .map(|d| {
                    if dofc.dirichlet[d].is_some() {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            let residual = (system.apply_a(&u.values, &w) - system.apply_l(&w)).abs();
            let w_inf = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(residual <= 1e-10 * scale * w_inf.max(1.0) * dofc.n_dofs() as f64);
        }
    }

    #[test]
    fn petal_smoke_run_has_finite_energy() {
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let cfg = SolverConfig {
            boundary: BoundaryMode::InterpolatedExact,
            ..SolverConfig::default()
        };
        let (mesh, cut, dofc, _, u) = solve(32, Rect::symmetric(), &problem, &cfg);
        let norm = discrete_norm_h(&u, &mesh, &cut, &dofc, &problem.diffusion);
        assert!(norm.is_finite() && norm > 0.0);
    }

    #[test]
    fn energy_seminorm_closed_forms() {
        let mesh = build_structured_mesh(2, 2, Rect::unit()).unwrap();
        let cut = classify_cells(&mesh, &LevelSet::constant(1.0)).unwrap();
        let k = DiffusionData::new(1.0, 2.0).unwrap();
        // v = x lives in region 2 with gradient (1,0): |v|_{1,K,h} = sqrt(2).
        let norm = energy_seminorm(&mesh, &cut, &k, |_, region| {
            (region == 2).then_some([1.0, 0.0])
        });
        assert!((norm - 2f64.sqrt()).abs() < 1e-13);
        let zero = energy_seminorm(&mesh, &cut, &k, |_, _| Some([0.0, 0.0]));
        assert!(zero == 0.0);
    }

    #[test]
    fn energy_seminorm_additive_over_subdomains() {
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let mesh = build_structured_mesh(8, 8, Rect::symmetric()).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let k = problem.diffusion;
        let g = |t: usize, region: u8| -> Option<[f64; 2]> {
            Some(if region == 1 { [1.0, 2.0] } else { [t as f64 % 3.0, -1.0] })
        };
        let total = energy_seminorm(&mesh, &cut, &k, g).powi(2);
        let r1 = energy_seminorm(&mesh, &cut, &k, |t, r| if r == 1 { g(t, r) } else { None })
            .powi(2);
        let r2 = energy_seminorm(&mesh, &cut, &k, |t, r| if r == 2 { g(t, r) } else { None })
            .powi(2);
        assert!((total - r1 - r2).abs() < 1e-13 * total.max(1.0));
    }

    #[test]
    fn norm_h_equals_energy_for_continuous_fields() {
        // A globally continuous linear field has no ghost or interface
        // jumps, so ||v||_h reduces to the energy seminorm.
        let problem = ProblemData::linear_interface(0.3, 1.0, 1.0).unwrap();
        let mesh = build_structured_mesh(8, 8, Rect::symmetric()).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let dofc = DofHandlerC::build(&mesh, &cut, &problem, BoundaryMode::InterpolatedExact)
            .unwrap();
        let u = interpolate_exact(&mesh, &dofc, &problem).unwrap();
        let nh = discrete_norm_h(&u, &mesh, &cut, &dofc, &problem.diffusion);
        let en = energy_seminorm(&mesh, &cut, &problem.diffusion, |t, r| {
            u.gradient(&mesh, &dofc, t, r)
        });
        assert!((nh - en).abs() < 1e-12 * en.max(1.0));
        // And ||v||_h^2 dominates the volume part for any field.
        assert!(nh * nh + 1e-15 >= en * en);
    }

    #[test]
    fn small_penalty_reported_as_such() {
        // With gamma far below the coercivity threshold the consistency
        // terms dominate and the factorization hits a negative pivot.
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let cfg = SolverConfig {
            gamma: 0.01,
            boundary: BoundaryMode::InterpolatedExact,
            ..SolverConfig::default()
        };
        let mesh = build_structured_mesh(16, 16, Rect::symmetric()).unwrap();
        let cut = classify_cells(&mesh, &problem.level_set).unwrap();
        let (system, _) = assemble_primal(&mesh, &cut, &problem, &cfg).unwrap();
        match solve_primal(&system) {
            Err(crate::error::Error::PenaltyTooSmall { .. }) => {}
            other => panic!("expected penalty error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn dirichlet_values_exact() {
        let problem = ProblemData::petal(1.0, 100.0).unwrap();
        let cfg = SolverConfig {
            boundary: BoundaryMode::InterpolatedExact,
            ..SolverConfig::default()
        };
        let (_, _, dofc, _, u) = solve(8, Rect::symmetric(), &problem, &cfg);
        let mut constrained = 0;
        for (d, val) in dofc.dirichlet.iter().enumerate() {
            if let Some(g) = val {
                assert_eq!(u.values[d], *g);
                constrained += 1;
            }
        }
        assert!(constrained > 0);
    }
}
