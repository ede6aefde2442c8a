//! Mesh and field I/O: legacy VTK ASCII export (unstructured grid with
//! triangle cells) and a plain-text mesh import format:
//!
//! ```text
//! <vertex count>
//! x y            (one line per vertex)
//! <triangle count>
//! i j k          (one line per triangle, zero-based, counterclockwise)
//! ```

use crate::cut::CutTopology;
use crate::error::{Error, Result};
use crate::flux::FluxField;
use crate::mesh::{Rect, TriangleMesh};
use crate::primal::{DofHandlerC, PrimalSolution};
use std::io::{BufRead, Write};
use std::path::Path;

struct VtkWriter {
    point_scalars: Vec<(String, Vec<f64>)>,
    cell_scalars: Vec<(String, Vec<f64>)>,
    cell_ints: Vec<(String, Vec<i64>)>,
    cell_vectors: Vec<(String, Vec<[f64; 2]>)>,
}

impl VtkWriter {
    fn new() -> VtkWriter {
        VtkWriter {
            point_scalars: Vec::new(),
            cell_scalars: Vec::new(),
            cell_ints: Vec::new(),
            cell_vectors: Vec::new(),
        }
    }

    fn write(&self, path: &Path, mesh: &TriangleMesh, title: &str) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "{title}")?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", mesh.n_vertices())?;
        for v in &mesh.vertices {
            writeln!(out, "{} {} 0", v[0], v[1])?;
        }
        let nt = mesh.n_triangles();
        writeln!(out, "CELLS {nt} {}", 4 * nt)?;
        for tri in &mesh.triangles {
            writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2])?;
        }
        writeln!(out, "CELL_TYPES {nt}")?;
        for _ in 0..nt {
            writeln!(out, "5")?;
        }
        if !self.point_scalars.is_empty() {
            writeln!(out, "POINT_DATA {}", mesh.n_vertices())?;
            for (name, values) in &self.point_scalars {
                writeln!(out, "SCALARS {name} double 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for v in values {
                    writeln!(out, "{v}")?;
                }
            }
        }
        if !self.cell_scalars.is_empty() || !self.cell_ints.is_empty() || !self.cell_vectors.is_empty()
        {
            writeln!(out, "CELL_DATA {nt}")?;
            for (name, values) in &self.cell_ints {
                writeln!(out, "SCALARS {name} int 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for v in values {
                    writeln!(out, "{v}")?;
                }
            }
            for (name, values) in &self.cell_scalars {
                writeln!(out, "SCALARS {name} double 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for v in values {
                    writeln!(out, "{v}")?;
                }
            }
            for (name, values) in &self.cell_vectors {
                writeln!(out, "VECTORS {name} double")?;
                for v in values {
                    writeln!(out, "{} {} 0", v[0], v[1])?;
                }
            }
        }
        Ok(())
    }
}

/// Plain mesh export (geometry only).
pub fn write_mesh_vtk(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    VtkWriter::new().write(path, mesh, "cutflux mesh")
}

/// Solution export: point fields u1 and u2 (zero where the subdomain
/// carries no DOF, with coverage masks) plus the element classification.
pub fn write_solution_vtk(
    path: &Path,
    mesh: &TriangleMesh,
    cut: &CutTopology,
    dofc: &DofHandlerC,
    u: &PrimalSolution,
) -> Result<()> {
    let mut w = VtkWriter::new();
    for region in [1u8, 2u8] {
        let mut field = vec![0.0; mesh.n_vertices()];
        let mut mask = vec![0.0; mesh.n_vertices()];
        for v in 0..mesh.n_vertices() {
            if let Some(d) = dofc.dof(region, v) {
                field[v] = u.values[d];
                mask[v] = 1.0;
            }
        }
        w.point_scalars.push((format!("u{region}"), field));
        w.point_scalars.push((format!("u{region}_defined"), mask));
    }
    w.cell_ints.push((
        "class".into(),
        cut.class
            .iter()
            .map(|c| match c {
                crate::cut::CellClass::In1 => 1,
                crate::cut::CellClass::In2 => 2,
                crate::cut::CellClass::Cut => 0,
            })
            .collect(),
    ));
    w.write(path, mesh, "cutflux solution")
}

/// Flux export: cell vectors (sigma at centroids) and the per-element
/// conservation residual.
pub fn write_flux_vtk(
    path: &Path,
    mesh: &TriangleMesh,
    flux: &FluxField,
    div_residuals: &[f64],
) -> Result<()> {
    let mut w = VtkWriter::new();
    let sigma: Vec<[f64; 2]> = (0..mesh.n_triangles())
        .map(|t| flux.value(t, mesh.centroid(t)))
        .collect();
    w.cell_vectors.push(("sigma".into(), sigma));
    w.cell_scalars
        .push(("div_residual".into(), div_residuals.to_vec()));
    w.write(path, mesh, "cutflux flux")
}

/// Reads the plain-text mesh format.
pub fn read_mesh_text(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    let mut tokens = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        for tok in line.split_whitespace() {
            tokens.push(tok.to_string());
        }
    }
    let mut pos = 0usize;
    let mut next = |what: &str| -> Result<String> {
        let t = tokens
            .get(pos)
            .ok_or_else(|| Error::invalid(format!("mesh file truncated before {what}")))?;
        pos += 1;
        Ok(t.clone())
    };
    let nv: usize = next("vertex count")?
        .parse()
        .map_err(|_| Error::invalid("bad vertex count"))?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let x: f64 = next("x")?.parse().map_err(|_| Error::invalid(format!("bad x of vertex {i}")))?;
        let y: f64 = next("y")?.parse().map_err(|_| Error::invalid(format!("bad y of vertex {i}")))?;
        vertices.push([x, y]);
    }
    let nt: usize = next("triangle count")?
        .parse()
        .map_err(|_| Error::invalid("bad triangle count"))?;
    let mut triangles = Vec::with_capacity(nt);
    for i in 0..nt {
        let mut tri = [0usize; 3];
        for v in &mut tri {
            *v = next("triangle index")?
                .parse()
                .map_err(|_| Error::invalid(format!("bad index in triangle {i}")))?;
        }
        triangles.push(tri);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in &vertices {
        x0 = x0.min(v[0]);
        y0 = y0.min(v[1]);
        x1 = x1.max(v[0]);
        y1 = y1.max(v[1]);
    }
    let parent = (0..triangles.len()).collect();
    let mesh = TriangleMesh::from_cells(vertices, triangles, parent, Rect::new(x0, y0, x1, y1))?;
    mesh.check_invariants()?;
    Ok(mesh)
}

/// Writes the plain-text mesh format (inverse of [`read_mesh_text`]).
pub fn write_mesh_text(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", mesh.n_vertices())?;
    for v in &mesh.vertices {
        writeln!(out, "{} {}", v[0], v[1])?;
    }
    writeln!(out, "{}", mesh.n_triangles())?;
    for tri in &mesh.triangles {
        writeln!(out, "{} {} {}", tri[0], tri[1], tri[2])?;
    }
    Ok(())
}
