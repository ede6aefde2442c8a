//! Problem data: diffusion coefficients, solver parameters, sources and
//! manufactured solutions.

use crate::cut::CutTopology;
use crate::error::{Error, Result};
use crate::levelset::{self, LevelSet};

/// Piecewise-constant diffusion with the interface weights and harmonic
/// mean derived from (k_1, k_2).
#[derive(Debug, Clone, Copy)]
pub struct DiffusionData {
    pub k1: f64,
    pub k2: f64,
}

impl DiffusionData {
    pub fn new(k1: f64, k2: f64) -> Result<DiffusionData> {
        if !(k1 > 0.0 && k2 > 0.0) {
            return Err(Error::invalid("diffusion coefficients must be positive"));
        }
        Ok(DiffusionData { k1, k2 })
    }

    pub fn k(&self, region: u8) -> f64 {
        match region {
            1 => self.k1,
            2 => self.k2,
            _ => panic!("region id must be 1 or 2"),
        }
    }

    pub fn omega1(&self) -> f64 {
        self.k2 / (self.k1 + self.k2)
    }

    pub fn omega2(&self) -> f64 {
        self.k1 / (self.k1 + self.k2)
    }

    /// Harmonic mean k_1 k_2 / (k_1 + k_2).
    pub fn k_gamma(&self) -> f64 {
        self.k1 * self.k2 / (self.k1 + self.k2)
    }

    /// delta_T = k_i away from the interface, k_Gamma on cut elements.
    pub fn delta_t(&self, cut: &CutTopology, element: usize) -> f64 {
        match cut.class[element] {
            crate::cut::CellClass::In1 => self.k1,
            crate::cut::CellClass::In2 => self.k2,
            crate::cut::CellClass::Cut => self.k_gamma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Homogeneous,
    /// Nodal interpolation of the exact solution on the Dirichlet boundary.
    InterpolatedExact,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Nitsche penalty.
    pub gamma: f64,
    /// Ghost penalty.
    pub gamma_g: f64,
    /// Normwise backward-error tolerance of the linear solve.
    pub solver_tol: f64,
    /// Raviart-Thomas order of the flux recovery, 0 or 1.
    pub rt_order: usize,
    /// Quadrature degree for stiffness-type integrands.
    pub quad_stiffness: usize,
    /// Quadrature degree for source/error integrands (non-polynomial data).
    pub quad_source: usize,
    pub boundary: BoundaryMode,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            gamma: 10.0,
            gamma_g: 0.1,
            solver_tol: 1e-12,
            rt_order: 1,
            quad_stiffness: 2,
            quad_source: 7,
            boundary: BoundaryMode::Homogeneous,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if !(self.gamma_g >= 0.0) {
            return Err(Error::invalid("gamma_g must be nonnegative"));
        }
        if self.rt_order > 1 {
            return Err(Error::invalid("RT order must be 0 or 1"));
        }
        Ok(())
    }
}

pub type ScalarFn = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

/// Exact solution given per region as smooth extensions (evaluable on all
/// of Omega_h^i, not just Omega^i).
pub struct ExactSolution {
    pub value: [ScalarFn; 2],
    pub gradient: [VectorFn; 2],
}

impl ExactSolution {
    pub fn value(&self, region: u8, x: f64, y: f64) -> f64 {
        (self.value[region as usize - 1])(x, y)
    }

    pub fn gradient(&self, region: u8, x: f64, y: f64) -> [f64; 2] {
        (self.gradient[region as usize - 1])(x, y)
    }
}

/// Full problem description: level set, diffusion, sources and (when
/// manufactured) the exact solution.
pub struct ProblemData {
    pub level_set: LevelSet,
    pub diffusion: DiffusionData,
    pub source: [ScalarFn; 2],
    pub exact: Option<ExactSolution>,
}

impl ProblemData {
    pub fn source(&self, region: u8, x: f64, y: f64) -> f64 {
        (self.source[region as usize - 1])(x, y)
    }

    /// The petal benchmark: exact solution u = phi / k_i in region i, so
    /// the flux K grad(u) = grad(phi) is continuous and
    /// f = -laplacian(phi) on both sides.
    pub fn petal(k_minus: f64, k_plus: f64) -> Result<ProblemData> {
        let diffusion = DiffusionData::new(k_minus, k_plus)?;
        let f = || -> ScalarFn { Box::new(|x, y| -levelset::petal_laplacian(x, y)) };
        let value = |k: f64| -> ScalarFn { Box::new(move |x, y| levelset::petal_value(x, y) / k) };
        let grad = |k: f64| -> VectorFn {
            Box::new(move |x, y| {
                let g = levelset::petal_gradient(x, y);
                [g[0] / k, g[1] / k]
            })
        };
        Ok(ProblemData {
            level_set: LevelSet::petal(),
            diffusion,
            source: [f(), f()],
            exact: Some(ExactSolution {
                value: [value(k_minus), value(k_plus)],
                gradient: [grad(k_minus), grad(k_plus)],
            }),
        })
    }

    /// Piecewise-linear interface solution u = (x - c)/k_i across the
    /// vertical line x = c, with f = 0. Lies in the discrete space, so
    /// the method reproduces it exactly.
    pub fn linear_interface(c: f64, k1: f64, k2: f64) -> Result<ProblemData> {
        let diffusion = DiffusionData::new(k1, k2)?;
        let zero = || -> ScalarFn { Box::new(|_, _| 0.0) };
        let value = |k: f64| -> ScalarFn { Box::new(move |x, _| (x - c) / k) };
        let grad = |k: f64| -> VectorFn { Box::new(move |_, _| [1.0 / k, 0.0]) };
        Ok(ProblemData {
            level_set: LevelSet::vertical_line(c),
            diffusion,
            source: [zero(), zero()],
            exact: Some(ExactSolution {
                value: [value(k1), value(k2)],
                gradient: [grad(k1), grad(k2)],
            }),
        })
    }

    /// Unit source, homogeneous boundary, no exact solution.
    pub fn unit_source(level_set: LevelSet, k1: f64, k2: f64) -> Result<ProblemData> {
        let diffusion = DiffusionData::new(k1, k2)?;
        Ok(ProblemData {
            level_set,
            diffusion,
            source: [Box::new(|_, _| 1.0), Box::new(|_, _| 1.0)],
            exact: None,
        })
    }
}
