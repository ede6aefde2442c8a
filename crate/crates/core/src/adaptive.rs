//! Doerfler marking, the adaptive solve-estimate-mark-refine loop, the
//! petal benchmark driver and convergence-rate fitting.

use crate::cut::classify_cells;
use crate::error::{Error, Result};
use crate::estimator::{assemble_report, EstimatorReport};
use crate::flux::{divergence_residual, recover_flux, source_norms};
use crate::levelset::LevelSet;
use crate::mesh::{build_structured_mesh, Rect, TriangleMesh};
use crate::mixed::{compute_multipliers_local, verify_mixed_equivalence, DofHandlerD};
use crate::primal::{assemble_primal, solve_primal, DofHandlerC};
use crate::problem::{BoundaryMode, ProblemData, SolverConfig};
use std::path::{Path, PathBuf};

/// Bulk (Doerfler) marking: the minimal-cardinality element set whose
/// squared estimator sum reaches theta_mark times the total, obtained by
/// taking elements in descending estimator order (ties to lower ids).
pub fn dorfler_mark(estimates: &[f64], theta_mark: f64) -> Vec<usize> {
    assert!(theta_mark > 0.0 && theta_mark <= 1.0, "theta in (0, 1]");
    let total: f64 = estimates.iter().map(|e| e * e).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| {
        estimates[b]
            .partial_cmp(&estimates[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let target = theta_mark * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for t in order {
        if acc >= target && !marked.is_empty() {
            break;
        }
        if estimates[t] == 0.0 {
            break;
        }
        acc += estimates[t] * estimates[t];
        marked.push(t);
    }
    marked.sort_unstable();
    marked
}

/// Benchmark configuration; mirrors the `adapt` CLI and config file.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub level_set: String,
    pub k_minus: f64,
    pub k_plus: f64,
    pub gamma: f64,
    pub gamma_g: f64,
    pub rt_order: usize,
    pub theta_mark: f64,
    pub max_dofs: usize,
    pub mesh_n0: usize,
    pub quad_stiffness: usize,
    pub quad_source: usize,
    pub mark_with_interface: bool,
    pub max_iterations: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for BenchmarkConfig {
    fn default() -> BenchmarkConfig {
        BenchmarkConfig {
            level_set: "petal".into(),
            k_minus: 1.0,
            k_plus: 100.0,
            gamma: 10.0,
            gamma_g: 0.1,
            rt_order: 1,
            theta_mark: 0.2,
            max_dofs: 20_000,
            mesh_n0: 16,
            quad_stiffness: 2,
            quad_source: 7,
            mark_with_interface: true,
            max_iterations: 60,
            out_dir: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_mark > 0.0 && self.theta_mark <= 1.0) {
            return Err(Error::Config("theta_mark must lie in (0, 1]".into()));
        }
        if self.mesh_n0 < 1 {
            return Err(Error::Config("mesh_n0 must be at least 1".into()));
        }
        if self.rt_order > 1 {
            return Err(Error::Config("rt_order must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Parses a flat key = value config file ('#' starts a comment).
    pub fn from_file(path: &Path) -> Result<BenchmarkConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = BenchmarkConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value {v:?} for key {k}"));
        match key {
            "level_set" => self.level_set = value.to_string(),
            "k_minus" => self.k_minus = value.parse().map_err(|_| bad(key, value))?,
            "k_plus" => self.k_plus = value.parse().map_err(|_| bad(key, value))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad(key, value))?,
            "gamma_g" => self.gamma_g = value.parse().map_err(|_| bad(key, value))?,
            "rt_order" => self.rt_order = value.parse().map_err(|_| bad(key, value))?,
            "theta_mark" => self.theta_mark = value.parse().map_err(|_| bad(key, value))?,
            "max_dofs" => self.max_dofs = value.parse().map_err(|_| bad(key, value))?,
            "mesh_n0" => self.mesh_n0 = value.parse().map_err(|_| bad(key, value))?,
            "quad_stiffness" => {
                self.quad_stiffness = value.parse().map_err(|_| bad(key, value))?
            }
            "quad_source" => self.quad_source = value.parse().map_err(|_| bad(key, value))?,
            "mark_with_interface" => {
                self.mark_with_interface = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(bad(key, value)),
                }
            }
            "max_iterations" => {
                self.max_iterations = value.parse().map_err(|_| bad(key, value))?
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            gamma: self.gamma,
            gamma_g: self.gamma_g,
            solver_tol: 1e-12,
            rt_order: self.rt_order,
            quad_stiffness: self.quad_stiffness,
            quad_source: self.quad_source,
            boundary: BoundaryMode::Homogeneous,
        }
    }

    /// The problem implied by the level-set name: manufactured solutions
    /// for "petal" and "vertical_line:<c>", unit source otherwise.
    pub fn problem(&self) -> Result<(ProblemData, SolverConfig)> {
        let mut cfg = self.solver_config();
        if self.level_set == "petal" {
            cfg.boundary = BoundaryMode::InterpolatedExact;
            return Ok((ProblemData::petal(self.k_minus, self.k_plus)?, cfg));
        }
        if let Some(arg) = self.level_set.strip_prefix("vertical_line:") {
            let c: f64 = arg
                .parse()
                .map_err(|_| Error::Config(format!("bad vertical_line parameter {arg:?}")))?;
            cfg.boundary = BoundaryMode::InterpolatedExact;
            return Ok((
                ProblemData::linear_interface(c, self.k_minus, self.k_plus)?,
                cfg,
            ));
        }
        let ls = LevelSet::from_name(&self.level_set)?;
        Ok((ProblemData::unit_source(ls, self.k_minus, self.k_plus)?, cfg))
    }
}

/// One row of the adaptive trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub n_dofs: usize,
    pub eta: f64,
    pub eta_gamma: f64,
    pub eps: f64,
    /// NaN when the problem has no exact solution.
    pub error: f64,
    pub effectivity: f64,
    pub elements: usize,
    pub cut_elements: usize,
    pub seconds: f64,
    /// |I_h u_h - u_h|_{1,K,h}; not part of trace.csv.
    pub gap: f64,
}

#[derive(Debug, Default)]
pub struct AdaptiveTrace {
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl AdaptiveTrace {
    /// trace.csv with the fixed column set.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "iter,N,eta,eta_gamma,eps,error,effectivity,elements,cut_elements,seconds"
        )?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.n_dofs,
                r.eta,
                r.eta_gamma,
                r.eps,
                r.error,
                r.effectivity,
                r.elements,
                r.cut_elements,
                r.seconds
            )?;
        }
        Ok(())
    }

    /// Reliability constants c_i = (error - eta)_+ / (eta_Gamma + eps).
    pub fn reliability_constants(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let excess = (r.error - r.eta).max(0.0);
                excess / (r.eta_gamma + r.eps).max(f64::MIN_POSITIVE)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuantity {
    Error,
    Eta,
}

/// Least-squares slope of log(quantity) against log(N) over the last
/// `window` iterations.
pub fn fit_convergence_rate(
    trace: &AdaptiveTrace,
    quantity: RateQuantity,
    window: usize,
) -> Result<f64> {
    if window < 3 {
        return Err(Error::invalid("rate window must have at least 3 points"));
    }
    let n = trace.records.len();
    if n < window {
        return Err(Error::invalid(format!(
            "trace has {n} records, window of {window} requested"
        )));
    }
    let rows = &trace.records[n - window..];
    let mut xs = Vec::with_capacity(window);
    let mut ys = Vec::with_capacity(window);
    for r in rows {
        let q = match quantity {
            RateQuantity::Error => r.error,
            RateQuantity::Eta => r.eta,
        };
        if !(q > 0.0) || r.n_dofs == 0 {
            return Err(Error::invalid("rate fit needs positive quantities"));
        }
        xs.push((r.n_dofs as f64).ln());
        ys.push(q.ln());
    }
    let xbar = xs.iter().sum::<f64>() / window as f64;
    let ybar = ys.iter().sum::<f64>() / window as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..window {
        num += (xs[i] - xbar) * (ys[i] - ybar);
        den += (xs[i] - xbar) * (xs[i] - xbar);
    }
    if den == 0.0 {
        return Err(Error::invalid("degenerate abscissa in rate fit"));
    }
    Ok(num / den)
}

/// Everything computed in one adaptive iteration; exposed for tests and
/// the one-shot `solve` command.
pub struct SolveArtifacts {
    pub mesh: TriangleMesh,
    pub cut: crate::cut::CutTopology,
    pub dofc: DofHandlerC,
    pub u: crate::primal::PrimalSolution,
    pub theta: crate::mixed::MultiplierField,
    pub flux: crate::flux::FluxField,
    pub report: EstimatorReport,
    pub max_conservation_residual: f64,
}

/// Runs solve -> multipliers -> flux -> estimators on one mesh, enforcing
/// the pipeline invariants (mixed residual, conservation).
pub fn solve_once(
    mesh: TriangleMesh,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<SolveArtifacts> {
    let cut = classify_cells(&mesh, &problem.level_set)?;
    let (system, dofc) = assemble_primal(&mesh, &cut, problem, cfg)?;
    let u = solve_primal(&system)?;
    let dofd = DofHandlerD::build(&mesh, &cut);
    let theta = compute_multipliers_local(&u, &mesh, &cut, &dofc, &dofd, problem, cfg)?;
    let mixed = verify_mixed_equivalence(&u, &theta, &mesh, &cut, &dofc, &dofd, problem, cfg)?;
    if mixed.eq1_residual > 1e-9 * mixed.scale {
        return Err(Error::SingularSystem(format!(
            "mixed equation residual {:.3e} exceeds 1e-9 * {:.3e}",
            mixed.eq1_residual, mixed.scale
        )));
    }
    let flux = recover_flux(&u, &theta, &mesh, &cut, &dofc, problem, cfg)?;
    let residuals = divergence_residual(&flux, &mesh, &cut, problem, cfg)?;
    let norms = source_norms(&mesh, &cut, problem, cfg.quad_source)?;
    let mut max_res = 0.0f64;
    for t in 0..mesh.n_triangles() {
        max_res = max_res.max(residuals[t] / (1.0 + norms[t]));
    }
    if max_res > 1e-9 {
        return Err(Error::SingularSystem(format!(
            "conservation residual {max_res:.3e} exceeds 1e-9"
        )));
    }
    let report = assemble_report(&flux, &u, &mesh, &cut, &dofc, problem, cfg)?;
    Ok(SolveArtifacts {
        mesh,
        cut,
        dofc,
        u,
        theta,
        flux,
        report,
        max_conservation_residual: max_res,
    })
}

fn count_free_dofs(mesh: &TriangleMesh, problem: &ProblemData) -> Result<usize> {
    let cut = classify_cells(mesh, &problem.level_set)?;
    let dofc = DofHandlerC::build(mesh, &cut, problem, BoundaryMode::Homogeneous)?;
    Ok(dofc.n_free())
}

/// The adaptive solve-estimate-mark-refine loop.
pub fn adaptive_loop(config: &BenchmarkConfig) -> Result<AdaptiveTrace> {
    config.validate()?;
    let (problem, cfg) = config.problem()?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut mesh = build_structured_mesh(config.mesh_n0, config.mesh_n0, Rect::symmetric())?;
    let mut trace = AdaptiveTrace::default();
    let mut iter = 0usize;
    loop {
        let started = std::time::Instant::now();
        let artifacts = solve_once(mesh.clone(), &problem, &cfg).map_err(|e| e.at_iteration(iter))?;
        let report = &artifacts.report;
        let n_dofs = artifacts.dofc.n_free();
        let record = IterationRecord {
            iter,
            n_dofs,
            eta: report.eta,
            eta_gamma: report.eta_gamma,
            eps: report.eps,
            error: report.error.unwrap_or(f64::NAN),
            effectivity: report.effectivity.unwrap_or(f64::NAN),
            elements: artifacts.mesh.n_triangles(),
            cut_elements: artifacts.cut.n_cut(),
            seconds: started.elapsed().as_secs_f64(),
            gap: report.gap,
        };
        if let Some(prev) = trace.records.last() {
            if record.n_dofs <= prev.n_dofs {
                return Err(Error::SingularSystem(format!(
                    "DOF count not increasing at iteration {iter}"
                ))
                .at_iteration(iter));
            }
            if record.error.is_finite() && record.error > 1.1 * prev.error {
                trace
                    .warnings
                    .push(format!("iteration {iter}: error rose by more than 10%"));
            }
            if record.eta > 1.05 * prev.eta {
                trace
                    .warnings
                    .push(format!("iteration {iter}: eta rose by more than 5%"));
            }
        }
        if let Some(dir) = &config.out_dir {
            export_iteration(dir, iter, &artifacts, &problem, &cfg)?;
        }
        trace.records.push(record);
        if iter >= config.max_iterations {
            break;
        }
        // Nothing to mark when the estimator sits at rounding level
        // relative to the solution energy (exactly reproduced solutions).
        let energy = crate::primal::energy_seminorm(
            &artifacts.mesh,
            &artifacts.cut,
            &problem.diffusion,
            |t, r| artifacts.u.gradient(&artifacts.mesh, &artifacts.dofc, t, r),
        );
        if report.eta + report.eta_gamma <= 1e-12 * energy {
            break;
        }
        let mut marked = dorfler_mark(&report.eta_t, config.theta_mark);
        if config.mark_with_interface && !marked.is_empty() {
            // Cut elements whose interface estimator exceeds the median
            // marked volume estimator join the marked set.
            let mut marked_values: Vec<f64> = marked.iter().map(|&t| report.eta_t[t]).collect();
            marked_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = marked_values[marked_values.len() / 2];
            for t in 0..artifacts.mesh.n_triangles() {
                if report.eta_tilde[t] > median && !marked.contains(&t) {
                    marked.push(t);
                }
            }
            marked.sort_unstable();
        }
        if marked.is_empty() {
            break;
        }
        let refined = artifacts.mesh.refine(&marked).map_err(|e| e.at_iteration(iter))?;
        let next_dofs = count_free_dofs(&refined, &problem).map_err(|e| e.at_iteration(iter))?;
        if next_dofs > config.max_dofs {
            break;
        }
        mesh = refined;
        iter += 1;
    }
    if let Some(dir) = &config.out_dir {
        trace.write_csv(&dir.join("trace.csv"))?;
        write_summary(&dir.join("summary.json"), config, &trace)?;
    }
    Ok(trace)
}

fn export_iteration(
    dir: &Path,
    iter: usize,
    artifacts: &SolveArtifacts,
    problem: &ProblemData,
    cfg: &SolverConfig,
) -> Result<()> {
    crate::mesh_io::write_mesh_vtk(&dir.join(format!("mesh_{iter}.vtk")), &artifacts.mesh)?;
    crate::mesh_io::write_solution_vtk(
        &dir.join(format!("solution_{iter}.vtk")),
        &artifacts.mesh,
        &artifacts.cut,
        &artifacts.dofc,
        &artifacts.u,
    )?;
    let residuals = divergence_residual(&artifacts.flux, &artifacts.mesh, &artifacts.cut, problem, cfg)?;
    crate::mesh_io::write_flux_vtk(
        &dir.join(format!("flux_{iter}.vtk")),
        &artifacts.mesh,
        &artifacts.flux,
        &residuals,
    )?;
    artifacts
        .report
        .write_csv(&dir.join(format!("estimators_{iter}.csv")), &artifacts.cut)?;
    Ok(())
}

/// Flat JSON summary with the fitted slopes and reliability constants.
pub fn write_summary(path: &Path, config: &BenchmarkConfig, trace: &AdaptiveTrace) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let window = 8.min(trace.records.len());
    let slope_err = if window >= 3 {
        fit_convergence_rate(trace, RateQuantity::Error, window).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let slope_eta = if window >= 3 {
        fit_convergence_rate(trace, RateQuantity::Eta, window).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let last = trace.records.last();
    let c = trace.reliability_constants();
    let c_max = c.iter().fold(0.0f64, |m, v| m.max(*v));
    writeln!(out, "{{")?;
    writeln!(out, "  \"level_set\": \"{}\",", config.level_set)?;
    writeln!(out, "  \"iterations\": {},", trace.records.len())?;
    writeln!(
        out,
        "  \"final_dofs\": {},",
        last.map(|r| r.n_dofs).unwrap_or(0)
    )?;
    writeln!(out, "  \"slope_error\": {slope_err},")?;
    writeln!(out, "  \"slope_eta\": {slope_eta},")?;
    writeln!(out, "  \"rate_window\": {window},")?;
    writeln!(out, "  \"reliability_constant_max\": {c_max},")?;
    writeln!(
        out,
        "  \"final_effectivity\": {},",
        last.map(|r| r.effectivity).unwrap_or(f64::NAN)
    )?;
    writeln!(out, "  \"warnings\": {}", trace.warnings.len())?;
    writeln!(out, "}}")?;
    Ok(())
}
