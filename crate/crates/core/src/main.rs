//! Command-line front end: adaptive benchmark runs, single solves with
//! exports, and a self-contained verification suite on small meshes.

use clap::{Parser, Subcommand};
use cutflux::adaptive::{
    adaptive_loop, dorfler_mark, fit_convergence_rate, solve_once, BenchmarkConfig, RateQuantity,
};
use cutflux::cut::classify_cells;
use cutflux::error::Result;
use cutflux::levelset::LevelSet;
use cutflux::mesh::{build_structured_mesh, Rect};
use cutflux::mixed::{compute_infsup_constant, compute_multipliers_local, DofHandlerD};
use cutflux::primal::{assemble_primal, solve_primal};
use cutflux::problem::ProblemData;
use rand::prelude::*;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cutflux", version, about = "Unfitted finite element workbench for the elliptic interface problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct Overrides {
    /// Doerfler marking fraction.
    #[arg(long)]
    theta: Option<f64>,
    /// Stop before exceeding this DOF count.
    #[arg(long)]
    max_dofs: Option<usize>,
    /// Nitsche penalty.
    #[arg(long)]
    gamma: Option<f64>,
    /// Ghost penalty.
    #[arg(long)]
    gamma_g: Option<f64>,
    /// Raviart-Thomas order (0 or 1).
    #[arg(long)]
    rt_order: Option<usize>,
    /// Initial structured mesh subdivisions per axis.
    #[arg(long)]
    mesh_n0: Option<usize>,
    /// Level set name (petal, vertical_line:<c>, circle:<r>).
    #[arg(long)]
    level_set: Option<String>,
    /// Also mark cut elements with large interface estimators (on/off).
    #[arg(long)]
    mark_with_interface: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive solve-estimate-mark-refine benchmark.
    Adapt {
        /// Flat key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One solve on the initial mesh with VTK/CSV exports.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the property suite on small meshes; exit 0 iff everything holds.
    Verify,
}

fn build_config(config: Option<PathBuf>, overrides: Overrides) -> Result<BenchmarkConfig> {
    let mut cfg = match config {
        Some(path) => BenchmarkConfig::from_file(&path)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(v) = overrides.theta {
        cfg.theta_mark = v;
    }
    if let Some(v) = overrides.max_dofs {
        cfg.max_dofs = v;
    }
    if let Some(v) = overrides.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = overrides.gamma_g {
        cfg.gamma_g = v;
    }
    if let Some(v) = overrides.rt_order {
        cfg.rt_order = v;
    }
    if let Some(v) = overrides.mesh_n0 {
        cfg.mesh_n0 = v;
    }
    if let Some(v) = overrides.level_set {
        cfg.level_set = v;
    }
    if let Some(v) = overrides.mark_with_interface {
        cfg.set("mark_with_interface", &v)?;
    }
    if let Some(v) = overrides.out {
        cfg.out_dir = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_adapt(config: Option<PathBuf>, overrides: Overrides) -> Result<()> {
    let cfg = build_config(config, overrides)?;
    println!(
        "adaptive run: level_set={} k=({}, {}) theta={} max_dofs={} rt_order={}",
        cfg.level_set, cfg.k_minus, cfg.k_plus, cfg.theta_mark, cfg.max_dofs, cfg.rt_order
    );
    let trace = adaptive_loop(&cfg)?;
    println!("iter        N          eta    eta_gamma          eps        error  effectivity");
    for r in &trace.records {
        println!(
            "{:4} {:8} {:12.5e} {:12.5e} {:12.5e} {:12.5e} {:12.4}",
            r.iter, r.n_dofs, r.eta, r.eta_gamma, r.eps, r.error, r.effectivity
        );
    }
    let window = 8.min(trace.records.len());
    if window >= 3 {
        if let Ok(s) = fit_convergence_rate(&trace, RateQuantity::Eta, window) {
            println!("eta   slope over last {window}: {s:.3}");
        }
        if let Ok(s) = fit_convergence_rate(&trace, RateQuantity::Error, window) {
            println!("error slope over last {window}: {s:.3}");
        }
    }
    for w in &trace.warnings {
        println!("warning: {w}");
    }
    if let Some(dir) = &cfg.out_dir {
        println!("outputs written to {}", dir.display());
    }
    Ok(())
}

fn run_solve(config: Option<PathBuf>, overrides: Overrides) -> Result<()> {
    let mut cfg = build_config(config, overrides)?;
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("cutflux_out"));
    }
    let dir = cfg.out_dir.clone().unwrap();
    std::fs::create_dir_all(&dir)?;
    let (problem, solver_cfg) = cfg.problem()?;
    let mesh = build_structured_mesh(cfg.mesh_n0, cfg.mesh_n0, Rect::symmetric())?;
    let artifacts = solve_once(mesh, &problem, &solver_cfg)?;
    cutflux::mesh_io::write_mesh_vtk(&dir.join("mesh.vtk"), &artifacts.mesh)?;
    cutflux::mesh_io::write_solution_vtk(
        &dir.join("solution.vtk"),
        &artifacts.mesh,
        &artifacts.cut,
        &artifacts.dofc,
        &artifacts.u,
    )?;
    let residuals = cutflux::flux::divergence_residual(
        &artifacts.flux,
        &artifacts.mesh,
        &artifacts.cut,
        &problem,
        &solver_cfg,
    )?;
    cutflux::mesh_io::write_flux_vtk(&dir.join("flux.vtk"), &artifacts.mesh, &artifacts.flux, &residuals)?;
    artifacts
        .report
        .write_csv(&dir.join("estimators.csv"), &artifacts.cut)?;
    cutflux::cut::write_topology_csv(&dir.join("topology.csv"), &artifacts.mesh, &artifacts.cut)?;
    artifacts.theta.write_csv(&dir.join("multipliers.csv"))?;
    let r = &artifacts.report;
    println!(
        "solved: N={} elements={} cut={} eta={:.5e} eta_gamma={:.5e} eps={:.5e}",
        artifacts.dofc.n_free(),
        artifacts.mesh.n_triangles(),
        artifacts.cut.n_cut(),
        r.eta,
        r.eta_gamma,
        r.eps
    );
    if let Some(err) = r.error {
        println!("exact error {:.5e}, effectivity {:.3}", err, r.effectivity.unwrap());
    }
    println!("max conservation residual {:.3e}", artifacts.max_conservation_residual);
    println!("outputs written to {}", dir.display());
    Ok(())
}

fn run_verify() -> Result<()> {
    let mut all_ok = true;
    let mut check = |name: &str, outcome: Result<String>| {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                all_ok = false;
                println!("FAIL  {name}: {e}");
            }
        };
    };

    check("quadrature reference exactness", {
        cutflux::quadrature::self_check().map(|_| "monomials exact up to degree 12".into())
    });

    check("petal gradient vs central differences", {
        let samples: Vec<[f64; 2]> = (0..64)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 64.0 + 0.007;
                [0.75 * t.cos(), 0.75 * t.sin()]
            })
            .collect();
        LevelSet::petal()
            .validate_gradient(&samples, 1e-6, 1e-6)
            .map(|_| "64 ring samples within 1e-6".into())
    });

    check("mesh invariants under refinement", {
        (|| {
            let mut mesh = build_structured_mesh(4, 4, Rect::symmetric())?;
            for round in 0..4 {
                let marked: Vec<usize> =
                    (0..mesh.n_triangles()).filter(|t| (t + round) % 3 == 0).collect();
                mesh = mesh.refine(&marked)?;
                mesh.check_invariants()?;
            }
            Ok(format!("4 rounds, final min angle {:.3} rad", mesh.min_angle()))
        })()
    });

    check("exact reproduction of the piecewise-linear interface solution", {
        (|| {
            let problem = ProblemData::linear_interface(0.3, 1.0, 100.0)?;
            let cfg = cutflux::problem::SolverConfig {
                boundary: cutflux::problem::BoundaryMode::InterpolatedExact,
                ..Default::default()
            };
            let mesh = build_structured_mesh(16, 16, Rect::symmetric())?;
            let cut = classify_cells(&mesh, &problem.level_set)?;
            let (system, dofc) = assemble_primal(&mesh, &cut, &problem, &cfg)?;
            let u = solve_primal(&system)?;
            let exact = problem.exact.as_ref().unwrap();
            let mut worst = 0.0f64;
            for (d, &(region, v)) in dofc.dofs.iter().enumerate() {
                let p = mesh.vertices[v];
                worst = worst.max((u.values[d] - exact.value(region, p[0], p[1])).abs());
            }
            if worst > 1e-10 {
                return Err(cutflux::Error::invalid(format!("dof error {worst:.3e}")));
            }
            Ok(format!("dof-wise error {worst:.3e}"))
        })()
    });

    check("mixed equivalence on the 8x8 petal mesh", {
        (|| {
            let problem = ProblemData::petal(1.0, 100.0)?;
            let cfg = cutflux::problem::SolverConfig {
                boundary: cutflux::problem::BoundaryMode::InterpolatedExact,
                ..Default::default()
            };
            let mesh = build_structured_mesh(8, 8, Rect::symmetric())?;
            let cut = classify_cells(&mesh, &problem.level_set)?;
            let (system, dofc) = assemble_primal(&mesh, &cut, &problem, &cfg)?;
            let u = solve_primal(&system)?;
            let dofd = DofHandlerD::build(&mesh, &cut);
            let theta = compute_multipliers_local(&u, &mesh, &cut, &dofc, &dofd, &problem, &cfg)?;
            let report = cutflux::mixed::verify_mixed_equivalence(
                &u, &theta, &mesh, &cut, &dofc, &dofd, &problem, &cfg,
            )?;
            if report.eq1_residual > 1e-9 * report.scale {
                return Err(cutflux::Error::invalid(format!(
                    "eq1 residual {:.3e}",
                    report.eq1_residual
                )));
            }
            Ok(format!(
                "eq1 {:.3e}, eq2 {:.3e} (scale {:.3e})",
                report.eq1_residual, report.eq2_residual, report.scale
            ))
        })()
    });

    check("local conservation on a coarse petal mesh", {
        (|| {
            let mut worst_all = 0.0f64;
            for m in [0usize, 1] {
                let cfg = BenchmarkConfig {
                    mesh_n0: 12,
                    rt_order: m,
                    ..BenchmarkConfig::default()
                };
                let (problem, solver_cfg) = cfg.problem()?;
                let mesh = build_structured_mesh(cfg.mesh_n0, cfg.mesh_n0, Rect::symmetric())?;
                let artifacts = solve_once(mesh, &problem, &solver_cfg)?;
                worst_all = worst_all.max(artifacts.max_conservation_residual);
            }
            Ok(format!("max relative residual {worst_all:.3e} (both RT orders)"))
        })()
    });

    check("bulk marking minimality against exhaustive search", {
        (|| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
            for _ in 0..20 {
                let n = rng.random_range(1..=12usize);
                let est: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
                let theta: f64 = rng.random_range(0.1..1.0);
                let total: f64 = est.iter().map(|e| e * e).sum();
                if total == 0.0 {
                    continue;
                }
                let marked = dorfler_mark(&est, theta);
                let mut best = n + 1;
                for mask in 1u32..(1 << n) {
                    let sum: f64 = (0..n)
                        .filter(|&i| mask & (1 << i) != 0)
                        .map(|i| est[i] * est[i])
                        .sum();
                    if sum >= theta * total {
                        best = best.min(mask.count_ones() as usize);
                    }
                }
                if marked.len() != best {
                    return Err(cutflux::Error::invalid(format!(
                        "marking of {est:?} at theta {theta} not minimal"
                    )));
                }
            }
            Ok("20 random instances match".into())
        })()
    });

    check("inf-sup constant positive on the 4x4 petal mesh", {
        (|| {
            let problem = ProblemData::petal(1.0, 100.0)?;
            let mesh = build_structured_mesh(4, 4, Rect::symmetric())?;
            let cut = classify_cells(&mesh, &problem.level_set)?;
            let beta = compute_infsup_constant(&mesh, &cut, &problem.diffusion)?;
            if beta <= 0.01 {
                return Err(cutflux::Error::invalid(format!("beta {beta:.4}")));
            }
            Ok(format!("beta = {beta:.4}"))
        })()
    });

    if all_ok {
        println!("verify: all checks passed");
        Ok(())
    } else {
        Err(cutflux::Error::invalid("verification suite failed"))
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    if let Err(e) = cutflux::quadrature::self_check() {
        eprintln!("startup quadrature check failed: {e}");
        return std::process::ExitCode::FAILURE;
    }
    let outcome = match cli.command {
        Command::Adapt { config, overrides } => run_adapt(config, overrides),
        Command::Solve { config, overrides } => run_solve(config, overrides),
        Command::Verify => run_verify(),
    };
    match outcome {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
