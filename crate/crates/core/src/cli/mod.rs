//! Command-line subcommands: run, estimate, verify, convergence, mesh-info.

pub mod config;
pub mod vtk;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::RunConfig;

use crate::adaptivity::{AdaptRecord, AdaptiveHook};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, EstimatorReport, FriedrichsChoice};
use crate::fem::{dofvec, energy_norm, l2_norm};
use crate::mesh::TriMesh;
use crate::problem::{sample_points, validate_assumptions, ValidationReport};
use crate::stepper::{run, run_with, Trajectory};
use crate::verification::{
    convergence_study, friedrichs_eig, report_effectivity, residual_decomposition_check, study_csv, study_steps,
    true_errors, ErrorOptions, ManufacturedCase, StudyOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Estimate,
    Verify,
    Convergence,
    MeshInfo,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    pub seed: Option<u64>,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        return EXIT_SOLVER;
    }
    match e {
        Error::Validation(_) => EXIT_VALIDATION,
        Error::Step { source, .. } => exit_code(source),
        _ => EXIT_USAGE,
    }
}

/// Runs one subcommand and returns the exit status.
pub fn execute(cmd: Command, opts: &Options) -> i32 {
    let go = || -> Result<()> {
        let cfg = RunConfig::load(&opts.config)?;
        match cmd {
            Command::Run => cmd_run(&cfg, &opts.out).map(|_| ()),
            Command::Estimate => cmd_estimate(&cfg, &opts.out),
            Command::Verify => cmd_verify(&cfg, &opts.out, opts.seed),
            Command::Convergence => cmd_convergence(&cfg, &opts.out),
            Command::MeshInfo => {
                print!("{}", mesh_info(&cfg)?);
                Ok(())
            }
        }
    };
    match crate::par::with_threads(opts.threads, go) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), body)?;
    Ok(())
}

fn json_with_header<T: Serialize>(header: &str, body: &T) -> String {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        header: &'a str,
        #[serde(flatten)]
        body: &'a T,
    }
    serde_json::to_string_pretty(&Wrapped { header, body }).expect("output serializes")
}

fn validation_failure(r: &ValidationReport) -> Error {
    let names: Vec<String> = r
        .failures()
        .iter()
        .map(|c| format!("{} (worst {:e})", c.assumption, c.worst_value))
        .collect();
    Error::Validation(names.join(", "))
}

pub struct RunOutput {
    pub trajectory: Trajectory,
    pub adapt: Vec<AdaptRecord>,
    pub validation: ValidationReport,
}

/// Validates, solves, then writes the trajectory table, dumps and VTK.
/// Nothing is written when the validation fails.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let scheme = cfg.scheme()?;
    let mesh = cfg.mesh()?;
    let times = cfg.times()?;
    let validation = validate_assumptions(&scheme.problem, &mesh, times.times())?;
    if !validation.passed() {
        return Err(validation_failure(&validation));
    }
    let (trajectory, adapt) = if cfg.adapt.enabled {
        let mut hook = AdaptiveHook::new(&scheme, cfg.adapt.clone(), &mesh);
        let t = run_with(&scheme, &mesh, times, &mut hook)?;
        (t, hook.records)
    } else {
        (run(&scheme, &mesh, &times)?, Vec::new())
    };
    let header = cfg.header();
    let p = &scheme.problem;
    let mut csv = format!("# {header}\n");
    csv.push_str("n,t,tau,elements,dofs,picard_iterations,linear_solves,converged,residual,l2_norm,energy_norm\n");
    for n in 0..=trajectory.n_steps() {
        let space = trajectory.space(n);
        let u = trajectory.u(n);
        let (tau, diag) = if n == 0 {
            (String::new(), ",,,".to_string())
        } else {
            let d = &trajectory.diagnostics[n - 1];
            (
                format!("{:e}", trajectory.tau(n)),
                format!("{},{},{},{:e}", d.picard_iterations, d.linear_solves, d.converged, d.residual),
            )
        };
        let _ = writeln!(
            csv,
            "{n},{:e},{tau},{},{},{diag},{:e},{:e}",
            trajectory.t(n),
            space.mesh().n_triangles(),
            space.n_dofs(),
            l2_norm(space, u),
            energy_norm(space, u, p.epsilon, p.beta)
        );
    }
    write(out, "trajectory.csv", &csv)?;
    write(out, "validation.json", &json_with_header(&header, &validation))?;
    if !adapt.is_empty() {
        #[derive(Serialize)]
        struct Records<'a> {
            records: &'a [AdaptRecord],
        }
        write(out, "adapt.json", &json_with_header(&header, &Records { records: &adapt }))?;
    }
    for n in 0..=trajectory.n_steps() {
        let space = trajectory.space(n);
        let u = trajectory.u(n);
        if cfg.output.dumps {
            write(out, &format!("u_{n:04}.dof"), &dofvec::dump(u, Some(&header)))?;
            write(out, &format!("mesh_{n:04}.txt"), &format!("# {header}\n{}", space.mesh().to_text()))?;
        }
        if cfg.output.vtk {
            write(out, &format!("u_{n:04}.vtk"), &vtk::polydata(space, u, "u", &header))?;
        }
    }
    Ok(RunOutput {
        trajectory,
        adapt,
        validation,
    })
}

fn friedrichs(cfg: &RunConfig) -> FriedrichsChoice {
    cfg.problem.c_f.map_or(FriedrichsChoice::Diameter, FriedrichsChoice::Value)
}

pub fn estimate(cfg: &RunConfig, traj: &Trajectory) -> Result<EstimatorReport> {
    let scheme = cfg.scheme()?;
    Estimator::new(&scheme, traj, friedrichs(cfg)).estimate(traj)
}

/// `cmd_run` followed by the estimator table and report.
pub fn cmd_estimate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let r = cmd_run(cfg, out)?;
    let rep = estimate(cfg, &r.trajectory)?;
    let header = cfg.header();
    write(out, "estimator.csv", &format!("# {header}\n{}", rep.to_csv()))?;
    write(out, "report.json", &json_with_header(&header, &rep))?;
    Ok(())
}

fn case(cfg: &RunConfig) -> Result<ManufacturedCase> {
    ManufacturedCase::by_id(&cfg.verify.case)
        .ok_or_else(|| Error::Config(format!("unknown verify.case `{}`", cfg.verify.case)))
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    pointwise_residual: f64,
    decomposition_relative: f64,
    split_discrepancy: f64,
    friedrichs_eig: f64,
    err_x: f64,
    estimator: f64,
    effectivity: f64,
}

/// Manufactured-case checks on the configured mesh: residual splitting
/// per step, Friedrichs estimate, true error and effectivity.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let case = case(cfg)?;
    let scheme = case.scheme();
    let mesh = cfg.mesh()?;
    let steps = cfg.time.steps.unwrap_or_else(|| study_steps(cfg.mesh.n, case.params.theta));
    let times = crate::stepper::TimePartition::uniform(case.problem.t_final, steps)?;
    let traj = run(&scheme, &mesh, &times)?;
    let seed = seed.unwrap_or(cfg.verify.seed);
    let header = cfg.header();
    let mut csv = format!("# {header}\nn,max_discrepancy,max_term,relative,split_discrepancy,max_nonlinear,max_data\n");
    let (mut rel, mut split) = (0.0f64, 0.0f64);
    for n in 1..=traj.n_steps() {
        let c = residual_decomposition_check(&traj, &scheme, n, cfg.verify.samples, seed)?;
        rel = rel.max(c.relative);
        split = split.max(if c.max_term > 0.0 { c.split_discrepancy / c.max_term } else { 0.0 });
        let _ = writeln!(
            csv,
            "{n},{:e},{:e},{:e},{:e},{:e},{:e}",
            c.max_discrepancy, c.max_term, c.relative, c.split_discrepancy, c.max_nonlinear, c.max_data
        );
    }
    write(out, "decomposition.csv", &csv)?;
    let err = true_errors(
        &traj,
        &case,
        ErrorOptions {
            fine_levels: cfg.verify.fine_levels,
            with_dual: true,
        },
    )?;
    let rep = Estimator::new(&scheme, &traj, friedrichs(cfg)).estimate(&traj)?;
    let fine = crate::fem::FeSpace::new(mesh.refine_uniform_times(2), 1)?;
    let summary = VerifySummary {
        pointwise_residual: case.max_pointwise_residual(&sample_points(&mesh), times.times()),
        decomposition_relative: rel,
        split_discrepancy: split,
        friedrichs_eig: friedrichs_eig(&fine)?,
        err_x: err.x_norm,
        estimator: rep.totals.upper,
        effectivity: report_effectivity(&rep, &err),
    };
    let mut s = format!("# {header}\ncheck,value\n");
    let v = serde_json::to_value(&summary).expect("summary serializes");
    for key in [
        "pointwise_residual",
        "decomposition_relative",
        "split_discrepancy",
        "friedrichs_eig",
        "err_x",
        "estimator",
        "effectivity",
    ] {
        let _ = writeln!(s, "{key},{:e}", v[key].as_f64().unwrap_or(f64::NAN));
    }
    write(out, "verify.csv", &s)?;
    Ok(())
}

/// Study of the configured manufactured case over `verify.levels`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<()> {
    let case = case(cfg)?;
    let opts = StudyOptions {
        errors: ErrorOptions {
            fine_levels: cfg.verify.fine_levels,
            with_dual: true,
        },
        friedrichs: friedrichs(cfg),
    };
    let rows = convergence_study(&case, &cfg.verify.levels, &opts)?;
    write(out, "convergence.csv", &format!("# {}\n{}", cfg.header(), study_csv(&rows)))
}

pub fn mesh_info(cfg: &RunConfig) -> Result<String> {
    let mesh: TriMesh = cfg.mesh()?;
    mesh.check_conformity()?;
    let m = mesh.metrics();
    Ok(format!(
        "# {}\nvertices,{}\ntriangles,{}\nh_max,{:e}\nh_min,{:e}\nshape,{:e}\narea,{:e}\ndiameter,{:e}\nwithout_interior_vertex,{}\n",
        cfg.header(),
        mesh.n_vertices(),
        mesh.n_triangles(),
        m.h_max,
        m.h_min,
        m.shape,
        m.area,
        mesh.domain_diameter(),
        mesh.elements_without_interior_vertex()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Solver("x".into())), EXIT_SOLVER);
        assert_eq!(exit_code(&Error::Validation("x".into()).at_step(3)), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
    }

    #[test]
    fn zero_problem_gives_zero_fields() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse("[problem]\nepsilon = 1.0\nT = 0.1\n[mesh]\nn = 3\n[time]\nsteps = 2\n").unwrap();
        let r = cmd_run(&cfg, dir.path()).unwrap();
        assert!(r.trajectory.values.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        let dump = fs::read_to_string(dir.path().join("u_0002.dof")).unwrap();
        assert!(dofvec::load(&dump).unwrap().iter().all(|&x| x == 0.0));
        let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert!(csv.starts_with("# nlcd "));
    }

    #[test]
    fn validation_failure_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        // −½ div a + b = −1 < β
        let cfg = RunConfig::parse(
            "[problem]\nepsilon = 1.0\nT = 0.1\nbeta = 0.5\nb = \"0\"\na1 = \"2*x\"\n[mesh]\nn = 3\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let e = match cmd_run(&cfg, &out) {
            Err(e) => e,
            Ok(_) => panic!("validation should fail"),
        };
        assert_eq!(exit_code(&e), EXIT_VALIDATION);
        assert!(!out.exists());
    }

    #[test]
    fn estimate_columns_for_linear_autonomous_data() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse(
            "[problem]\nepsilon = 0.5\nT = 0.1\nu0 = \"sin(pi*x)*sin(pi*y)\"\nb = \"1\"\nbeta = 1.0\n[mesh]\nn = 4\n[time]\nsteps = 3\n",
        )
        .unwrap();
        cmd_estimate(&cfg, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("estimator.csv")).unwrap();
        let cols: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let (tn, dr) = (
            cols.iter().position(|c| *c == "temporal_nonlinear").unwrap(),
            cols.iter().position(|c| *c == "data_residual").unwrap(),
        );
        for line in csv.lines().skip(2) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f[tn].parse::<f64>().unwrap(), 0.0);
            assert_eq!(f[dr].parse::<f64>().unwrap(), 0.0);
        }
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert!(json["header"].as_str().unwrap().starts_with("nlcd "));
        assert!(json["constants_used"]["c_star_general"].is_number());
        let sums = crate::estimator::radicand_from_csv(&csv);
        let sp = json["totals"]["spatial"].as_f64().unwrap();
        assert!((sums["spatial"] - sp).abs() <= 1e-12 * sp);
    }

    #[test]
    fn mesh_info_lists_metrics() {
        let cfg = RunConfig::parse("[problem]\nepsilon = 1.0\nT = 0.1\n[mesh]\nn = 2\n").unwrap();
        let s = mesh_info(&cfg).unwrap();
        assert!(s.contains("triangles,8"));
    }
}
