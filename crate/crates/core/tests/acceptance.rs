//! Acceptance criteria 1 to 11. Each test prints one `PASS`/`FAIL` line.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nlcd::adaptivity::{AdaptPolicy, AdaptiveHook};
use nlcd::estimator::{nonlinear_time_factor, Estimator, FriedrichsChoice};
use nlcd::fem::{l2_norm, FeSpace};
use nlcd::field::{constant, Phi};
use nlcd::mesh::TriMesh;
use nlcd::problem::{kappa, kappa_tilde, lambda, DerivedConstants, ProblemData};
use nlcd::solver::SolverOptions;
use nlcd::stepper::{run, run_with, NextStep, StepHook, TimePartition, Trajectory, SCHEME_TOL};
use nlcd::verification::{
    convective_dual_oracle, convergence_study, friedrichs_eig, noise_difference_oracle, residual_decomposition_check,
    study_steps, FineSpace, ManufacturedCase, RieszSolver, StudyOptions, StudyRow,
};
use rand::{Rng, SeedableRng};

fn report(id: u32, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Adapts after the first two steps only, so the run sees two mesh changes.
struct TwoLevels<'a>(AdaptiveHook<'a>);

impl StepHook for TwoLevels<'_> {
    fn after_step(&mut self, n: usize, traj: &Trajectory) -> nlcd::Result<NextStep> {
        if n <= 2 {
            self.0.after_step(n, traj)
        } else {
            Ok(NextStep::default())
        }
    }
}

struct Adapted {
    case: ManufacturedCase,
    traj: Trajectory,
    seconds: f64,
}

fn adapted_nonlinear() -> &'static Adapted {
    static CELL: OnceLock<Adapted> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let case = ManufacturedCase::nonlinear();
        let scheme = case.scheme();
        let mesh = TriMesh::unit_square(8).unwrap();
        let policy = AdaptPolicy {
            enabled: true,
            ..AdaptPolicy::default()
        };
        let mut hook = TwoLevels(AdaptiveHook::new(&scheme, policy, &mesh));
        let times = TimePartition::uniform(case.problem.t_final, 8).unwrap();
        let traj = run_with(&scheme, &mesh, times, &mut hook).unwrap();
        Adapted {
            case,
            traj,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_01_residual_decomposition() {
    let a = adapted_nonlinear();
    let scheme = a.case.scheme();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=a.traj.n_steps() {
        let c = residual_decomposition_check(&a.traj, &scheme, n, 50, 17).unwrap();
        worst = worst.max(c.relative);
    }
    let changes = (1..=a.traj.n_steps())
        .filter(|&n| a.traj.space(n).mesh().leaves() != a.traj.space(n - 1).mesh().leaves())
        .count();
    let secs = a.seconds + start.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && changes == 2 && secs < 30.0;
    report(
        1,
        pass,
        &format!("max relative discrepancy {worst:.2e}, {changes} mesh changes, {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_scheme_residual() {
    let a = adapted_nonlinear();
    let mut worst = a.traj.diagnostics.iter().map(|d| d.residual).fold(0.0, f64::max);
    // a run that refines and coarsens every step
    let case = ManufacturedCase::robustness(1e-4);
    let scheme = case.scheme();
    let mesh = TriMesh::unit_square(6).unwrap();
    let policy = AdaptPolicy {
        enabled: true,
        coarsen_fraction: 0.2,
        ..AdaptPolicy::default()
    };
    let mut hook = AdaptiveHook::new(&scheme, policy, &mesh);
    let traj = run_with(&scheme, &mesh, TimePartition::uniform(0.1, 6).unwrap(), &mut hook).unwrap();
    let coarsened: usize = hook.records.iter().map(|r| r.report.removed_vertices).sum();
    worst = traj.diagnostics.iter().map(|d| d.residual).fold(worst, f64::max);
    let cn = ManufacturedCase::heat(0.5);
    let t = run(&cn.scheme(), &TriMesh::unit_square(8).unwrap(), &TimePartition::uniform(0.1, 4).unwrap()).unwrap();
    worst = t.diagnostics.iter().map(|d| d.residual).fold(worst, f64::max);
    let pass = worst <= SCHEME_TOL && coarsened > 0;
    report(
        2,
        pass,
        &format!("worst relative residual {worst:.2e}, {coarsened} vertices removed by coarsening"),
    );
    assert!(pass);
}

struct Study {
    rows: Vec<StudyRow>,
    seconds: f64,
}

fn heat_study(theta: f64) -> &'static Study {
    static IMPLICIT: OnceLock<Study> = OnceLock::new();
    static CN: OnceLock<Study> = OnceLock::new();
    let cell = if theta == 1.0 { &IMPLICIT } else { &CN };
    cell.get_or_init(|| {
        let start = Instant::now();
        let rows = convergence_study(&ManufacturedCase::heat(theta), &[4, 8, 16, 32], &StudyOptions::default()).unwrap();
        Study {
            rows,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_03_heat_convergence() {
    let mut pass = true;
    let mut detail = Vec::new();
    for theta in [1.0, 0.5] {
        let s = heat_study(theta);
        let rates: Vec<f64> = s.rows.iter().filter_map(|r| r.rate_energy).collect();
        pass &= rates.len() == 3 && rates.iter().all(|r| (0.9..=1.1).contains(r)) && s.seconds < 120.0;
        let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
        detail.push(format!("theta={theta}: rates [{}] in {:.0} s", shown.join(", "), s.seconds));
    }
    report(3, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_04_effectivity() {
    let mut pass = true;
    let mut detail = Vec::new();
    for theta in [1.0, 0.5] {
        let eff: Vec<f64> = heat_study(theta).rows.iter().map(|r| r.effectivity).collect();
        let (a, b) = (eff[eff.len() - 2], eff[eff.len() - 1]);
        let swing = a.max(b) / a.min(b);
        pass &= eff.iter().all(|e| (0.05..=50.0).contains(e)) && swing <= 2.0;
        let shown: Vec<String> = eff.iter().map(|e| format!("{e:.2}")).collect();
        detail.push(format!("theta={theta}: [{}] finest swing {swing:.3}", shown.join(", ")));
    }
    report(4, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_05_robustness_in_epsilon() {
    let eff: Vec<f64> = [1.0, 1e-2, 1e-4]
        .iter()
        .map(|&e| {
            convergence_study(&ManufacturedCase::robustness(e), &[16], &StudyOptions::default()).unwrap()[0].effectivity
        })
        .collect();
    let band = eff.iter().cloned().fold(0.0, f64::max) / eff.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = band <= 20.0 && eff.iter().all(|e| e.is_finite() && *e > 0.0);
    report(
        5,
        pass,
        &format!("effectivity at n=16 for eps 1, 1e-2, 1e-4: {eff:.3?}, band x{band:.2}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_nonlinear_time_factor() {
    let tau = 0.3;
    let expected = [(0.0, tau / 3.0), (0.25, 7.0 * tau / 48.0), (0.5, tau / 12.0), (1.0, tau / 3.0)];
    let worst = expected
        .iter()
        .map(|&(vt, want)| (tau * nonlinear_time_factor(vt) - want).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 1e-15;
    report(6, pass, &format!("max deviation {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_07_lipschitz_bound() {
    let coarse = Arc::new(FeSpace::new(TriMesh::unit_square(4).unwrap(), 1).unwrap());
    let fine = FineSpace::new(coarse.mesh(), 2).unwrap();
    let c_f = friedrichs_eig(&fine.space).unwrap();
    let mut p = ProblemData::heat(1.0, constant(0.0), 1.0);
    p.nu = 1.0;
    p.phi = Phi::OnePlusAbs;
    p.lipschitz_l = 1.0;
    p.g = constant(1.0);
    let lam = lambda(c_f, p.epsilon, p.beta);
    let riesz = RieszSolver::new(fine.space.clone(), p.epsilon, p.beta, &SolverOptions::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut draw = || -> Vec<f64> {
            let mut u: Vec<f64> = (0..coarse.n_dofs()).map(|_| rng.random_range(-2.0..2.0)).collect();
            coarse.zero_dirichlet(&mut u);
            u
        };
        let (u1, u2) = (draw(), draw());
        let oracle = noise_difference_oracle(&fine, &riesz, &coarse, &p, &u1, &u2, 0.0).unwrap();
        let d: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a - b).collect();
        worst = worst.max(oracle / (lam * l2_norm(&coarse, &d)));
    }
    let pass = worst <= 1.0 + 1e-6;
    report(7, pass, &format!("max oracle / (lambda ||u1-u2||) = {worst:.4}, C_F = {c_f:.5}"));
    assert!(pass);
}

#[test]
fn criterion_08_convective_dual_norm() {
    let case = ManufacturedCase::robustness(1e-2);
    let scheme = case.scheme();
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [4, 8, 16] {
        let mesh = TriMesh::unit_square(n).unwrap();
        let times = TimePartition::uniform(case.problem.t_final, study_steps(n, 1.0)).unwrap();
        let traj = run(&scheme, &mesh, &times).unwrap();
        let rep = Estimator::new(&scheme, &traj, FriedrichsChoice::Diameter)
            .estimate(&traj)
            .unwrap();
        let (mut lo, mut hi, mut dd) = (f64::INFINITY, 0.0f64, f64::INFINITY);
        for s in &rep.steps {
            let o = convective_dual_oracle(&traj, &scheme, s.n, 2).unwrap();
            lo = lo.min(s.conv_domconv / o);
            hi = hi.max(s.conv_domconv / o);
            dd = dd.min(s.conv_domdiff / o);
        }
        pass &= lo >= 0.05 && hi <= 20.0 && dd >= 1.0 - 1e-8;
        detail.push(format!("n={n}: ratio [{lo:.2}, {hi:.2}], min domdiff/oracle {dd:.2}"));
    }
    report(8, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_09_friedrichs() {
    let space = FeSpace::new(TriMesh::unit_square(4).unwrap().refine_uniform_times(5), 1).unwrap();
    let c_f = friedrichs_eig(&space).unwrap();
    let exact = 1.0 / (std::f64::consts::PI * 2f64.sqrt());
    let rel = (c_f - exact).abs() / exact;
    let pass = rel <= 0.02;
    report(9, pass, &format!("C_F = {c_f:.5}, exact {exact:.5}, relative error {rel:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_10_constants() {
    let k = kappa(0.5, 1.0, 0.1, 0.25, 2.0);
    let kt = kappa_tilde(0.5, 1.0, 4.0 / 3.0, 0.25, 2.0);
    let mut p = ProblemData::heat(1.0, constant(0.0), 1.0);
    p.c_b = 4.0 / 3.0;
    let dc = DerivedConstants::from_gamma(&p, 0.3, 0.0, vec![]);
    let want_c = (4.0 + 3.0 * p.c_b * p.c_b).sqrt();
    let got_c = dc.c_star_small().unwrap_or(f64::NAN);
    let errs = [(k - 0.125).abs(), (kt - 125.0 / 24.0).abs() / (125.0 / 24.0), (got_c - want_c).abs() / want_c];
    let pass = errs.iter().all(|e| *e <= 1e-15);
    report(10, pass, &format!("kappa {k}, kappa~ {kt}, c* {got_c} (want {want_c}); deviations {errs:?}"));
    assert!(pass);
}

const DETERMINISM_CONFIG: &str = r#"
[problem]
epsilon = 0.1
T = 0.05
nu = 1.0
beta = 0.75
c_b = 1.3333333333333333
a1 = "1"
a2 = "0.5"
b = "1"
g = "x*y + 1"
u0 = "sin(pi*x)*sin(pi*y)"

[mesh]
n = 8

[time]
steps = 4
theta = 1.0
vartheta = 0.5

[stabilization]
kind = "sd"

[adapt]
enabled = true

[verify]
case = "nonlinear"
levels = [4, 8]
fine_levels = 2
samples = 10
"#;

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        for cmd in ["estimate", "verify", "convergence"] {
            let status = Command::new(env!("CARGO_BIN_EXE_nlcd"))
                .args([cmd, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .args(["--threads", threads])
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} with {threads} threads: {status}");
        }
        outputs.push(csv_files(&out));
    }
    let names: Vec<&String> = outputs[0].keys().collect();
    let same = outputs[0] == outputs[1] && names.len() >= 5;
    report(11, same, &format!("{} CSV files compared: {names:?}", names.len()));
    assert!(same);
}
