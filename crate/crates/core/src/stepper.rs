//! The stabilized θ/ϑ time stepping scheme.
//!
//! Step `n` seeks `u^n` on `T_n` with
//! `(u^n − u^{n−1}, v)/τ + B^{nθ}(U^{nθ}, v) + S^n(U^{nθ}, v) = ⟨N^{nϑ}(U^{nϑ}), v⟩`.
//! All forms are integrated on the common refinement of `T_n` and `T_{n−1}`,
//! where both iterates are exact finite element functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::assemble_b_raw;
use crate::fem::norms::l2_project;
use crate::fem::sparse::{axpy, lincomb, CsrMatrix};
use crate::fem::{energy_matrix, mass_matrix, FeSpace, OverlaySpaces};
use crate::field::{Blend, Point};
use crate::mesh::TriMesh;
use crate::problem::{self, ProblemData, ThetaParams};
use crate::solver::{LinearSolver, SolverOptions};
use crate::stabilization::{assemble_cip, assemble_sd_matrix, assemble_sd_vector, cip_faces, sd_parameters};
use crate::stabilization::{StabKind, StabilizationSpec};

/// Relative scheme residual every accepted step must reach.
pub const SCHEME_TOL: f64 = 1e-10;

/// Nodes `0 = t_0 < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    times: Vec<f64>,
}

impl TimePartition {
    pub fn uniform(t_final: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t_final > 0.0) {
            return Err(Error::InvalidArgument("need at least one step and T > 0".into()));
        }
        let mut times: Vec<f64> = (0..=n_steps).map(|i| t_final * i as f64 / n_steps as f64).collect();
        times[n_steps] = t_final;
        Ok(Self { times })
    }

    /// Steps of length `tau`, the last one shortened to end at `T`.
    pub fn with_tau(t_final: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        let n = ((t_final / tau) - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..n).map(|i| tau * i as f64).collect();
        times.push(t_final);
        Self::from_nodes(times)
    }

    pub fn from_nodes(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidArgument("time nodes must start at 0 and contain a step".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time nodes must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t(&self, n: usize) -> f64 {
        self.times[n]
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.times[n] - self.times[n - 1]
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Replaces every node after `t_n` by steps of length `tau` up to `T`.
    pub fn reschedule(&mut self, n: usize, tau: f64) {
        let t_final = self.t_final();
        let tn = self.times[n];
        self.times.truncate(n + 1);
        if tn >= t_final {
            return;
        }
        let mut t = tn;
        loop {
            let next = t + tau;
            // avoid a sliver step at the end
            if next >= t_final - 1e-3 * tau {
                self.times.push(t_final);
                break;
            }
            self.times.push(next);
            t = next;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Keep going with the last iterate instead of aborting.
    pub allow_nonconvergence: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-11,
            allow_nonconvergence: false,
        }
    }
}

/// What happened during one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub linear_solves: usize,
    pub picard_iterations: usize,
    /// Relative energy-norm increments of the fixed-point iteration.
    pub increments: Vec<f64>,
    pub converged: bool,
    /// Relative algebraic residual of the scheme at the accepted iterate.
    pub residual: f64,
    pub transition: f64,
    pub contraction_estimate: f64,
}

/// Everything the scheme needs besides the meshes.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub problem: ProblemData,
    pub params: ThetaParams,
    pub stab: StabilizationSpec,
    pub solver: SolverOptions,
    pub picard: PicardOptions,
    pub degree: usize,
}

impl Scheme {
    pub fn new(problem: ProblemData) -> Self {
        Self {
            problem,
            params: ThetaParams::default(),
            stab: StabilizationSpec::default(),
            solver: SolverOptions::default(),
            picard: PicardOptions::default(),
            degree: 1,
        }
    }

    pub fn with_params(mut self, params: ThetaParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_stab(mut self, stab: StabilizationSpec) -> Self {
        self.stab = stab;
        self
    }

    /// Whether the right-hand side depends on the unknown.
    pub fn is_implicit_nonlinear(&self) -> bool {
        self.params.vartheta > 0.0 && self.problem.nu > 0.0 && !self.problem.phi.is_constant()
            && !self.problem.g.is_zero()
    }
}

/// Discrete solution `u^0, …, u^N` with its spaces and step records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: TimePartition,
    pub spaces: Vec<Arc<FeSpace>>,
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn u(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn space(&self, n: usize) -> &Arc<FeSpace> {
        &self.spaces[n]
    }

    pub fn t(&self, n: usize) -> f64 {
        self.times.t(n)
    }

    pub fn tau(&self, n: usize) -> f64 {
        self.times.tau(n)
    }
}

/// The assembled overlay operators of one step.
pub struct StepOperator {
    pub ov: OverlaySpaces,
    /// Mass matrix on the overlay space.
    pub mass: CsrMatrix,
    /// `B^{nθ}` plus the matrix part of `S^n` on the overlay space.
    pub lin: CsrMatrix,
    /// SD parameter of the containing new-mesh element, per overlay element.
    pub delta: Vec<f64>,
    pub theta_blend: Blend,
    pub vartheta_blend: Blend,
    pub tau: f64,
}

impl StepOperator {
    pub fn new(scheme: &Scheme, new: &FeSpace, old: &FeSpace, t_prev: f64, t_cur: f64) -> Result<Self> {
        let p = &scheme.problem;
        let ov = OverlaySpaces::new(new, old)?;
        let bt = Blend::new(scheme.params.theta, t_prev, t_cur);
        let bv = Blend::new(scheme.params.vartheta, t_prev, t_cur);
        let a = |x: Point| bt.vector(&p.a, x);
        let b = |x: Point| bt.scalar(p.b.as_ref(), x);
        let space = &ov.space;
        let mass = mass_matrix(space);
        let mut lin = assemble_b_raw(space, p.epsilon, &a, &b);
        let mut delta = Vec::new();
        match scheme.stab.kind {
            StabKind::None => {}
            StabKind::Sd => {
                let d_new = sd_parameters(new.mesh(), &a, scheme.stab.c_s);
                delta = ov.overlay.to_new.iter().map(|&k| d_new[k]).collect();
                lin = lin.add(1.0, &assemble_sd_matrix(space, &delta, p.epsilon, &a, &b), 1.0);
            }
            StabKind::Cip => {
                let (faces, h) = cip_faces(&ov.overlay, new.mesh());
                lin = lin.add(1.0, &assemble_cip(space, &faces, &h, &a, scheme.stab.c_s), 1.0);
            }
        }
        Ok(Self {
            ov,
            mass,
            lin,
            delta,
            theta_blend: bt,
            vartheta_blend: bv,
            tau: t_cur - t_prev,
        })
    }

    /// System matrix on the new space, Dirichlet rows eliminated.
    pub fn system_matrix(&self, theta: f64, new: &FeSpace) -> CsrMatrix {
        self.raw_system_matrix(theta).eliminate(new.dirichlet())
    }

    fn raw_system_matrix(&self, theta: f64) -> CsrMatrix {
        self.mass
            .add(1.0 / self.tau, &self.lin, theta)
            .galerkin(&self.ov.p_new, &self.ov.p_new)
    }

    /// Overlay vector of `⟨N^{nϑ}(U), φ̃_i⟩` (with the source) plus the
    /// SD counterpart moved to the right-hand side.
    pub fn nonlinear_rhs(&self, problem: &ProblemData, u_ov: &[f64]) -> Vec<f64> {
        let space = &self.ov.space;
        let bv = self.vartheta_blend;
        let bt = self.theta_blend;
        let n = space.n_dofs();
        let mut out = vec![0.0; n];
        let has_noise = problem.nu != 0.0 && !problem.g.is_zero();
        let has_source = problem.has_source();
        if !has_noise && !has_source {
            return out;
        }
        let f = |x: Point, u: f64| {
            let mut s = 0.0;
            if has_noise {
                s += problem.nu * problem.phi.eval(u) * bv.scalar(problem.g.as_ref(), x);
            }
            if has_source {
                s += bv.scalar(problem.source.as_ref(), x);
            }
            s
        };
        let rule = crate::fem::QuadratureRule::for_degree(space.quad_degree());
        let nl = space.n_local();
        let v = crate::fem::assembly::assemble_vector(space, &rule, |k, qp, loc| {
            let c = space.local_coeffs(k, u_ov);
            let s = f(qp.x, qp.basis.value(&c));
            for i in 0..nl {
                loc[i] += qp.w * s * qp.basis.phi[i];
            }
        });
        axpy(1.0, &v, &mut out);
        if !self.delta.is_empty() {
            let a = |x: Point| bt.vector(&problem.a, x);
            let w = |x: Point, u: f64| {
                let mut s = 0.0;
                if has_noise {
                    s += problem.nu * problem.phi.eval(u) * bt.scalar(problem.g.as_ref(), x);
                }
                if has_source {
                    s += bt.scalar(problem.source.as_ref(), x);
                }
                s
            };
            let sd = assemble_sd_vector(space, &self.delta, &a, &w, u_ov);
            axpy(1.0, &sd, &mut out);
        }
        out
    }

    /// Part of the right-hand side that only involves `u^{n−1}`, on the new
    /// space.
    pub fn explicit_rhs(&self, theta: f64, w_old: &[f64]) -> Vec<f64> {
        let mut r = self.mass.matvec(w_old);
        for x in r.iter_mut() {
            *x /= self.tau;
        }
        if theta != 1.0 {
            axpy(-(1.0 - theta), &self.lin.matvec(w_old), &mut r);
        }
        self.ov.p_new.transpose().matvec(&r)
    }

    /// `U^{nΘ}` lifted to the overlay.
    pub fn blend_lifted(&self, weight: f64, x: &[f64], w_old: &[f64]) -> Vec<f64> {
        lincomb(weight, &self.ov.lift_new(x), 1.0 - weight, w_old)
    }

    /// Relative algebraic residual of the scheme at `x` given the lifted old
    /// iterate `w_old`.
    pub fn scheme_residual(&self, scheme: &Scheme, new: &FeSpace, x: &[f64], w_old: &[f64]) -> f64 {
        let params = scheme.params;
        let a = self.raw_system_matrix(params.theta);
        let ax = a.matvec(x);
        let r0 = self.explicit_rhs(params.theta, w_old);
        let u_v = self.blend_lifted(params.vartheta, x, w_old);
        let nl = self.ov.p_new.transpose().matvec(&self.nonlinear_rhs(&scheme.problem, &u_v));
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..new.n_dofs() {
            if new.is_dirichlet(i) {
                continue;
            }
            worst = worst.max((ax[i] - r0[i] - nl[i]).abs());
            scale = scale.max(ax[i].abs()).max(r0[i].abs()).max(nl[i].abs());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Solves steps one at a time, reusing factorizations when nothing changed.
pub struct Stepper {
    pub scheme: Scheme,
    cache: Option<Cached>,
}

struct Cached {
    key: (usize, usize, u64),
    op: Arc<StepOperator>,
    solver: Arc<LinearSolver>,
}

impl Stepper {
    pub fn new(scheme: Scheme) -> Self {
        Self { scheme, cache: None }
    }

    fn operator(
        &mut self,
        new: &Arc<FeSpace>,
        old: &Arc<FeSpace>,
        t_prev: f64,
        t_cur: f64,
    ) -> Result<(Arc<StepOperator>, Arc<LinearSolver>)> {
        let key = (
            Arc::as_ptr(new) as usize,
            Arc::as_ptr(old) as usize,
            (t_cur - t_prev).to_bits(),
        );
        let reusable = self.scheme.problem.data_time_independent();
        if reusable {
            if let Some(c) = &self.cache {
                if c.key == key {
                    return Ok((c.op.clone(), c.solver.clone()));
                }
            }
        }
        let op = Arc::new(StepOperator::new(&self.scheme, new, old, t_prev, t_cur)?);
        let a = op.system_matrix(self.scheme.params.theta, new);
        let solver = Arc::new(LinearSolver::new(&a, &self.scheme.solver)?);
        if reusable {
            self.cache = Some(Cached {
                key,
                op: op.clone(),
                solver: solver.clone(),
            });
        }
        Ok((op, solver))
    }

    /// One step from `u_prev` on `old` to the new space.
    pub fn step(
        &mut self,
        u_prev: &[f64],
        old: &Arc<FeSpace>,
        new: &Arc<FeSpace>,
        t_prev: f64,
        t_cur: f64,
    ) -> Result<(Vec<f64>, StepDiagnostics)> {
        if !(t_cur > t_prev) {
            return Err(Error::InvalidArgument("step length must be positive".into()));
        }
        let (op, solver) = self.operator(new, old, t_prev, t_cur)?;
        let scheme = &self.scheme;
        let params = scheme.params;
        let p = &scheme.problem;
        let w_old = op.ov.lift_old(u_prev);
        let r0 = op.explicit_rhs(params.theta, &w_old);
        let pt = op.ov.p_new.transpose();
        let mut diag = StepDiagnostics {
            transition: op.ov.overlay.transition,
            ..Default::default()
        };
        let solve = |u_v: &[f64]| -> Result<Vec<f64>> {
            let mut rhs = r0.clone();
            axpy(1.0, &pt.matvec(&op.nonlinear_rhs(p, u_v)), &mut rhs);
            new.zero_dirichlet(&mut rhs);
            solver.solve(&rhs)
        };
        let x = if !scheme.is_implicit_nonlinear() {
            // the right-hand side only sees u^{n-1}
            let x = solve(&op.blend_lifted(params.vartheta, &vec![0.0; new.n_dofs()], &w_old))?;
            diag.linear_solves = 1;
            diag.picard_iterations = 1;
            diag.converged = true;
            x
        } else {
            self.picard(&op, new, &w_old, &solve, &mut diag, t_prev, t_cur)?
        };
        diag.residual = op.scheme_residual(&self.scheme, new, &x, &w_old);
        if diag.converged && diag.residual > SCHEME_TOL {
            return Err(Error::Solver(format!(
                "scheme residual {:e} above {:e}",
                diag.residual, SCHEME_TOL
            )));
        }
        Ok((x, diag))
    }

    #[allow(clippy::too_many_arguments)]
    fn picard(
        &self,
        op: &StepOperator,
        new: &FeSpace,
        w_old: &[f64],
        solve: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        diag: &mut StepDiagnostics,
        t_prev: f64,
        t_cur: f64,
    ) -> Result<Vec<f64>> {
        let scheme = &self.scheme;
        let p = &scheme.problem;
        let vt = scheme.params.vartheta;
        let times = [t_prev, t_cur];
        let (gamma, _) = problem::gamma_sampled(p, new.mesh(), &times);
        let lam = problem::lambda(problem::friedrichs_bound(new.mesh()), p.epsilon, p.beta);
        diag.contraction_estimate = vt * (t_cur - t_prev) * p.nu * p.lipschitz_l * gamma * lam;
        if diag.contraction_estimate > 0.5 {
            log::warn!(
                "fixed-point contraction estimate {:.3} exceeds 0.5 on [{t_prev}, {t_cur}]",
                diag.contraction_estimate
            );
        }
        let energy = energy_matrix(new, p.epsilon, p.beta);
        let enorm = |v: &[f64]| energy.inner(v, v).max(0.0).sqrt();
        let mut u_v = w_old.to_vec();
        let mut x_prev: Option<Vec<f64>> = None;
        let opts = scheme.picard;
        for it in 1..=opts.max_iter.max(1) {
            let x = solve(&u_v)?;
            diag.linear_solves += 1;
            diag.picard_iterations = it;
            u_v = op.blend_lifted(vt, &x, w_old);
            if let Some(xp) = &x_prev {
                let d = enorm(&lincomb(1.0, &x, -1.0, xp));
                let s = enorm(&x);
                let inc = if d == 0.0 { 0.0 } else { d / s.max(f64::MIN_POSITIVE) };
                diag.increments.push(inc);
                if inc <= opts.tol {
                    diag.converged = true;
                    return Ok(x);
                }
            }
            x_prev = Some(x);
        }
        let last = *diag.increments.last().unwrap_or(&f64::INFINITY);
        if opts.allow_nonconvergence {
            log::warn!("fixed-point iteration stopped at increment {last:e}");
            return Ok(x_prev.unwrap());
        }
        Err(Error::PicardDiverged {
            iterations: diag.picard_iterations,
            increment: last,
        })
    }
}

/// Produces the mesh and step length for the next step once step `n` is done.
pub trait StepHook {
    fn after_step(&mut self, n: usize, traj: &Trajectory) -> Result<NextStep>;
}

#[derive(Debug, Default)]
pub struct NextStep {
    pub mesh: Option<TriMesh>,
    pub tau: Option<f64>,
}

struct NoHook;

impl StepHook for NoHook {
    fn after_step(&mut self, _: usize, _: &Trajectory) -> Result<NextStep> {
        Ok(NextStep::default())
    }
}

/// `u^0 = π_0 u_0`.
pub fn initial_value(problem: &ProblemData, space: &FeSpace) -> Result<Vec<f64>> {
    if problem.u0.is_zero() {
        return Ok(vec![0.0; space.n_dofs()]);
    }
    let u0 = problem.u0.clone();
    l2_project(space, &move |x| u0.value(x, 0.0))
}

/// Runs all steps on a fixed mesh and partition.
pub fn run(scheme: &Scheme, mesh: &TriMesh, times: &TimePartition) -> Result<Trajectory> {
    run_with(scheme, mesh, times.clone(), &mut NoHook)
}

/// Runs the scheme, asking `hook` for the next mesh and step after each step.
pub fn run_with(scheme: &Scheme, mesh: &TriMesh, times: TimePartition, hook: &mut dyn StepHook) -> Result<Trajectory> {
    scheme.problem.check()?;
    scheme.stab.check()?;
    let space = Arc::new(FeSpace::new(mesh.clone(), scheme.degree)?);
    let u0 = initial_value(&scheme.problem, &space)?;
    let mut traj = Trajectory {
        times,
        spaces: vec![space.clone()],
        values: vec![u0],
        diagnostics: Vec::new(),
    };
    let mut stepper = Stepper::new(scheme.clone());
    let mut next_space = space;
    let mut n = 1;
    while n <= traj.times.n_steps() {
        let old = traj.spaces[n - 1].clone();
        let (t0, t1) = (traj.times.t(n - 1), traj.times.t(n));
        let (x, d) = stepper
            .step(&traj.values[n - 1], &old, &next_space, t0, t1)
            .map_err(|e| e.at_step(n))?;
        traj.spaces.push(next_space.clone());
        traj.values.push(x);
        traj.diagnostics.push(d);
        let next = hook.after_step(n, &traj).map_err(|e| e.at_step(n))?;
        if let Some(m) = next.mesh {
            if m.leaves() != next_space.mesh().leaves() {
                next_space = Arc::new(FeSpace::new(m, scheme.degree)?);
            }
        }
        if let Some(tau) = next.tau {
            if n < traj.times.n_steps() {
                traj.times.reschedule(n, tau);
            }
        }
        n += 1;
    }
    Ok(traj)
}
