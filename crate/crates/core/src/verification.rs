//! Manufactured solutions, fine-space dual-norm oracles and error studies.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorReport, Estimator, FriedrichsChoice};
use crate::fem::assembly::{assemble_vector, element_qps};
use crate::fem::quadrature::{LineRule, QuadratureRule};
use crate::fem::sparse::{dot, lincomb};
use crate::fem::space::Basis;
use crate::fem::{energy_matrix, mass_matrix, stiffness_matrix, FeSpace, OverlaySpaces};
use crate::field::{constant, from_expr, Blend, Phi, Point, VectorField};
use crate::mesh::{NodeId, TriMesh};
use crate::par;
use crate::problem::{ProblemData, ThetaParams};
use crate::solver::{LinearSolver, SolverOptions};
use crate::stabilization::{StabKind, StabilizationSpec};
use crate::stepper::{run, Scheme, TimePartition, Trajectory};

/// Exact solution with the derivatives the oracles need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactValue {
    pub u: f64,
    pub grad: [f64; 2],
    pub dt: f64,
    pub lap: f64,
}

pub type ExactFn = Arc<dyn Fn(Point, f64) -> ExactValue + Send + Sync>;

#[derive(Clone)]
pub struct ManufacturedCase {
    pub id: String,
    pub problem: ProblemData,
    pub params: ThetaParams,
    pub stab: StabilizationSpec,
    pub exact: ExactFn,
}

/// `sin(πx) sin(πy) e^{−t}`
pub fn separable_exact() -> ExactFn {
    Arc::new(|p: Point, t: f64| {
        let (sx, cx) = (PI * p[0]).sin_cos();
        let (sy, cy) = (PI * p[1]).sin_cos();
        let e = (-t).exp();
        ExactValue {
            u: sx * sy * e,
            grad: [PI * cx * sy * e, PI * sx * cy * e],
            dt: -sx * sy * e,
            lap: -2.0 * PI * PI * sx * sy * e,
        }
    })
}

const U_EXPR: &str = "sin(pi*x)*sin(pi*y)*exp(-t)";

/// `∂_t u − εΔu + a·∇u + bu` for the separable solution, constant `a`, `b`.
fn forcing_expr(eps: f64, a: [f64; 2], b: f64) -> String {
    let c = -1.0 + 2.0 * eps * PI * PI + b;
    let mut s = format!("({c})*sin(pi*x)*sin(pi*y)*exp(-t)");
    if a != [0.0, 0.0] {
        s += &format!(
            " + pi*exp(-t)*(({})*cos(pi*x)*sin(pi*y) + ({})*sin(pi*x)*cos(pi*y))",
            a[0], a[1]
        );
    }
    s
}

impl ManufacturedCase {
    /// `ε = 1`, no convection, reaction or noise; an additive source.
    pub fn heat(theta: f64) -> Self {
        let mut p = ProblemData::heat(1.0, from_expr(U_EXPR).unwrap(), 0.1);
        p.source = from_expr(&forcing_expr(1.0, [0.0, 0.0], 0.0)).unwrap();
        Self {
            id: "heat".into(),
            problem: p,
            params: ThetaParams::new(theta, 0.0).unwrap(),
            stab: StabilizationSpec::none(),
            exact: separable_exact(),
        }
    }

    /// `a = (1, ½)`, `b = 1`, `β = ¾`, `C_b = 4/3`, streamline diffusion.
    pub fn robustness(eps: f64) -> Self {
        let a = [1.0, 0.5];
        let mut p = ProblemData::heat(eps, from_expr(U_EXPR).unwrap(), 0.1);
        p.a = VectorField::constant(a[0], a[1]);
        p.b = constant(1.0);
        p.beta = 0.75;
        p.c_b = 4.0 / 3.0;
        p.source = from_expr(&forcing_expr(eps, a, 1.0)).unwrap();
        Self {
            id: format!("robustness_{eps}"),
            problem: p,
            params: ThetaParams::default(),
            stab: StabilizationSpec::new(StabKind::Sd, 0.5).unwrap(),
            exact: separable_exact(),
        }
    }

    /// Noise `ν(1 + |u|) g` with `g` chosen so that the separable solution
    /// solves the equation without a source.
    pub fn nonlinear() -> Self {
        let (eps, a, b) = (0.1, [1.0, 0.5], 1.0);
        let mut p = ProblemData::heat(eps, from_expr(U_EXPR).unwrap(), 0.1);
        p.nu = 1.0;
        p.phi = Phi::OnePlusAbs;
        p.lipschitz_l = 1.0;
        p.a = VectorField::constant(a[0], a[1]);
        p.b = constant(b);
        p.beta = 0.75;
        p.c_b = 4.0 / 3.0;
        p.g = from_expr(&format!("({})/(1 + abs({U_EXPR}))", forcing_expr(eps, a, b))).unwrap();
        Self {
            id: "nonlinear".into(),
            problem: p,
            params: ThetaParams::new(1.0, 0.5).unwrap(),
            stab: StabilizationSpec::new(StabKind::Sd, 0.5).unwrap(),
            exact: separable_exact(),
        }
    }

    pub fn by_id(id: &str) -> Option<Self> {
        match id {
            "heat" => Some(Self::heat(1.0)),
            "heat_cn" => Some(Self::heat(0.5)),
            "nonlinear" => Some(Self::nonlinear()),
            _ => id.strip_prefix("robustness_").and_then(|e| e.parse().ok()).map(Self::robustness),
        }
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::new(self.problem.clone())
            .with_params(self.params)
            .with_stab(self.stab)
    }

    /// Largest pointwise residual of the exact solution in the equation.
    pub fn max_pointwise_residual(&self, points: &[Point], times: &[f64]) -> f64 {
        let p = &self.problem;
        let mut m = 0.0f64;
        for &t in times {
            for &x in points {
                let e = (self.exact)(x, t);
                let a = p.a.value(x, t);
                let r = e.dt - p.epsilon * e.lap + a[0] * e.grad[0] + a[1] * e.grad[1] + p.b.value(x, t) * e.u
                    - p.nu * p.phi.eval(e.u) * p.g.value(x, t)
                    - p.source.value(x, t);
                m = m.max(r.abs());
            }
        }
        m
    }
}

/// Energy-norm Riesz solves on a fixed space.
pub struct RieszSolver {
    pub space: Arc<FeSpace>,
    solver: LinearSolver,
}

impl RieszSolver {
    pub fn new(space: Arc<FeSpace>, eps: f64, beta: f64, opts: &SolverOptions) -> Result<Self> {
        if eps <= 0.0 && beta <= 0.0 {
            return Err(Error::Validation("energy norm needs ε > 0 or β > 0".into()));
        }
        let a = energy_matrix(&space, eps, beta).eliminate(space.dirichlet());
        let solver = LinearSolver::new(&a, opts)?;
        Ok(Self { space, solver })
    }

    pub fn riesz(&self, functional: &[f64]) -> Result<Vec<f64>> {
        let mut l = functional.to_vec();
        self.space.zero_dirichlet(&mut l);
        if l.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; l.len()]);
        }
        self.solver.solve(&l)
    }

    /// `sup ⟨ℓ, v⟩ / ‖v‖_E` over the space, `= ‖w‖_E` for the Riesz `w`.
    pub fn dual_norm(&self, functional: &[f64]) -> Result<f64> {
        let w = self.riesz(functional)?;
        let mut l = functional.to_vec();
        self.space.zero_dirichlet(&mut l);
        Ok(dot(&w, &l).max(0.0).sqrt())
    }
}

pub fn dual_norm_oracle(functional: &[f64], eps: f64, beta: f64, space: Arc<FeSpace>) -> Result<f64> {
    RieszSolver::new(space, eps, beta, &SolverOptions::default())?.dual_norm(functional)
}

/// A uniformly refined copy of a mesh with the parent of each element.
pub struct FineSpace {
    pub space: Arc<FeSpace>,
    pub parent: Vec<usize>,
}

impl FineSpace {
    pub fn new(coarse: &TriMesh, levels: usize) -> Result<Self> {
        let fine = coarse.refine_uniform_times(levels);
        let parent = fine.common_refinement(coarse)?.to_old;
        Ok(Self {
            space: Arc::new(FeSpace::new(fine, 1)?),
            parent,
        })
    }

    /// `∫ f v` for every fine basis function, `f` seeing the parent element
    /// and the fine basis at the point.
    pub fn functional<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, Point, &Basis) -> f64 + Sync,
    {
        let rule = QuadratureRule::degree6();
        assemble_vector(&self.space, &rule, |k, qp, loc| {
            let s = qp.w * f(self.parent[k], qp.x, &qp.basis);
            for i in 0..3 {
                loc[i] += s * qp.basis.phi[i];
            }
        })
    }

    /// Like `functional` with an extra gradient part `∫ f v + G·∇v`.
    pub fn functional_with_grad<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, Point) -> (f64, [f64; 2]) + Sync,
    {
        let rule = QuadratureRule::degree6();
        assemble_vector(&self.space, &rule, |k, qp, loc| {
            let (s, g) = f(self.parent[k], qp.x);
            for i in 0..3 {
                loc[i] += qp.w * (s * qp.basis.phi[i] + g[0] * qp.basis.grad[i][0] + g[1] * qp.basis.grad[i][1]);
            }
        })
    }
}

/// Values and gradients of a discrete function at a point of element `k`.
fn eval_at(space: &FeSpace, k: usize, u: &[f64], x: Point) -> (f64, [f64; 2]) {
    let b = space.basis_at(k, x);
    let c = space.local_coeffs(k, u);
    (b.value(&c), b.gradient(&c))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepError {
    pub n: usize,
    pub sup_l2: f64,
    pub energy_sq: f64,
    pub dual_sq: f64,
}

impl StepError {
    pub fn x_norm(&self) -> f64 {
        (self.sup_l2 * self.sup_l2 + self.energy_sq + self.dual_sq).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub sup_l2: f64,
    pub energy: f64,
    pub dual: f64,
    pub x_norm: f64,
    pub steps: Vec<StepError>,
}

#[derive(Debug, Clone, Copy)]
pub struct ErrorOptions {
    /// Uniform refinements of the overlay mesh for the Riesz problems.
    pub fine_levels: usize,
    pub with_dual: bool,
}

impl Default for ErrorOptions {
    fn default() -> Self {
        Self {
            fine_levels: 4,
            with_dual: true,
        }
    }
}

/// Fine space and Riesz solver, rebuilt only when the overlay changes.
struct FineCache {
    key: Vec<NodeId>,
    fine: FineSpace,
    riesz: RieszSolver,
}

struct FineCacheSlot(Option<FineCache>);

impl FineCacheSlot {
    fn get(&mut self, mesh: &TriMesh, levels: usize, eps: f64, beta: f64) -> Result<&FineCache> {
        if !matches!(&self.0, Some(c) if c.key == mesh.leaves()) {
            let fine = FineSpace::new(mesh, levels)?;
            let riesz = RieszSolver::new(fine.space.clone(), eps, beta, &SolverOptions::default())?;
            self.0 = Some(FineCache {
                key: mesh.leaves().to_vec(),
                fine,
                riesz,
            });
        }
        Ok(self.0.as_ref().unwrap())
    }
}

/// `‖e(t)‖²` and `‖∇e(t)‖²` for `u_I(t) = (1 − s) u_old + s u_new`.
fn error_norms(space: &FeSpace, u: &[f64], exact: &ExactFn, t: f64) -> (f64, f64) {
    let rule = QuadratureRule::degree6();
    let parts = par::map_indexed(space.mesh().n_triangles(), |k| {
        let c = space.local_coeffs(k, u);
        let (mut l2, mut h1) = (0.0, 0.0);
        for qp in element_qps(space, k, &rule) {
            let e = exact(qp.x, t);
            let d = e.u - qp.basis.value(&c);
            let g = qp.basis.gradient(&c);
            l2 += qp.w * d * d;
            h1 += qp.w * ((e.grad[0] - g[0]).powi(2) + (e.grad[1] - g[1]).powi(2));
        }
        (l2, h1)
    });
    parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// True errors in the X-norm. The exact solution enters at quadrature
/// points; the dual part uses Riesz problems on a refined overlay.
pub fn true_errors(traj: &Trajectory, case: &ManufacturedCase, opts: ErrorOptions) -> Result<ErrorReport> {
    let p = &case.problem;
    let (eps, beta) = (p.epsilon, p.beta);
    let gauss = LineRule::gauss(3);
    let mut cache = FineCacheSlot(None);
    let mut steps = Vec::with_capacity(traj.n_steps());
    for n in 1..=traj.n_steps() {
        let ov = OverlaySpaces::new(traj.space(n), traj.space(n - 1))?;
        let (un, uo) = (ov.lift_new(traj.u(n)), ov.lift_old(traj.u(n - 1)));
        let (t0, tau) = (traj.t(n - 1), traj.tau(n));
        let at = |s: f64| lincomb(s, &un, 1.0 - s, &uo);
        let mut st = StepError { n, ..Default::default() };
        for k in 0..5 {
            let s = k as f64 / 4.0;
            let (l2, _) = error_norms(&ov.space, &at(s), &case.exact, t0 + s * tau);
            st.sup_l2 = st.sup_l2.max(l2.sqrt());
        }
        let du = lincomb(1.0 / tau, &un, -1.0 / tau, &uo);
        for (s, w) in gauss.points.iter().zip(&gauss.weights) {
            let t = t0 + s * tau;
            let ui = at(*s);
            let (l2, h1) = error_norms(&ov.space, &ui, &case.exact, t);
            st.energy_sq += tau * w * (eps * h1 + beta * l2);
            if opts.with_dual {
                let c = cache.get(ov.space.mesh(), opts.fine_levels, eps, beta)?;
                let exact = &case.exact;
                let l = c.fine.functional(|k, x, _| {
                    let e = exact(x, t);
                    let (_, g) = eval_at(&ov.space, k, &ui, x);
                    let (dt, _) = eval_at(&ov.space, k, &du, x);
                    let a = p.a.value(x, t);
                    e.dt - dt + a[0] * (e.grad[0] - g[0]) + a[1] * (e.grad[1] - g[1])
                });
                st.dual_sq += tau * w * c.riesz.dual_norm(&l)?.powi(2);
            }
        }
        steps.push(st);
    }
    let sup_l2 = steps.iter().map(|s| s.sup_l2).fold(0.0, f64::max);
    let energy = steps.iter().map(|s| s.energy_sq).sum::<f64>().sqrt();
    let dual = steps.iter().map(|s| s.dual_sq).sum::<f64>().sqrt();
    Ok(ErrorReport {
        sup_l2,
        energy,
        dual,
        x_norm: (sup_l2 * sup_l2 + energy * energy + dual * dual).sqrt(),
        steps,
    })
}

/// Oracle `‖R(u_I)‖_{L²(t_{n−1},t_n;H^{−1})}` of one step.
pub fn residual_dual_norm(traj: &Trajectory, scheme: &Scheme, n: usize, fine_levels: usize) -> Result<f64> {
    let p = &scheme.problem;
    let ov = OverlaySpaces::new(traj.space(n), traj.space(n - 1))?;
    let (un, uo) = (ov.lift_new(traj.u(n)), ov.lift_old(traj.u(n - 1)));
    let (t0, tau) = (traj.t(n - 1), traj.tau(n));
    let fine = FineSpace::new(ov.space.mesh(), fine_levels)?;
    let riesz = RieszSolver::new(fine.space.clone(), p.epsilon, p.beta, &SolverOptions::default())?;
    let du = lincomb(1.0 / tau, &un, -1.0 / tau, &uo);
    let gauss = LineRule::gauss(3);
    let mut acc = 0.0;
    for (s, w) in gauss.points.iter().zip(&gauss.weights) {
        let t = t0 + s * tau;
        let ui = lincomb(*s, &un, 1.0 - s, &uo);
        let l = fine.functional_with_grad(|k, x| {
            let (u, g) = eval_at(&ov.space, k, &ui, x);
            let (dt, _) = eval_at(&ov.space, k, &du, x);
            let a = p.a.value(x, t);
            let r = p.nu * p.phi.eval(u) * p.g.value(x, t) + p.source.value(x, t)
                - dt
                - a[0] * g[0]
                - a[1] * g[1]
                - p.b.value(x, t) * u;
            (r, [-p.epsilon * g[0], -p.epsilon * g[1]])
        });
        acc += tau * w * riesz.dual_norm(&l)?.powi(2);
    }
    Ok(acc.sqrt())
}

/// Oracle `‖a^{nθ}·∇δu‖_*` of step `n`, with `δu = u^n − u^{n−1}`.
pub fn convective_dual_oracle(traj: &Trajectory, scheme: &Scheme, n: usize, fine_levels: usize) -> Result<f64> {
    let p = &scheme.problem;
    let ov = OverlaySpaces::new(traj.space(n), traj.space(n - 1))?;
    let du = lincomb(1.0, &ov.lift_new(traj.u(n)), -1.0, &ov.lift_old(traj.u(n - 1)));
    let bt = Blend::new(scheme.params.theta, traj.t(n - 1), traj.t(n));
    let fine = FineSpace::new(ov.space.mesh(), fine_levels)?;
    let l = fine.functional(|k, x, _| {
        let (_, g) = eval_at(&ov.space, k, &du, x);
        let a = bt.vector(&p.a, x);
        a[0] * g[0] + a[1] * g[1]
    });
    dual_norm_oracle(&l, p.epsilon, p.beta, fine.space)
}

/// Oracle `‖N(u_1) − N(u_2)‖_*` at time `t` for `u_1`, `u_2` on `coarse`.
pub fn noise_difference_oracle(
    fine: &FineSpace,
    riesz: &RieszSolver,
    coarse: &FeSpace,
    p: &ProblemData,
    u1: &[f64],
    u2: &[f64],
    t: f64,
) -> Result<f64> {
    let l = fine.functional(|k, x, _| {
        let (a, _) = eval_at(coarse, k, u1, x);
        let (b, _) = eval_at(coarse, k, u2, x);
        p.nu * (p.phi.eval(a) - p.phi.eval(b)) * p.g.value(x, t)
    });
    riesz.dual_norm(&l)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub max_discrepancy: f64,
    pub max_term: f64,
    pub relative: f64,
    /// `max |R_τ − R_τ,lin − R_τ,nonlin|`
    pub split_discrepancy: f64,
    pub max_nonlinear: f64,
    pub max_data: f64,
}

/// Evaluates `⟨R⟩` and its temporal, spatial and data parts for random
/// discrete test functions at random times of step `n`.
pub fn residual_decomposition_check(
    traj: &Trajectory,
    scheme: &Scheme,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<DecompositionCheck> {
    let p = &scheme.problem;
    let (th, vt) = (scheme.params.theta, scheme.params.vartheta);
    let ov = OverlaySpaces::new(traj.space(n), traj.space(n - 1))?;
    let space = &ov.space;
    let (un, uo) = (ov.lift_new(traj.u(n)), ov.lift_old(traj.u(n - 1)));
    let (t0, t1, tau) = (traj.t(n - 1), traj.t(n), traj.tau(n));
    let bt = Blend::new(th, t0, t1);
    let bv = Blend::new(vt, t0, t1);
    let u_th = lincomb(th, &un, 1.0 - th, &uo);
    let u_vt = lincomb(vt, &un, 1.0 - vt, &uo);
    let du = lincomb(1.0 / tau, &un, -1.0 / tau, &uo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let rule = QuadratureRule::degree6();
    let mut out = DecompositionCheck::default();
    for _ in 0..samples {
        let s: f64 = rng.random_range(0.0..1.0);
        let t = t0 + s * tau;
        let mut v: Vec<f64> = (0..space.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        space.zero_dirichlet(&mut v);
        let ui = lincomb(s, &un, 1.0 - s, &uo);
        let diff = lincomb(1.0, &u_th, -1.0, &ui);
        let terms = par::map_indexed(space.mesh().n_triangles(), |k| {
            let cv = space.local_coeffs(k, &v);
            let c = |u: &[f64]| space.local_coeffs(k, u);
            let (ci, cth, cvt, cd, cdiff) = (c(&ui), c(&u_th), c(&u_vt), c(&du), c(&diff));
            let mut r = [0.0f64; 6];
            for qp in element_qps(space, k, &rule) {
                let x = qp.x;
                let (vv, gv) = (qp.basis.value(&cv), qp.basis.gradient(&cv));
                let val = |cc: &[f64; 6]| (qp.basis.value(cc), qp.basis.gradient(cc));
                let n_exact = |u: f64| p.nu * p.phi.eval(u) * p.g.value(x, t) + p.source.value(x, t);
                let n_blend =
                    |u: f64| p.nu * p.phi.eval(u) * bv.scalar(p.g.as_ref(), x) + bv.scalar(p.source.as_ref(), x);
                let (a_t, b_t) = (p.a.value(x, t), p.b.value(x, t));
                let (a_b, b_b) = (bt.vector(&p.a, x), bt.scalar(p.b.as_ref(), x));
                let form = |u: f64, g: [f64; 2], a: [f64; 2], b: f64| {
                    p.epsilon * (g[0] * gv[0] + g[1] * gv[1]) + (a[0] * g[0] + a[1] * g[1]) * vv + b * u * vv
                };
                let (u_i, g_i) = val(&ci);
                let (u_t, g_t) = val(&cth);
                let (u_v, _) = val(&cvt);
                let (dt, _) = val(&cd);
                let (u_e, g_e) = val(&cdiff);
                let w = qp.w;
                // R, R_τ,lin, R_τ,nonlin, R_h, R_D
                r[0] += w * ((n_exact(u_i) - dt) * vv - form(u_i, g_i, a_t, b_t));
                r[1] += w * form(u_e, g_e, a_b, b_b);
                r[2] += w * (n_blend(u_i) - n_blend(u_v)) * vv;
                r[3] += w * ((n_blend(u_v) - dt) * vv - form(u_t, g_t, a_b, b_b));
                r[4] += w * ((n_exact(u_i) - n_blend(u_i)) * vv - form(u_i, g_i, a_t, b_t) + form(u_i, g_i, a_b, b_b));
                // R_τ from its own definition
                r[5] += w * ((n_blend(u_i) - n_blend(u_v)) * vv + form(u_e, g_e, a_b, b_b));
            }
            r
        });
        let mut r = [0.0f64; 6];
        for x in &terms {
            for i in 0..6 {
                r[i] += x[i];
            }
        }
        let [full, lin, nonlin, h, d, r_tau] = r;
        out.max_discrepancy = out.max_discrepancy.max((full - r_tau - h - d).abs());
        out.split_discrepancy = out.split_discrepancy.max((r_tau - lin - nonlin).abs());
        out.max_term = out.max_term.max(full.abs()).max(r_tau.abs()).max(h.abs()).max(d.abs());
        out.max_nonlinear = out.max_nonlinear.max(nonlin.abs());
        out.max_data = out.max_data.max(d.abs());
    }
    out.relative = if out.max_term > 0.0 {
        out.max_discrepancy / out.max_term
    } else {
        0.0
    };
    Ok(out)
}

/// Estimator over error; `0/0 = 1`, `x/0 = ∞`.
pub fn effectivity(estimator: f64, error: f64) -> f64 {
    match (estimator == 0.0, error == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => estimator / error,
    }
}

pub fn report_effectivity(report: &EstimatorReport, errors: &ErrorReport) -> f64 {
    effectivity(report.totals.upper, errors.x_norm)
}

/// Discrete Friedrichs constant `√μ_max` of `M v = μ K v` by power
/// iteration on `K^{−1} M`.
pub fn friedrichs_eig(space: &FeSpace) -> Result<f64> {
    let fixed = space.dirichlet();
    let k = stiffness_matrix(space).eliminate(fixed);
    let m = mass_matrix(space).restrict_zero(fixed, fixed);
    let solver = LinearSolver::new(&k, &SolverOptions::default())?;
    let mut v: Vec<f64> = space.dof_points().iter().map(|x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).collect();
    space.zero_dirichlet(&mut v);
    let mut mu = 0.0;
    for _ in 0..500 {
        let w = solver.solve(&m.matvec(&v))?;
        // Rayleigh quotient in the K inner product
        let next = k.inner(&w, &v) / k.inner(&v, &v);
        let s = k.inner(&w, &w).sqrt();
        if s == 0.0 {
            return Err(Error::Solver("trivial Friedrichs iterate".into()));
        }
        v = w.iter().map(|x| x / s).collect();
        if (next - mu).abs() <= 1e-13 * next {
            return Ok(next.sqrt());
        }
        mu = next;
    }
    Err(Error::EigenDiverged(500))
}

/// Step count for level `n` of a convergence study: `τ ∝ h²` for
/// `θ = 1`, `τ ∝ h` otherwise.
pub fn study_steps(n: usize, theta: f64) -> usize {
    let l = (n / 4).max(1);
    if theta == 1.0 {
        2 * l * l
    } else {
        2 * l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub level: usize,
    pub n: usize,
    pub h_max: f64,
    pub tau: f64,
    pub err_sup_l2: f64,
    pub err_energy: f64,
    pub err_dual: f64,
    pub err_x: f64,
    pub estimator: f64,
    pub effectivity: f64,
    pub rate_energy: Option<f64>,
    pub rate_x: Option<f64>,
}

pub struct StudyOptions {
    pub errors: ErrorOptions,
    pub friedrichs: FriedrichsChoice,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            errors: ErrorOptions::default(),
            friedrichs: FriedrichsChoice::Diameter,
        }
    }
}

/// Runs the case on `unit_square(n)` for each `n` with the step counts of
/// `study_steps`.
pub fn convergence_study(case: &ManufacturedCase, ns: &[usize], opts: &StudyOptions) -> Result<Vec<StudyRow>> {
    let scheme = case.scheme();
    let mut rows: Vec<StudyRow> = Vec::with_capacity(ns.len());
    for (level, &n) in ns.iter().enumerate() {
        let mesh = TriMesh::unit_square(n)?;
        let steps = study_steps(n, case.params.theta);
        let times = TimePartition::uniform(case.problem.t_final, steps)?;
        let traj = run(&scheme, &mesh, &times)?;
        let err = true_errors(&traj, case, opts.errors)?;
        let rep = Estimator::new(&scheme, &traj, opts.friedrichs).estimate(&traj)?;
        let h_max = mesh.metrics().h_max;
        let rate = |now: f64, before: f64, h_before: f64| (before / now).ln() / (h_before / h_max).ln();
        let prev = rows.last();
        rows.push(StudyRow {
            level,
            n,
            h_max,
            tau: times.tau(1),
            err_sup_l2: err.sup_l2,
            err_energy: err.energy,
            err_dual: err.dual,
            err_x: err.x_norm,
            estimator: rep.totals.upper,
            effectivity: report_effectivity(&rep, &err),
            rate_energy: prev.map(|r| rate(err.energy, r.err_energy, r.h_max)),
            rate_x: prev.map(|r| rate(err.x_norm, r.err_x, r.h_max)),
        });
    }
    Ok(rows)
}

pub const STUDY_COLUMNS: &str =
    "level,h_max,tau,err_supL2,err_energy,err_dual,err_X,estimator,effectivity,rate_energy,rate_X";

pub fn study_csv(rows: &[StudyRow]) -> String {
    let opt = |r: Option<f64>| r.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut s = String::from(STUDY_COLUMNS);
    s.push('\n');
    for r in rows {
        s += &format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}\n",
            r.level,
            r.h_max,
            r.tau,
            r.err_sup_l2,
            r.err_energy,
            r.err_dual,
            r.err_x,
            r.estimator,
            r.effectivity,
            opt(r.rate_energy),
            opt(r.rate_x)
        );
    }
    s
}
